#pragma once

// A small pre-norm decoder-only transformer in double precision with a
// hand-written backward pass. Every forward pass exposes its post-softmax
// attention, and an optional hook may rewrite those rows before they are
// applied to the values (used for causal interventions).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "attnlab/attn_model.hpp"
#include "attnlab/metrics.hpp"
#include "attnlab/sequence.hpp"
#include "attnlab/synthgen.hpp"
#include "attnlab/tcas.hpp"

namespace attnlab {

struct ToyModelConfig {
  std::size_t layers = 4;
  std::size_t heads_per_layer = 16;
  std::size_t model_dim = 64;
  std::size_t mlp_dim = 256;
  std::size_t vocab_size = 0;
  std::size_t max_bins = 16;
  std::size_t max_seq_len = 32;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t head_dim() const noexcept { return model_dim / heads_per_layer; }
  std::size_t head_count() const noexcept { return layers * heads_per_layer; }

  bool operator==(const ToyModelConfig&) const = default;
};

// Location of one named tensor inside the flat parameter vector.
struct ParamTensor {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
};

struct LayerParams {
  ParamTensor norm1, qkv, out, norm2, fc1, fc1_bias, fc2, fc2_bias;
};

struct ParamLayout {
  ParamTensor token_embedding;
  ParamTensor position_embedding;
  std::vector<LayerParams> layers;
  ParamTensor final_norm;
  ParamTensor unembedding;
  std::size_t total = 0;

  static ParamLayout build(const ToyModelConfig& config);
  std::vector<ParamTensor> tensors() const;
};

struct ModelState {
  ToyModelConfig config;
  ParamLayout layout;
  std::vector<double> params;
  std::uint64_t step = 0;
  // SplitMix64 state of the training-batch stream.
  std::uint64_t rng_state = 0;

  bool operator==(const ModelState& other) const {
    return config == other.config && params == other.params && step == other.step &&
           rng_state == other.rng_state;
  }
};

// Weights uniform in [-1/sqrt(model_dim), 1/sqrt(model_dim)], norm gains 1, biases 0.
ModelState init_model(const ToyModelConfig& config);

// Called once per head with the freshly normalized attention; may rewrite rows.
using AttentionHook = std::function<void(AttentionRecord&)>;

struct ForwardResult {
  std::size_t seq_len = 0;
  std::size_t vocab_size = 0;
  std::vector<double> logits;  // seq_len x vocab_size
  Capture capture;

  std::span<const double> logits_at(std::size_t pos) const {
    return {logits.data() + pos * vocab_size, vocab_size};
  }
};

ForwardResult forward(const ModelState& state, std::span<const Token> tokens, const TokenLayout& layout,
                      const AttentionHook& hook = {});

// L_total = L_ntp + weight * L_tcas.
inline double combined_loss(double ntp, double tcas, double weight) { return ntp + weight * tcas; }

struct LossBreakdown {
  double ntp = 0.0;
  double tcas = 0.0;
  double total = 0.0;
  TcasDiagnostics diagnostics;
};

// Mean next-token cross entropy over the sequence targets plus weight * TCAS.
LossBreakdown sequence_loss(const ModelState& state, const Sequence& seq, const TcasConfig& tcas);

// Same loss with its gradient added into `grad` (scaled by `scale`).
LossBreakdown sequence_loss_and_grad(const ModelState& state, const Sequence& seq, const TcasConfig& tcas,
                                     std::span<double> grad, double scale = 1.0);

enum class OptimizerKind : std::uint8_t { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const OptimizerConfig&) const = default;
};

struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t steps = 0;
};

struct TrainStepReport {
  double ntp_loss = 0.0;
  double tcas_loss = 0.0;
  double total_loss = 0.0;
  double grad_norm = 0.0;
  std::size_t valid_tokens = 0;
  std::size_t active_terms = 0;
};

// One first-order update on the batch mean of ntp + weight * tcas. Leaves
// the state untouched and throws on a non-finite loss or gradient.
TrainStepReport train_step(ModelState& state, OptimizerState& optimizer, std::span<const Sequence> batch,
                           const TcasConfig& tcas, const OptimizerConfig& opt);

// Flat gradient of the batch-mean loss, without updating anything.
std::vector<double> batch_gradient(const ModelState& state, std::span<const Sequence> batch,
                                   const TcasConfig& tcas, TrainStepReport* report = nullptr);

struct DecodedGrounding {
  std::size_t start_bin = 0;
  std::size_t end_bin = 0;
  bool swapped = false;
  bool non_bin_token = false;
  // Capture and layout of the final decoding step (prompt + start token).
  Capture capture;
  TokenLayout layout;

  Interval interval() const { return to_interval(start_bin, end_bin); }
};

// Greedy two-token decode of [start, end]. A non-bin argmax falls back to the
// best-scoring bin token; a reversed pair is swapped.
DecodedGrounding decode_grounding(const ModelState& state, const Vocabulary& vocab, const Sequence& prompt,
                                  const AttentionHook& hook = {});

struct DecodedChoice {
  Token token = 0;
  Capture capture;
};

// Argmax restricted to `candidates` at the last prompt position.
DecodedChoice decode_choice(const ModelState& state, const Sequence& prompt, std::span<const Token> candidates,
                            const AttentionHook& hook = {});

// Builds the hook applied while decoding one prompt; empty hook = no change.
using HookFactory = std::function<AttentionHook(const GroundingSample&, Variant, const Sequence&)>;

struct EvalOptions {
  // Heads averaged into S_disc. Empty: top `analysis_top_heads` per sample by cross-modal score.
  std::vector<HeadId> analysis_heads;
  std::size_t analysis_top_heads = 32;
  bool include_eoj = true;
  HookFactory hook;
  // Samples are spread over this many threads; results do not depend on it.
  std::size_t threads = 1;
};

struct SubsetMetrics {
  double r_at_05 = 0.0;
  double r_at_07 = 0.0;
  double miou = 0.0;
  double s_disc = 0.0;
};

// R@0.5, R@0.7 and mIoU of predictions against gold spans; s_disc is the mean of `s_disc`.
SubsetMetrics grounding_metrics(std::span<const Interval> predicted, std::span<const Interval> gold,
                                std::span<const double> s_disc);

struct SampleRecord {
  std::size_t index = 0;
  double iou_ori = 0.0;
  double iou_rg = 0.0;
  double iou_sg = 0.0;
  double c_rg = 0.0;
  double c_sg = 0.0;
  double s_disc = 0.0;
  double s_disc_rg = 0.0;
  double s_disc_sg = 0.0;
  bool has_eoj = false;
  double eoj_consistency = 0.0;
  double eoj_kl = 0.0;
};

struct EvalBundle {
  SubsetMetrics original, rephrased, shifted;
  double mean_c_rg = 0.0;
  double mean_c_sg = 0.0;
  double s_disc = 0.0;
  std::size_t eoj_samples = 0;
  double eoj_consistency = 0.0;
  double eoj_kl = 0.0;
  std::size_t non_bin_decodes = 0;
  std::size_t swapped_decodes = 0;
  std::vector<SampleRecord> samples;
};

EvalBundle evaluate(const ModelState& state, const Vocabulary& vocab, std::span<const GroundingSample> dataset,
                    const EvalOptions& options = {});

// Little-endian: magic, version, config fields, step, rng state, parameter
// count, then the parameters as IEEE-754 doubles.
std::string serialize_checkpoint(const ModelState& state);
ModelState parse_checkpoint(std::string_view bytes);
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace attnlab
