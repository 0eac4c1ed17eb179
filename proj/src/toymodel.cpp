#include "attnlab/toymodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <thread>

#include "attnlab/error.hpp"
#include "attnlab/io.hpp"
#include "attnlab/rng.hpp"

namespace attnlab {

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

constexpr std::size_t kBlock = 8;

// y[rows x n] += a[rows x m] * w[m x n], where a(i, k) = a[i * a_row + k * a_col].
// Each output block stays in registers across the k loop; the summation order
// over k matches the naive triple loop.
void gemm_acc(const double* __restrict a, std::size_t a_row, std::size_t a_col, const double* __restrict w,
              double* __restrict y, std::size_t rows, std::size_t m, std::size_t n) {
  const std::size_t full = n - n % kBlock;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* ai = a + i * a_row;
    double* __restrict yi = y + i * n;
    for (std::size_t j = 0; j < full; j += kBlock) {
      double acc[kBlock];
      for (std::size_t t = 0; t < kBlock; ++t) acc[t] = yi[j + t];
      for (std::size_t k = 0; k < m; ++k) {
        const double s = ai[k * a_col];
        const double* __restrict wk = w + k * n + j;
        for (std::size_t t = 0; t < kBlock; ++t) acc[t] += s * wk[t];
      }
      for (std::size_t t = 0; t < kBlock; ++t) yi[j + t] = acc[t];
    }
    for (std::size_t j = full; j < n; ++j) {
      double acc = yi[j];
      for (std::size_t k = 0; k < m; ++k) acc += ai[k * a_col] * w[k * n + j];
      yi[j] = acc;
    }
  }
}

// y[rows x n] += x[rows x m] * w[m x n]
void matmul_acc(const double* x, const double* w, double* y, std::size_t rows, std::size_t m, std::size_t n) {
  gemm_acc(x, m, 1, w, y, rows, m, n);
}

// dw += x^T dy, dx += dy w^T (dx may be null).
void matmul_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     std::size_t rows, std::size_t m, std::size_t n) {
  // dw[m x n] += x^T[m x rows] * dy[rows x n]
  gemm_acc(x, 1, m, dy, dw, m, rows, n);
  if (dx == nullptr) return;
  thread_local std::vector<double> wt;
  wt.resize(m * n);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t j = 0; j < n; ++j) wt[j * m + k] = w[k * n + j];
  }
  // dx[rows x m] += dy[rows x n] * w^T[n x m]
  gemm_acc(dy, n, 1, wt.data(), dx, rows, n, m);
}

void rmsnorm(const double* x, const double* gain, double* y, double* rms, std::size_t rows, std::size_t d) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x + i * d;
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xi[j] * xi[j];
    const double r = std::sqrt(ss / static_cast<double>(d) + kNormEps);
    rms[i] = r;
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = gain[j] * xi[j] / r;
  }
}

void rmsnorm_backward(const double* x, const double* gain, const double* rms, const double* dy, double* dx,
                      double* dgain, std::size_t rows, std::size_t d) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x + i * d;
    const double* dyi = dy + i * d;
    const double r = rms[i];
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dgain[j] += dyi[j] * xi[j] / r;
      dot += dyi[j] * gain[j] * xi[j];
    }
    const double coeff = dot / (static_cast<double>(d) * r * r * r);
    for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += dyi[j] * gain[j] / r - xi[j] * coeff;
  }
}

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

struct LayerCache {
  std::vector<double> x_in, rms1, h1, qkv, ctx, x_mid, rms2, h2, pre_act, act;
};

struct Activations {
  std::size_t seq_len = 0;
  std::vector<LayerCache> layers;
  std::vector<double> x_final, rms_final, h_final;
  ForwardResult result;
};

Activations run_forward(const ModelState& state, std::span<const Token> tokens, const TokenLayout& layout,
                        const AttentionHook& hook) {
  const ToyModelConfig& cfg = state.config;
  const ParamLayout& pl = state.layout;
  const std::size_t seq = tokens.size();
  const std::size_t d = cfg.model_dim;
  const std::size_t heads = cfg.heads_per_layer;
  const std::size_t hd = cfg.head_dim();
  const std::size_t ff = cfg.mlp_dim;
  const double* p = state.params.data();

  require(seq > 0, ErrorCode::invalid_argument, "empty input sequence");
  require(seq <= cfg.max_seq_len, ErrorCode::invalid_argument,
          "sequence length " + std::to_string(seq) + " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  require(layout.size() == seq, ErrorCode::dimension_mismatch, "token layout length differs from the sequence");

  Activations act;
  act.seq_len = seq;
  std::vector<double> x(seq * d, 0.0);
  for (std::size_t i = 0; i < seq; ++i) {
    require(tokens[i] < cfg.vocab_size, ErrorCode::invalid_argument, "token id beyond the vocabulary");
    const double* te = p + pl.token_embedding.offset + tokens[i] * d;
    const double* pe = p + pl.position_embedding.offset + i * d;
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = te[j] + pe[j];
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  act.result.capture.reserve(cfg.head_count());
  std::vector<double> row(seq);

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerParams& lp = pl.layers[l];
    LayerCache c;
    c.x_in = x;
    c.rms1.resize(seq);
    c.h1.resize(seq * d);
    rmsnorm(x.data(), p + lp.norm1.offset, c.h1.data(), c.rms1.data(), seq, d);
    c.qkv.assign(seq * 3 * d, 0.0);
    matmul_acc(c.h1.data(), p + lp.qkv.offset, c.qkv.data(), seq, d, 3 * d);

    c.ctx.assign(seq * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      AttentionRecord rec(HeadId{l, h}, seq);
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = c.qkv.data() + i * 3 * d + h * hd;
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = c.qkv.data() + j * 3 * d + d + h * hd;
          double s = 0.0;
          for (std::size_t t = 0; t < hd; ++t) s += qi[t] * kj[t];
          row[j] = s * scale;
          mx = std::max(mx, row[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j <= i; ++j) rec.at(i, j) = row[j] / sum;
      }
      if (hook) hook(rec);
      for (std::size_t i = 0; i < seq; ++i) {
        double* ci = c.ctx.data() + i * d + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const double w = rec.at(i, j);
          const double* vj = c.qkv.data() + j * 3 * d + 2 * d + h * hd;
          for (std::size_t t = 0; t < hd; ++t) ci[t] += w * vj[t];
        }
      }
      act.result.capture.push_back(std::move(rec));
    }
    matmul_acc(c.ctx.data(), p + lp.out.offset, x.data(), seq, d, d);

    c.x_mid = x;
    c.rms2.resize(seq);
    c.h2.resize(seq * d);
    rmsnorm(x.data(), p + lp.norm2.offset, c.h2.data(), c.rms2.data(), seq, d);
    c.pre_act.resize(seq * ff);
    for (std::size_t i = 0; i < seq; ++i) {
      std::copy_n(p + lp.fc1_bias.offset, ff, c.pre_act.data() + i * ff);
    }
    matmul_acc(c.h2.data(), p + lp.fc1.offset, c.pre_act.data(), seq, d, ff);
    c.act.resize(seq * ff);
    for (std::size_t i = 0; i < seq * ff; ++i) c.act[i] = gelu(c.pre_act[i]);
    for (std::size_t i = 0; i < seq; ++i) {
      const double* b2 = p + lp.fc2_bias.offset;
      for (std::size_t j = 0; j < d; ++j) x[i * d + j] += b2[j];
    }
    matmul_acc(c.act.data(), p + lp.fc2.offset, x.data(), seq, ff, d);
    act.layers.push_back(std::move(c));
  }

  act.x_final = x;
  act.rms_final.resize(seq);
  act.h_final.resize(seq * d);
  rmsnorm(x.data(), p + pl.final_norm.offset, act.h_final.data(), act.rms_final.data(), seq, d);
  act.result.seq_len = seq;
  act.result.vocab_size = cfg.vocab_size;
  act.result.logits.assign(seq * cfg.vocab_size, 0.0);
  matmul_acc(act.h_final.data(), p + pl.unembedding.offset, act.result.logits.data(), seq, d, cfg.vocab_size);
  return act;
}

// d_probs: per capture record, gradient w.r.t. the attention entries (may be empty).
void run_backward(const ModelState& state, std::span<const Token> tokens, const Activations& act,
                  const std::vector<double>& d_logits, const std::vector<std::vector<double>>& d_probs,
                  std::span<double> grad) {
  const ToyModelConfig& cfg = state.config;
  const ParamLayout& pl = state.layout;
  const std::size_t seq = act.seq_len;
  const std::size_t d = cfg.model_dim;
  const std::size_t heads = cfg.heads_per_layer;
  const std::size_t hd = cfg.head_dim();
  const std::size_t ff = cfg.mlp_dim;
  const double* p = state.params.data();
  double* g = grad.data();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> dh(seq * d, 0.0);
  matmul_backward(act.h_final.data(), p + pl.unembedding.offset, d_logits.data(), dh.data(),
                  g + pl.unembedding.offset, seq, d, cfg.vocab_size);
  std::vector<double> dx(seq * d, 0.0);
  rmsnorm_backward(act.x_final.data(), p + pl.final_norm.offset, act.rms_final.data(), dh.data(), dx.data(),
                   g + pl.final_norm.offset, seq, d);

  std::vector<double> dprob(seq * seq);
  std::vector<double> dscore(seq * seq);
  for (std::size_t l = cfg.layers; l-- > 0;) {
    const LayerParams& lp = pl.layers[l];
    const LayerCache& c = act.layers[l];

    // MLP block: x_out = x_mid + fc2(gelu(fc1(norm2(x_mid)))).
    std::vector<double> d_act(seq * ff, 0.0);
    matmul_backward(c.act.data(), p + lp.fc2.offset, dx.data(), d_act.data(), g + lp.fc2.offset, seq, ff, d);
    for (std::size_t i = 0; i < seq; ++i) {
      for (std::size_t j = 0; j < d; ++j) g[lp.fc2_bias.offset + j] += dx[i * d + j];
    }
    for (std::size_t i = 0; i < seq * ff; ++i) d_act[i] *= gelu_grad(c.pre_act[i]);
    for (std::size_t i = 0; i < seq; ++i) {
      for (std::size_t j = 0; j < ff; ++j) g[lp.fc1_bias.offset + j] += d_act[i * ff + j];
    }
    std::fill(dh.begin(), dh.end(), 0.0);
    matmul_backward(c.h2.data(), p + lp.fc1.offset, d_act.data(), dh.data(), g + lp.fc1.offset, seq, d, ff);
    rmsnorm_backward(c.x_mid.data(), p + lp.norm2.offset, c.rms2.data(), dh.data(), dx.data(),
                     g + lp.norm2.offset, seq, d);

    // Attention block: x_mid = x_in + out(attn(norm1(x_in))).
    std::vector<double> dctx(seq * d, 0.0);
    matmul_backward(c.ctx.data(), p + lp.out.offset, dx.data(), dctx.data(), g + lp.out.offset, seq, d, d);
    std::vector<double> dqkv(seq * 3 * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t rec_index = l * heads + h;
      const AttentionRecord& rec = act.result.capture[rec_index];
      const std::vector<double>* extra =
          d_probs.empty() || d_probs[rec_index].empty() ? nullptr : &d_probs[rec_index];
      for (std::size_t i = 0; i < seq; ++i) {
        const double* dci = dctx.data() + i * d + h * hd;
        double weighted = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = c.qkv.data() + j * 3 * d + 2 * d + h * hd;
          double* dvj = dqkv.data() + j * 3 * d + 2 * d + h * hd;
          const double w = rec.at(i, j);
          double dp = 0.0;
          for (std::size_t t = 0; t < hd; ++t) {
            dp += dci[t] * vj[t];
            dvj[t] += w * dci[t];
          }
          if (extra != nullptr) dp += (*extra)[i * seq + j];
          dprob[i * seq + j] = dp;
          weighted += w * dp;
        }
        for (std::size_t j = 0; j <= i; ++j) {
          dscore[i * seq + j] = rec.at(i, j) * (dprob[i * seq + j] - weighted) * scale;
        }
        const double* qi = c.qkv.data() + i * 3 * d + h * hd;
        double* dqi = dqkv.data() + i * 3 * d + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = dscore[i * seq + j];
          const double* kj = c.qkv.data() + j * 3 * d + d + h * hd;
          double* dkj = dqkv.data() + j * 3 * d + d + h * hd;
          for (std::size_t t = 0; t < hd; ++t) {
            dqi[t] += ds * kj[t];
            dkj[t] += ds * qi[t];
          }
        }
      }
    }
    std::fill(dh.begin(), dh.end(), 0.0);
    matmul_backward(c.h1.data(), p + lp.qkv.offset, dqkv.data(), dh.data(), g + lp.qkv.offset, seq, d, 3 * d);
    rmsnorm_backward(c.x_in.data(), p + lp.norm1.offset, c.rms1.data(), dh.data(), dx.data(),
                     g + lp.norm1.offset, seq, d);
  }

  for (std::size_t i = 0; i < seq; ++i) {
    double* te = g + pl.token_embedding.offset + tokens[i] * d;
    double* pe = g + pl.position_embedding.offset + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      te[j] += dx[i * d + j];
      pe[j] += dx[i * d + j];
    }
  }
}

// Cross entropy averaged over the targets; fills d_logits when requested.
double ntp_loss(const ForwardResult& fr, const std::vector<NextTokenTarget>& targets,
                std::vector<double>* d_logits, double scale) {
  if (targets.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(targets.size());
  double loss = 0.0;
  for (const auto& t : targets) {
    require(t.position < fr.seq_len && t.token < fr.vocab_size, ErrorCode::invalid_argument,
            "target outside the sequence or vocabulary");
    const auto logits = fr.logits_at(t.position);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    const double lse = mx + std::log(sum);
    loss += (lse - logits[t.token]) * inv;
    if (d_logits != nullptr) {
      double* dl = d_logits->data() + t.position * fr.vocab_size;
      for (std::size_t v = 0; v < fr.vocab_size; ++v) dl[v] += scale * inv * std::exp(logits[v] - lse);
      dl[t.token] -= scale * inv;
    }
  }
  return loss;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::size_t argmax_over(std::span<const double> logits, std::span<const Token> candidates) {
  std::size_t best = candidates.front();
  for (Token t : candidates) {
    if (logits[t] > logits[best]) best = t;
  }
  return best;
}

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::is_same_v<T, double>) {
    put(out, std::bit_cast<std::uint64_t>(value));
  } else {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
    }
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(get<std::uint64_t>());
    } else {
      require(pos_ + sizeof(T) <= bytes_.size(), ErrorCode::io, "checkpoint truncated");
      std::uint64_t v = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
      }
      pos_ += sizeof(T);
      return static_cast<T>(v);
    }
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

constexpr char kCheckpointMagic[8] = {'A', 'T', 'N', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void ToyModelConfig::validate() const {
  require(layers > 0 && heads_per_layer > 0 && model_dim > 0 && mlp_dim > 0, ErrorCode::config,
          "model dimensions must be positive");
  require(model_dim % heads_per_layer == 0, ErrorCode::config,
          "model_dim " + std::to_string(model_dim) + " is not divisible by heads_per_layer " +
              std::to_string(heads_per_layer));
  require(vocab_size > 0 && max_bins > 0 && max_seq_len > 0, ErrorCode::config,
          "vocab_size, max_bins and max_seq_len must be positive");
}

ParamLayout ParamLayout::build(const ToyModelConfig& cfg) {
  ParamLayout pl;
  std::size_t offset = 0;
  auto tensor = [&](std::string name, std::size_t rows, std::size_t cols) {
    ParamTensor t{std::move(name), offset, rows, cols};
    offset += rows * cols;
    return t;
  };
  const std::size_t d = cfg.model_dim;
  pl.token_embedding = tensor("token_embedding", cfg.vocab_size, d);
  pl.position_embedding = tensor("position_embedding", cfg.max_seq_len, d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    LayerParams lp;
    lp.norm1 = tensor(prefix + "norm1", 1, d);
    lp.qkv = tensor(prefix + "qkv", d, 3 * d);
    lp.out = tensor(prefix + "out", d, d);
    lp.norm2 = tensor(prefix + "norm2", 1, d);
    lp.fc1 = tensor(prefix + "fc1", d, cfg.mlp_dim);
    lp.fc1_bias = tensor(prefix + "fc1_bias", 1, cfg.mlp_dim);
    lp.fc2 = tensor(prefix + "fc2", cfg.mlp_dim, d);
    lp.fc2_bias = tensor(prefix + "fc2_bias", 1, d);
    pl.layers.push_back(std::move(lp));
  }
  pl.final_norm = tensor("final_norm", 1, d);
  pl.unembedding = tensor("unembedding", d, cfg.vocab_size);
  pl.total = offset;
  return pl;
}

std::vector<ParamTensor> ParamLayout::tensors() const {
  std::vector<ParamTensor> out{token_embedding, position_embedding};
  for (const auto& lp : layers) {
    for (const auto* t : {&lp.norm1, &lp.qkv, &lp.out, &lp.norm2, &lp.fc1, &lp.fc1_bias, &lp.fc2, &lp.fc2_bias}) {
      out.push_back(*t);
    }
  }
  out.push_back(final_norm);
  out.push_back(unembedding);
  return out;
}

ModelState init_model(const ToyModelConfig& config) {
  config.validate();
  ModelState state;
  state.config = config;
  state.layout = ParamLayout::build(config);
  state.params.assign(state.layout.total, 0.0);
  state.rng_state = derive_seed(config.seed, "batches");

  Rng rng(derive_seed(config.seed, "model_init"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.model_dim));
  for (const ParamTensor& t : state.layout.tensors()) {
    const bool is_norm = t.name.find("norm") != std::string::npos;
    const bool is_bias = t.name.find("bias") != std::string::npos;
    for (std::size_t i = 0; i < t.size(); ++i) {
      double v = 0.0;
      if (is_norm) {
        v = 1.0;
      } else if (!is_bias) {
        v = rng.uniform(-bound, bound);
      }
      state.params[t.offset + i] = v;
    }
  }
  return state;
}

ForwardResult forward(const ModelState& state, std::span<const Token> tokens, const TokenLayout& layout,
                      const AttentionHook& hook) {
  return std::move(run_forward(state, tokens, layout, hook).result);
}

LossBreakdown sequence_loss(const ModelState& state, const Sequence& seq, const TcasConfig& tcas) {
  const ForwardResult fr = forward(state, seq.tokens, seq.layout);
  LossBreakdown out;
  out.ntp = ntp_loss(fr, seq.targets, nullptr, 1.0);
  TcasResult tr = tcas_loss(fr.capture, seq.layout, tcas);
  out.tcas = tr.loss;
  out.diagnostics = std::move(tr.diagnostics);
  out.total = combined_loss(out.ntp, out.tcas, tcas.weight);
  return out;
}

LossBreakdown sequence_loss_and_grad(const ModelState& state, const Sequence& seq, const TcasConfig& tcas,
                                     std::span<double> grad, double scale) {
  require(grad.size() == state.params.size(), ErrorCode::dimension_mismatch, "gradient buffer size");
  Activations act = run_forward(state, seq.tokens, seq.layout, {});
  const ForwardResult& fr = act.result;

  LossBreakdown out;
  std::vector<double> d_logits(fr.logits.size(), 0.0);
  out.ntp = ntp_loss(fr, seq.targets, &d_logits, scale);

  TcasResult tr = tcas_loss(fr.capture, seq.layout, tcas);
  out.tcas = tr.loss;
  out.total = combined_loss(out.ntp, out.tcas, tcas.weight);

  std::vector<std::vector<double>> d_probs;
  if (tcas.weight > 0.0 && tr.diagnostics.total_valid > 0) {
    d_probs = tcas_grad(fr.capture, seq.layout, tr);
    const double w = tcas.weight * scale;
    for (auto& g : d_probs) {
      for (double& v : g) v *= w;
    }
  }
  out.diagnostics = std::move(tr.diagnostics);
  run_backward(state, seq.tokens, act, d_logits, d_probs, grad);
  return out;
}

std::vector<double> batch_gradient(const ModelState& state, std::span<const Sequence> batch,
                                   const TcasConfig& tcas, TrainStepReport* report) {
  require(!batch.empty(), ErrorCode::invalid_argument, "empty training batch");
  std::vector<double> grad(state.params.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  TrainStepReport r;
  for (const Sequence& seq : batch) {
    const LossBreakdown lb = sequence_loss_and_grad(state, seq, tcas, grad, inv);
    r.ntp_loss += lb.ntp * inv;
    r.tcas_loss += lb.tcas * inv;
    r.valid_tokens += lb.diagnostics.total_valid;
    r.active_terms += lb.diagnostics.active_terms;
  }
  r.total_loss = combined_loss(r.ntp_loss, r.tcas_loss, tcas.weight);
  double sq = 0.0;
  for (double v : grad) sq += v * v;
  r.grad_norm = std::sqrt(sq);
  if (report != nullptr) *report = r;
  return grad;
}

TrainStepReport train_step(ModelState& state, OptimizerState& optimizer, std::span<const Sequence> batch,
                           const TcasConfig& tcas, const OptimizerConfig& opt) {
  TrainStepReport report;
  const std::vector<double> grad = batch_gradient(state, batch, tcas, &report);
  if (!std::isfinite(report.total_loss) || !all_finite(grad)) {
    fail(ErrorCode::numerical, "non-finite loss or gradient at step " + std::to_string(state.step) +
                                   "; update rejected");
  }

  const std::size_t n = state.params.size();
  if (opt.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < n; ++i) state.params[i] -= opt.learning_rate * grad[i];
  } else {
    if (optimizer.first_moment.size() != n) {
      optimizer.first_moment.assign(n, 0.0);
      optimizer.second_moment.assign(n, 0.0);
      optimizer.steps = 0;
    }
    ++optimizer.steps;
    const double t = static_cast<double>(optimizer.steps);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
      double& m = optimizer.first_moment[i];
      double& v = optimizer.second_moment[i];
      m = opt.beta1 * m + (1.0 - opt.beta1) * grad[i];
      v = opt.beta2 * v + (1.0 - opt.beta2) * grad[i] * grad[i];
      state.params[i] -= opt.learning_rate * (m / c1) / (std::sqrt(v / c2) + opt.epsilon);
    }
  }
  ++state.step;
  return report;
}

DecodedGrounding decode_grounding(const ModelState& state, const Vocabulary& vocab, const Sequence& prompt,
                                  const AttentionHook& hook) {
  std::vector<Token> bins(vocab.num_bins());
  for (std::size_t b = 0; b < bins.size(); ++b) bins[b] = vocab.bin(b);
  std::vector<Token> all(state.config.vocab_size);
  for (std::size_t v = 0; v < all.size(); ++v) all[v] = static_cast<Token>(v);

  DecodedGrounding out;
  auto pick = [&](const ForwardResult& fr) {
    const auto logits = fr.logits_at(fr.seq_len - 1);
    const auto best = static_cast<Token>(argmax_over(logits, all));
    if (vocab.is_bin(best)) return best;
    out.non_bin_token = true;
    return static_cast<Token>(argmax_over(logits, bins));
  };

  std::vector<Token> tokens = prompt.tokens;
  const ForwardResult first = forward(state, tokens, prompt.layout, hook);
  const Token start = pick(first);

  tokens.push_back(start);
  out.layout = prompt.layout;
  out.layout.push_other();
  ForwardResult second = forward(state, tokens, out.layout, hook);
  const Token end = pick(second);

  out.start_bin = start;
  out.end_bin = end;
  if (out.end_bin < out.start_bin) {
    std::swap(out.start_bin, out.end_bin);
    out.swapped = true;
  }
  out.capture = std::move(second.capture);
  return out;
}

DecodedChoice decode_choice(const ModelState& state, const Sequence& prompt, std::span<const Token> candidates,
                            const AttentionHook& hook) {
  require(!candidates.empty(), ErrorCode::invalid_argument, "no candidate tokens");
  ForwardResult fr = forward(state, prompt.tokens, prompt.layout, hook);
  DecodedChoice out;
  out.token = static_cast<Token>(argmax_over(fr.logits_at(fr.seq_len - 1), candidates));
  out.capture = std::move(fr.capture);
  return out;
}

namespace {

std::vector<HeadId> analysis_heads(const EvalOptions& options, const Capture& capture, const TokenLayout& layout) {
  if (!options.analysis_heads.empty()) return options.analysis_heads;
  return select_top_heads(cross_modal_scores(capture, layout), options.analysis_top_heads);
}

double mean_disc(const Capture& capture, const TokenLayout& layout, const EventSpan& span,
                 const std::vector<HeadId>& heads) {
  std::vector<batch::RatioInput> inputs;
  inputs.reserve(heads.size());
  for (const auto& id : heads) inputs.push_back({&find_head(capture, id), &layout, span});
  const auto ratios = batch::discriminability_ratio(inputs);
  std::map<HeadId, double> per_head;
  for (std::size_t i = 0; i < heads.size(); ++i) per_head[heads[i]] = ratios[i];
  return discriminability_avg(per_head, heads);
}

SubsetMetrics subset_metrics(std::span<const double> ious, std::span<const double> discs) {
  return {recall_at(ious, 0.5), recall_at(ious, 0.7), mean_of(ious), mean_of(discs)};
}

}  // namespace

SubsetMetrics grounding_metrics(std::span<const Interval> predicted, std::span<const Interval> gold,
                                std::span<const double> s_disc) {
  require(predicted.size() == gold.size() && gold.size() == s_disc.size(), ErrorCode::dimension_mismatch,
          "grounding metric columns differ in length");
  std::vector<double> ious(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) ious[i] = iou(predicted[i], gold[i]);
  return subset_metrics(ious, s_disc);
}

EvalBundle evaluate(const ModelState& state, const Vocabulary& vocab, std::span<const GroundingSample> dataset,
                    const EvalOptions& options) {
  require(!dataset.empty(), ErrorCode::invalid_argument, "evaluation dataset is empty");
  const std::size_t n = dataset.size();
  EvalBundle out;
  out.samples.resize(n);

  constexpr Variant kVariants[] = {Variant::original, Variant::rephrased, Variant::shifted};
  std::vector<double> pred_start[3], pred_end[3], gold_start[3], gold_end[3], disc[3];
  std::vector<std::size_t> non_bin[3], swapped[3];
  for (int v = 0; v < 3; ++v) {
    pred_start[v].resize(n);
    pred_end[v].resize(n);
    gold_start[v].resize(n);
    gold_end[v].resize(n);
    disc[v].resize(n);
    non_bin[v].assign(n, 0);
    swapped[v].assign(n, 0);
  }
  std::vector<std::vector<double>> eoj_f1_per(n);
  std::vector<double> eoj_kl_per(n, 0.0);
  const Token yes_no[] = {vocab.yes(), vocab.no()};

  auto run_sample = [&](std::size_t s) {
    const GroundingSample& sample = dataset[s];
    out.samples[s].index = sample.index;
    for (int v = 0; v < 3; ++v) {
      const Sequence prompt = grounding_prompt(vocab, sample, kVariants[v]);
      const AttentionHook hook = options.hook ? options.hook(sample, kVariants[v], prompt) : AttentionHook{};
      const DecodedGrounding dec = decode_grounding(state, vocab, prompt, hook);
      non_bin[v][s] = dec.non_bin_token ? 1 : 0;
      swapped[v][s] = dec.swapped ? 1 : 0;
      const Interval pred = dec.interval();
      const EventSpan& gold = sample.query(kVariants[v]).gold;
      const Interval truth = to_interval(gold.start_bin, gold.end_bin);
      pred_start[v][s] = pred.start;
      pred_end[v][s] = pred.end;
      gold_start[v][s] = truth.start;
      gold_end[v][s] = truth.end;
      disc[v][s] = mean_disc(dec.capture, dec.layout, gold, analysis_heads(options, dec.capture, dec.layout));
    }

    if (options.include_eoj && !sample.eoj.empty()) {
      double kl_sum = 0.0;
      for (const EojQuestion& q : sample.eoj) {
        const Sequence prompt = eoj_prompt(vocab, sample, q);
        const DecodedChoice choice = decode_choice(state, prompt, yes_no);
        eoj_f1_per[s].push_back((choice.token == vocab.yes()) == q.answer_yes ? 1.0 : 0.0);
        const auto heads = analysis_heads(options, choice.capture, prompt.layout);
        std::vector<batch::KlInput> inputs;
        for (const auto& id : heads) inputs.push_back({&find_head(choice.capture, id), &prompt.layout, 0, 1});
        kl_sum += mean_of(batch::kl_discriminability(inputs));
      }
      eoj_kl_per[s] = kl_sum / static_cast<double>(sample.eoj.size());
    }
  };

  const std::size_t workers = std::min(std::max<std::size_t>(options.threads, 1), n);
  if (workers == 1) {
    for (std::size_t s = 0; s < n; ++s) run_sample(s);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t s = w; s < n; s += workers) run_sample(s);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<double> eoj_f1;
  std::vector<std::size_t> eoj_offsets{0};
  std::vector<std::size_t> eoj_owner;
  std::vector<double> eoj_kl_values;
  for (std::size_t s = 0; s < n; ++s) {
    for (int v = 0; v < 3; ++v) {
      out.non_bin_decodes += non_bin[v][s];
      out.swapped_decodes += swapped[v][s];
    }
    if (eoj_f1_per[s].empty()) continue;
    eoj_f1.insert(eoj_f1.end(), eoj_f1_per[s].begin(), eoj_f1_per[s].end());
    eoj_offsets.push_back(eoj_f1.size());
    eoj_owner.push_back(s);
    eoj_kl_values.push_back(eoj_kl_per[s]);
  }

  std::vector<double> ious[3];
  for (int v = 0; v < 3; ++v) ious[v] = batch::iou(pred_start[v], pred_end[v], gold_start[v], gold_end[v]);
  const auto c_rg = batch::consistency_product(ious[0], ious[1]);
  const auto c_sg = batch::consistency_product(ious[0], ious[2]);

  out.original = subset_metrics(ious[0], disc[0]);
  out.rephrased = subset_metrics(ious[1], disc[1]);
  out.shifted = subset_metrics(ious[2], disc[2]);
  out.mean_c_rg = mean_of(c_rg);
  out.mean_c_sg = mean_of(c_sg);
  out.s_disc = out.original.s_disc;

  for (std::size_t s = 0; s < n; ++s) {
    SampleRecord& r = out.samples[s];
    r.iou_ori = ious[0][s];
    r.iou_rg = ious[1][s];
    r.iou_sg = ious[2][s];
    r.c_rg = c_rg[s];
    r.c_sg = c_sg[s];
    r.s_disc = disc[0][s];
    r.s_disc_rg = disc[1][s];
    r.s_disc_sg = disc[2][s];
  }

  if (!eoj_owner.empty()) {
    const auto eoj_scores = batch::eoj_consistency(eoj_f1, eoj_offsets);
    for (std::size_t i = 0; i < eoj_owner.size(); ++i) {
      SampleRecord& r = out.samples[eoj_owner[i]];
      r.has_eoj = true;
      r.eoj_consistency = eoj_scores[i];
      r.eoj_kl = eoj_kl_values[i];
    }
    out.eoj_samples = eoj_owner.size();
    out.eoj_consistency = mean_of(eoj_scores);
    out.eoj_kl = mean_of(eoj_kl_values);
  }
  return out;
}

std::string serialize_checkpoint(const ModelState& state) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const ToyModelConfig& c = state.config;
  for (std::uint64_t v : {std::uint64_t{c.layers}, std::uint64_t{c.heads_per_layer}, std::uint64_t{c.model_dim},
                          std::uint64_t{c.mlp_dim}, std::uint64_t{c.vocab_size}, std::uint64_t{c.max_bins},
                          std::uint64_t{c.max_seq_len}, c.seed, state.step, state.rng_state,
                          std::uint64_t{state.params.size()}}) {
    put<std::uint64_t>(out, v);
  }
  out.reserve(out.size() + 8 * state.params.size());
  for (double v : state.params) put<double>(out, v);
  return out;
}

ModelState parse_checkpoint(std::string_view bytes) {
  require(bytes.size() >= sizeof(kCheckpointMagic) &&
              std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) == 0,
          ErrorCode::io, "not a checkpoint file");
  Reader in(bytes.substr(sizeof(kCheckpointMagic)));
  const auto version = in.get<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorCode::io, "unsupported checkpoint version " + std::to_string(version));
  ToyModelConfig c;
  c.layers = in.get<std::uint64_t>();
  c.heads_per_layer = in.get<std::uint64_t>();
  c.model_dim = in.get<std::uint64_t>();
  c.mlp_dim = in.get<std::uint64_t>();
  c.vocab_size = in.get<std::uint64_t>();
  c.max_bins = in.get<std::uint64_t>();
  c.max_seq_len = in.get<std::uint64_t>();
  c.seed = in.get<std::uint64_t>();
  c.validate();
  ModelState state;
  state.config = c;
  state.layout = ParamLayout::build(c);
  state.step = in.get<std::uint64_t>();
  state.rng_state = in.get<std::uint64_t>();
  const auto count = in.get<std::uint64_t>();
  require(count == state.layout.total, ErrorCode::io, "checkpoint parameter count does not match its config");
  state.params.resize(count);
  for (double& v : state.params) v = in.get<double>();
  require(in.done(), ErrorCode::io, "trailing bytes after checkpoint parameters");
  return state;
}

void save_checkpoint(const ModelState& state, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(state));
}

ModelState load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

}  // namespace attnlab
