#pragma once

// Seeded synthetic temporal-grounding videos. Each video is a row of frame
// classes (0 = background) holding one or two contiguous events of distinct
// classes; queries name an event class and the answer is its bin span.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "attnlab/attn_model.hpp"
#include "attnlab/sequence.hpp"

namespace attnlab {

struct SynthSpec {
  std::size_t num_bins = 16;
  std::size_t num_event_classes = 6;
  std::size_t min_events = 1;
  std::size_t max_events = 2;
  std::size_t min_event_len = 2;
  std::size_t max_event_len = 5;
  std::size_t templates_per_variant = 2;
  std::size_t template_len = 2;
  std::uint64_t seed = 7;
  std::size_t train_size = 1000;
  std::size_t eval_size = 200;

  void validate() const;
  Vocabulary vocabulary() const;
  std::size_t total_size() const noexcept { return train_size + eval_size; }

  bool operator==(const SynthSpec&) const = default;
};

enum class Variant : std::uint8_t { original, rephrased, shifted };

const char* to_string(Variant v) noexcept;

struct VideoEvent {
  EventId id = 0;
  std::size_t event_class = 0;
  std::size_t start_bin = 0;
  std::size_t end_bin = 0;

  EventSpan span() const noexcept { return {id, start_bin, end_bin}; }
  bool operator==(const VideoEvent&) const = default;
};

struct GroundingQuery {
  Variant variant = Variant::original;
  std::size_t template_index = 0;
  std::size_t synonym = 0;
  // The video this query is asked against.
  std::vector<std::size_t> frames;
  EventSpan gold;

  bool operator==(const GroundingQuery&) const = default;
};

// "Does <first> happen <before|after> <second>?"
struct EojQuestion {
  EventId first = 0;
  EventId second = 1;
  bool relation_before = true;
  std::size_t synonym = 0;
  bool answer_yes = false;

  bool operator==(const EojQuestion&) const = default;
};

struct GroundingSample {
  std::size_t index = 0;
  std::vector<std::size_t> frames;
  // events[0] is the queried event (id 0); events[1], when present, has id 1.
  std::vector<VideoEvent> events;
  std::int64_t shift_offset = 0;
  GroundingQuery original;
  GroundingQuery rephrased;
  GroundingQuery shifted;
  std::vector<EojQuestion> eoj;

  const GroundingQuery& query(Variant v) const;
  const VideoEvent& event(EventId id) const;
  bool operator==(const GroundingSample&) const = default;
};

GroundingSample generate_sample(const SynthSpec& spec, std::size_t index);

struct Dataset {
  SynthSpec spec;
  std::vector<GroundingSample> train;
  std::vector<GroundingSample> eval;
};

Dataset generate_dataset(const SynthSpec& spec);

// Visual frames, task marker and query words; no answer tokens.
Sequence grounding_prompt(const Vocabulary& vocab, const GroundingSample& sample, Variant variant);
// Prompt plus the start-bin answer token, supervised on start and end bins.
Sequence grounding_training_sequence(const Vocabulary& vocab, const GroundingSample& sample, Variant variant);

Sequence eoj_prompt(const Vocabulary& vocab, const GroundingSample& sample, const EojQuestion& question);
Sequence eoj_training_sequence(const Vocabulary& vocab, const GroundingSample& sample,
                               const EojQuestion& question);

// Line-delimited JSON, one sample per line, fixed key order.
std::string serialize_samples(const std::vector<GroundingSample>& samples);
std::vector<GroundingSample> parse_samples(const std::string& jsonl);

void write_dataset(const Dataset& dataset, const std::string& directory);

}  // namespace attnlab
