#include "attnlab/synthgen.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "attnlab/error.hpp"
#include "attnlab/io.hpp"
#include "attnlab/rng.hpp"

namespace attnlab {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kPlacementAttempts = 1000;

bool overlaps(std::size_t s0, std::size_t e0, std::size_t s1, std::size_t e1) {
  return s0 <= e1 && s1 <= e0;
}

std::vector<std::size_t> paint(std::size_t num_bins, const std::vector<VideoEvent>& events) {
  std::vector<std::size_t> frames(num_bins, 0);
  for (const auto& e : events) {
    for (std::size_t b = e.start_bin; b <= e.end_bin; ++b) frames[b] = e.event_class;
  }
  return frames;
}

// Nonzero offsets that keep the queried event inside the video and clear of the others.
std::vector<std::int64_t> feasible_offsets(std::size_t num_bins, const std::vector<VideoEvent>& events) {
  const auto& q = events.front();
  std::vector<std::int64_t> out;
  const auto lo = -static_cast<std::int64_t>(q.start_bin);
  const auto hi = static_cast<std::int64_t>(num_bins - 1 - q.end_bin);
  for (std::int64_t d = lo; d <= hi; ++d) {
    if (d == 0) continue;
    const auto s = static_cast<std::size_t>(static_cast<std::int64_t>(q.start_bin) + d);
    const auto e = static_cast<std::size_t>(static_cast<std::int64_t>(q.end_bin) + d);
    bool clear = true;
    for (std::size_t i = 1; i < events.size(); ++i) {
      if (overlaps(s, e, events[i].start_bin, events[i].end_bin)) clear = false;
    }
    if (clear) out.push_back(d);
  }
  return out;
}

bool place_events(const SynthSpec& spec, Rng& rng, std::vector<VideoEvent>& events) {
  const std::size_t count = rng.uniform_int(spec.min_events, spec.max_events);
  std::vector<std::size_t> classes;
  while (classes.size() < count) {
    const std::size_t c = rng.uniform_int(1, spec.num_event_classes);
    if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
  }
  events.clear();
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = rng.uniform_int(spec.min_event_len, spec.max_event_len);
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const std::size_t start = rng.uniform_int(0, spec.num_bins - len);
      const std::size_t end = start + len - 1;
      const bool clear = std::none_of(events.begin(), events.end(), [&](const VideoEvent& e) {
        return overlaps(start, end, e.start_bin, e.end_bin);
      });
      if (clear) {
        events.push_back({static_cast<EventId>(i), classes[i], start, end});
        placed = true;
      }
    }
    if (!placed) return false;
  }
  return true;
}

std::vector<EojQuestion> make_eoj(const std::vector<VideoEvent>& events) {
  if (events.size() != 2) return {};
  // Eight equivalent phrasings: mention order x relation x class-name synonym.
  const EventId earlier = events[0].start_bin < events[1].start_bin ? events[0].id : events[1].id;
  std::vector<EojQuestion> out;
  for (std::size_t synonym = 0; synonym < 2; ++synonym) {
    for (EventId first : {EventId{0}, EventId{1}}) {
      for (bool before : {true, false}) {
        const bool first_is_earlier = first == earlier;
        out.push_back({first, static_cast<EventId>(1 - first), before, synonym, before == first_is_earlier});
      }
    }
  }
  return out;
}

void push_frames(Sequence& seq, const Vocabulary& vocab, const std::vector<std::size_t>& frames) {
  for (std::size_t b = 0; b < frames.size(); ++b) {
    seq.tokens.push_back(vocab.visual(frames[b]));
    seq.layout.push_visual(b);
  }
}

ordered_json span_json(const EventSpan& s) {
  return ordered_json{{"event", s.event}, {"start", s.start_bin}, {"end", s.end_bin}};
}

EventSpan span_from(const nlohmann::json& j) {
  return {j.at("event").get<EventId>(), j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()};
}

ordered_json query_json(const GroundingQuery& q) {
  return ordered_json{{"template", q.template_index},
                      {"synonym", q.synonym},
                      {"frames", q.frames},
                      {"gold", span_json(q.gold)}};
}

GroundingQuery query_from(const nlohmann::json& j, Variant v) {
  GroundingQuery q;
  q.variant = v;
  q.template_index = j.at("template").get<std::size_t>();
  q.synonym = j.at("synonym").get<std::size_t>();
  q.frames = j.at("frames").get<std::vector<std::size_t>>();
  q.gold = span_from(j.at("gold"));
  return q;
}

}  // namespace

const char* to_string(Variant v) noexcept {
  switch (v) {
    case Variant::original: return "original";
    case Variant::rephrased: return "rephrased";
    case Variant::shifted: return "shifted";
  }
  return "unknown";
}

void SynthSpec::validate() const {
  require(num_bins >= 2, ErrorCode::config, "synth num_bins must be >= 2");
  require(min_events >= 1 && min_events <= max_events && max_events <= 2, ErrorCode::config,
          "synth events per video must satisfy 1 <= min <= max <= 2");
  require(num_event_classes >= max_events, ErrorCode::config,
          "synth needs at least as many event classes as events per video");
  require(min_event_len >= 1 && min_event_len <= max_event_len, ErrorCode::config,
          "synth event lengths must satisfy 1 <= min <= max");
  require(max_events * max_event_len + 1 <= num_bins, ErrorCode::config,
          "synth events cannot fit: max_events * max_event_len + 1 > num_bins");
  require(templates_per_variant >= 2, ErrorCode::config, "synth needs >= 2 templates per variant");
  require(template_len >= 1, ErrorCode::config, "synth template_len must be >= 1");
  require(train_size > 0 && eval_size > 0, ErrorCode::config, "synth split sizes must be positive");
}

Vocabulary SynthSpec::vocabulary() const {
  return Vocabulary(num_bins, num_event_classes, templates_per_variant, template_len);
}

const GroundingQuery& GroundingSample::query(Variant v) const {
  switch (v) {
    case Variant::original: return original;
    case Variant::rephrased: return rephrased;
    case Variant::shifted: return shifted;
  }
  fail(ErrorCode::invalid_argument, "unknown variant");
}

const VideoEvent& GroundingSample::event(EventId id) const {
  for (const auto& e : events) {
    if (e.id == id) return e;
  }
  fail(ErrorCode::not_found, "sample has no event " + std::to_string(id));
}

GroundingSample generate_sample(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  require(index < spec.total_size(), ErrorCode::invalid_argument,
          "sample index " + std::to_string(index) + " beyond the dataset");
  Rng rng(derive_seed(derive_seed(spec.seed, "data"), index));

  GroundingSample sample;
  sample.index = index;
  std::vector<std::int64_t> offsets;
  bool ok = false;
  for (int attempt = 0; attempt < kPlacementAttempts && !ok; ++attempt) {
    if (!place_events(spec, rng, sample.events)) continue;
    // Query a random event; it becomes events[0] with id 0.
    const std::size_t queried = rng.uniform_int(0, sample.events.size() - 1);
    std::swap(sample.events[0], sample.events[queried]);
    for (std::size_t i = 0; i < sample.events.size(); ++i) sample.events[i].id = static_cast<EventId>(i);
    offsets = feasible_offsets(spec.num_bins, sample.events);
    ok = !offsets.empty();
  }
  require(ok, ErrorCode::config, "synth spec infeasible: could not place shiftable events");

  sample.frames = paint(spec.num_bins, sample.events);
  sample.shift_offset = offsets[rng.uniform_int(0, offsets.size() - 1)];

  const VideoEvent& q = sample.events.front();
  sample.original = {Variant::original, rng.uniform_int(0, spec.templates_per_variant - 1), 0,
                     sample.frames, q.span()};
  sample.rephrased = {Variant::rephrased, rng.uniform_int(0, spec.templates_per_variant - 1), 1,
                      sample.frames, q.span()};

  auto moved = sample.events;
  moved[0].start_bin = static_cast<std::size_t>(static_cast<std::int64_t>(q.start_bin) + sample.shift_offset);
  moved[0].end_bin = static_cast<std::size_t>(static_cast<std::int64_t>(q.end_bin) + sample.shift_offset);
  sample.shifted = {Variant::shifted, sample.original.template_index, 0, paint(spec.num_bins, moved),
                    moved[0].span()};

  sample.eoj = make_eoj(sample.events);
  return sample;
}

Dataset generate_dataset(const SynthSpec& spec) {
  spec.validate();
  Dataset out;
  out.spec = spec;
  out.train.reserve(spec.train_size);
  out.eval.reserve(spec.eval_size);
  for (std::size_t i = 0; i < spec.train_size; ++i) out.train.push_back(generate_sample(spec, i));
  for (std::size_t i = 0; i < spec.eval_size; ++i) out.eval.push_back(generate_sample(spec, spec.train_size + i));
  return out;
}

Sequence grounding_prompt(const Vocabulary& vocab, const GroundingSample& sample, Variant variant) {
  const GroundingQuery& q = sample.query(variant);
  const std::size_t template_variant = variant == Variant::rephrased ? 1 : 0;
  Sequence seq;
  seq.layout = TokenLayout(vocab.num_bins());
  push_frames(seq, vocab, q.frames);
  seq.tokens.push_back(vocab.ground());
  seq.layout.push_other();
  for (std::size_t j = 0; j < vocab.template_len(); ++j) {
    seq.tokens.push_back(vocab.template_word(template_variant, q.template_index, j));
    seq.layout.push_text();
  }
  seq.tokens.push_back(vocab.class_word(sample.event(q.gold.event).event_class, q.synonym));
  seq.layout.push_text(q.gold.event);
  return seq;
}

Sequence grounding_training_sequence(const Vocabulary& vocab, const GroundingSample& sample, Variant variant) {
  Sequence seq = grounding_prompt(vocab, sample, variant);
  const EventSpan& gold = sample.query(variant).gold;
  const std::size_t last = seq.size() - 1;
  seq.targets.push_back({last, vocab.bin(gold.start_bin)});
  seq.tokens.push_back(vocab.bin(gold.start_bin));
  seq.layout.push_other();
  seq.targets.push_back({last + 1, vocab.bin(gold.end_bin)});
  return seq;
}

Sequence eoj_prompt(const Vocabulary& vocab, const GroundingSample& sample, const EojQuestion& question) {
  Sequence seq;
  seq.layout = TokenLayout(vocab.num_bins());
  push_frames(seq, vocab, sample.frames);
  seq.tokens.push_back(vocab.eoj());
  seq.layout.push_other();
  seq.tokens.push_back(vocab.class_word(sample.event(question.first).event_class, question.synonym));
  seq.layout.push_text(question.first);
  seq.tokens.push_back(question.relation_before ? vocab.before() : vocab.after());
  seq.layout.push_text();
  seq.tokens.push_back(vocab.class_word(sample.event(question.second).event_class, question.synonym));
  seq.layout.push_text(question.second);
  return seq;
}

Sequence eoj_training_sequence(const Vocabulary& vocab, const GroundingSample& sample,
                               const EojQuestion& question) {
  Sequence seq = eoj_prompt(vocab, sample, question);
  seq.targets.push_back({seq.size() - 1, question.answer_yes ? vocab.yes() : vocab.no()});
  return seq;
}

std::string serialize_samples(const std::vector<GroundingSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    ordered_json events = ordered_json::array();
    for (const auto& e : s.events) {
      events.push_back({{"id", e.id}, {"class", e.event_class}, {"start", e.start_bin}, {"end", e.end_bin}});
    }
    ordered_json eoj = ordered_json::array();
    for (const auto& q : s.eoj) {
      eoj.push_back({{"first", q.first},
                     {"second", q.second},
                     {"relation", q.relation_before ? "before" : "after"},
                     {"synonym", q.synonym},
                     {"answer", q.answer_yes ? "yes" : "no"}});
    }
    ordered_json line{{"index", s.index},
                      {"frames", s.frames},
                      {"events", events},
                      {"shift_offset", s.shift_offset},
                      {"queries",
                       {{"original", query_json(s.original)},
                        {"rephrased", query_json(s.rephrased)},
                        {"shifted", query_json(s.shifted)}}},
                      {"eoj", eoj}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::vector<GroundingSample> parse_samples(const std::string& jsonl) {
  std::vector<GroundingSample> out;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      GroundingSample s;
      s.index = j.at("index").get<std::size_t>();
      s.frames = j.at("frames").get<std::vector<std::size_t>>();
      for (const auto& e : j.at("events")) {
        s.events.push_back({e.at("id").get<EventId>(), e.at("class").get<std::size_t>(),
                            e.at("start").get<std::size_t>(), e.at("end").get<std::size_t>()});
      }
      s.shift_offset = j.at("shift_offset").get<std::int64_t>();
      const auto& qs = j.at("queries");
      s.original = query_from(qs.at("original"), Variant::original);
      s.rephrased = query_from(qs.at("rephrased"), Variant::rephrased);
      s.shifted = query_from(qs.at("shifted"), Variant::shifted);
      for (const auto& q : j.at("eoj")) {
        s.eoj.push_back({q.at("first").get<EventId>(), q.at("second").get<EventId>(),
                         q.at("relation").get<std::string>() == "before", q.at("synonym").get<std::size_t>(),
                         q.at("answer").get<std::string>() == "yes"});
      }
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::invalid_argument, "dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_dataset(const Dataset& dataset, const std::string& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + directory + ": " + ec.message());
  write_file_atomic((std::filesystem::path(directory) / "train.jsonl").string(), serialize_samples(dataset.train));
  write_file_atomic((std::filesystem::path(directory) / "eval.jsonl").string(), serialize_samples(dataset.eval));
}

}  // namespace attnlab
