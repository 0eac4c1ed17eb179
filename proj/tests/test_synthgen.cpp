#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "attnlab/error.hpp"
#include "attnlab/synthgen.hpp"
#include "checks.hpp"

using namespace attnlab;

namespace {

constexpr Variant kVariants[] = {Variant::original, Variant::rephrased, Variant::shifted};

SynthSpec small_spec() {
  SynthSpec spec;
  spec.train_size = 120;
  spec.eval_size = 40;
  return spec;
}

std::vector<Token> query_tokens(const Sequence& prompt, std::size_t num_bins) {
  return {prompt.tokens.begin() + static_cast<std::ptrdiff_t>(num_bins), prompt.tokens.end()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("samples are determined by seed and index") {
  const SynthSpec spec = small_spec();
  for (std::size_t i = 0; i < 20; ++i) CHECK(generate_sample(spec, i) == generate_sample(spec, i));

  SynthSpec other = spec;
  other.seed = spec.seed + 1;
  std::size_t differing = 0;
  for (std::size_t i = 0; i < 20; ++i) differing += generate_sample(spec, i) == generate_sample(other, i) ? 0 : 1;
  CHECK(differing > 10);

  CHECK_THROWS_AS(generate_sample(spec, spec.total_size()), Error);
}

TEST_CASE("EOJ questions exist only for two-event videos") {
  SynthSpec one = small_spec();
  one.max_events = 1;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto s = generate_sample(one, i);
    CHECK(s.events.size() == 1);
    CHECK(s.eoj.empty());
  }

  SynthSpec two = small_spec();
  two.min_events = 2;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto s = generate_sample(two, i);
    REQUIRE(s.events.size() == 2);
    CHECK(s.eoj.size() == 8);
    std::set<std::tuple<EventId, bool, std::size_t>> distinct;
    for (const auto& q : s.eoj) distinct.insert({q.first, q.relation_before, q.synonym});
    CHECK(distinct.size() == 8);
  }
}

TEST_CASE("EOJ answers follow the spans and flip under reversal") {
  SynthSpec spec = small_spec();
  spec.min_events = 2;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto s = generate_sample(spec, i);
    for (const auto& q : s.eoj) {
      CHECK(q.first != q.second);
      const bool first_earlier = s.event(q.first).start_bin < s.event(q.second).start_bin;
      CHECK(q.answer_yes == (q.relation_before == first_earlier));
      const auto reversed = std::find_if(s.eoj.begin(), s.eoj.end(), [&](const EojQuestion& r) {
        return r.first == q.second && r.second == q.first && r.relation_before == q.relation_before &&
               r.synonym == q.synonym;
      });
      REQUIRE(reversed != s.eoj.end());
      CHECK(reversed->answer_yes != q.answer_yes);
    }
  }
}

TEST_CASE("dataset splits are sized and disjoint") {
  const SynthSpec spec = small_spec();
  const Dataset d = generate_dataset(spec);
  CHECK(d.spec == spec);
  REQUIRE(d.train.size() == 120);
  REQUIRE(d.eval.size() == 40);
  std::set<std::size_t> train_idx, eval_idx;
  for (const auto& s : d.train) train_idx.insert(s.index);
  for (const auto& s : d.eval) eval_idx.insert(s.index);
  CHECK(train_idx.size() == 120);
  CHECK(eval_idx.size() == 40);
  for (std::size_t i : eval_idx) CHECK(train_idx.count(i) == 0);
  for (const auto& s : d.eval) {
    for (Variant v : kVariants) {
      CHECK(s.query(v).variant == v);
      CHECK(s.query(v).frames.size() == spec.num_bins);
    }
  }

  SynthSpec empty = spec;
  empty.eval_size = 0;
  CHECK_THROWS_AS(generate_dataset(empty), Error);
}

TEST_CASE("serialization is byte-stable and round-trips") {
  const SynthSpec spec = small_spec();
  const Dataset a = generate_dataset(spec);
  const Dataset b = generate_dataset(spec);
  const std::string train = serialize_samples(a.train);
  CHECK(train == serialize_samples(b.train));
  CHECK(serialize_samples(a.eval) == serialize_samples(b.eval));
  CHECK(std::count(train.begin(), train.end(), '\n') == 120);

  const auto back = parse_samples(train);
  CHECK(back == a.train);
  CHECK(serialize_samples(back) == train);

  CHECK_THROWS_AS(parse_samples("{\"index\": 0}\n"), Error);
  CHECK_THROWS_AS(parse_samples("not json\n"), Error);
  CHECK(parse_samples("").empty());

  const auto dir = std::filesystem::temp_directory_path() / "attnlab_synth_test";
  std::filesystem::remove_all(dir);
  write_dataset(a, dir.string());
  CHECK(slurp(dir / "train.jsonl") == train);
  CHECK(slurp(dir / "eval.jsonl") == serialize_samples(a.eval));
  std::filesystem::remove_all(dir);
}

TEST_CASE("a brute-force scan of the prompt recovers every gold span") {
  const SynthSpec spec;
  const Vocabulary vocab = spec.vocabulary();
  std::size_t checked = 0;
  for (std::size_t i = 0; i < spec.total_size(); ++i) {
    const auto s = generate_sample(spec, i);
    for (Variant v : kVariants) {
      const auto found = attnlab::testing::span_oracle(vocab, grounding_prompt(vocab, s, v));
      const EventSpan gold = s.query(v).gold;
      REQUIRE(found.has_value());
      CHECK(found->first == gold.start_bin);
      CHECK(found->second == gold.end_bin);
      ++checked;
    }
  }
  CHECK(checked == 3 * spec.total_size());
}

TEST_CASE("variants share the event and differ as intended") {
  const SynthSpec spec = small_spec();
  const Vocabulary vocab = spec.vocabulary();
  for (std::size_t i = 0; i < spec.total_size(); ++i) {
    const auto s = generate_sample(spec, i);
    const VideoEvent& q = s.events.front();
    CHECK(q.id == 0);
    CHECK(q.start_bin <= q.end_bin);
    CHECK(s.original.gold == q.span());
    CHECK(s.rephrased.gold == s.original.gold);
    CHECK(s.rephrased.frames == s.original.frames);
    CHECK(s.original.frames == s.frames);

    CHECK(s.shift_offset != 0);
    const auto shifted_start = static_cast<std::int64_t>(s.original.gold.start_bin) + s.shift_offset;
    const auto shifted_end = static_cast<std::int64_t>(s.original.gold.end_bin) + s.shift_offset;
    CHECK(static_cast<std::int64_t>(s.shifted.gold.start_bin) == shifted_start);
    CHECK(static_cast<std::int64_t>(s.shifted.gold.end_bin) == shifted_end);
    CHECK(s.shifted.gold.end_bin < spec.num_bins);
    for (std::size_t b = 0; b < spec.num_bins; ++b) {
      if (s.shifted.gold.contains(b)) CHECK(s.shifted.frames[b] == q.event_class);
      else CHECK(s.shifted.frames[b] != q.event_class);
    }

    const auto ori = grounding_prompt(vocab, s, Variant::original);
    const auto reph = grounding_prompt(vocab, s, Variant::rephrased);
    CHECK(query_tokens(ori, spec.num_bins) != query_tokens(reph, spec.num_bins));
    CHECK(ori.tokens.back() == vocab.class_word(q.event_class, 0));
    CHECK(reph.tokens.back() == vocab.class_word(q.event_class, 1));
  }
}

TEST_CASE("sequence builders lay out frames, query and answers") {
  SynthSpec spec = small_spec();
  spec.min_events = 2;
  const Vocabulary vocab = spec.vocabulary();
  const auto s = generate_sample(spec, 3);

  const Sequence prompt = grounding_prompt(vocab, s, Variant::original);
  CHECK(prompt.size() == spec.num_bins + 1 + spec.template_len + 1);
  CHECK(prompt.targets.empty());
  CHECK_NOTHROW(prompt.layout.validate());
  CHECK(prompt.layout.visual_positions().size() == spec.num_bins);
  CHECK(prompt.layout.event_positions(0) == std::vector<std::size_t>{prompt.size() - 1});
  CHECK(prompt.tokens[spec.num_bins] == vocab.ground());

  const Sequence train = grounding_training_sequence(vocab, s, Variant::shifted);
  const EventSpan gold = s.shifted.gold;
  REQUIRE(train.targets.size() == 2);
  CHECK(train.targets[0].position == prompt.size() - 1);
  CHECK(train.targets[0].token == vocab.bin(gold.start_bin));
  CHECK(train.targets[1].position == prompt.size());
  CHECK(train.targets[1].token == vocab.bin(gold.end_bin));
  CHECK(train.tokens.back() == vocab.bin(gold.start_bin));

  for (const auto& q : s.eoj) {
    const Sequence eoj = eoj_training_sequence(vocab, s, q);
    CHECK_NOTHROW(eoj.layout.validate());
    CHECK(eoj.size() == spec.num_bins + 4);
    CHECK(eoj.layout.event_positions(q.first) == std::vector<std::size_t>{spec.num_bins + 1});
    CHECK(eoj.layout.event_positions(q.second) == std::vector<std::size_t>{spec.num_bins + 3});
    CHECK(eoj.tokens[spec.num_bins + 2] == (q.relation_before ? vocab.before() : vocab.after()));
    REQUIRE(eoj.targets.size() == 1);
    CHECK(eoj.targets[0].token == (q.answer_yes ? vocab.yes() : vocab.no()));
  }
}

TEST_CASE("infeasible or malformed specs are rejected") {
  auto rejects = [](auto edit) {
    SynthSpec spec = small_spec();
    edit(spec);
    try {
      spec.validate();
      return false;
    } catch (const Error& e) {
      return e.code() == ErrorCode::config;
    }
  };
  CHECK_NOTHROW(small_spec().validate());
  CHECK(rejects([](SynthSpec& s) { s.num_bins = 1; }));
  CHECK(rejects([](SynthSpec& s) { s.max_events = 3; }));
  CHECK(rejects([](SynthSpec& s) { s.min_events = 0; }));
  CHECK(rejects([](SynthSpec& s) { s.num_event_classes = 1; }));
  CHECK(rejects([](SynthSpec& s) { s.num_bins = 10; }));
  CHECK(rejects([](SynthSpec& s) { s.min_event_len = 6; }));
  CHECK(rejects([](SynthSpec& s) { s.templates_per_variant = 1; }));
  CHECK(rejects([](SynthSpec& s) { s.template_len = 0; }));
  CHECK(rejects([](SynthSpec& s) { s.train_size = 0; }));
}
