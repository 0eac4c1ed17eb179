#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "attnlab/attn_model.hpp"

namespace attnlab {

using Token = std::uint32_t;

// Token ids shared by the data generator and the model.
//
//   [0, bins)                     answer tokens, one per time bin
//   yes, no                       verification / ordering answers
//   ground, eoj                   task markers
//   visual(0..classes)            frame tokens, class 0 is background
//   class_word(class, synonym)    two names per event class
//   template_word(v, k, j)        query boilerplate, v = 0 original, 1 rephrased
//   before, after                 ordering relations
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::size_t num_bins, std::size_t num_classes, std::size_t templates_per_variant,
             std::size_t template_len);

  std::size_t num_bins() const noexcept { return num_bins_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return size_; }

  Token bin(std::size_t b) const;
  bool is_bin(Token t) const noexcept { return t < num_bins_; }
  Token yes() const noexcept { return static_cast<Token>(num_bins_); }
  Token no() const noexcept { return static_cast<Token>(num_bins_ + 1); }
  Token ground() const noexcept { return static_cast<Token>(num_bins_ + 2); }
  Token eoj() const noexcept { return static_cast<Token>(num_bins_ + 3); }
  Token visual(std::size_t event_class) const;
  Token class_word(std::size_t event_class, std::size_t synonym) const;
  Token template_word(std::size_t variant, std::size_t index, std::size_t position) const;
  Token before() const noexcept { return before_; }
  Token after() const noexcept { return before_ + 1; }

  std::size_t templates_per_variant() const noexcept { return templates_; }
  std::size_t template_len() const noexcept { return template_len_; }

  bool operator==(const Vocabulary&) const = default;

 private:
  std::size_t num_bins_ = 0;
  std::size_t num_classes_ = 0;
  std::size_t templates_ = 0;
  std::size_t template_len_ = 0;
  Token visual_base_ = 0;
  Token word_base_ = 0;
  Token template_base_ = 0;
  Token before_ = 0;
  std::size_t size_ = 0;
};

struct NextTokenTarget {
  std::size_t position = 0;  // logits at this position predict `token`
  Token token = 0;
};

// One model input: tokens, their roles, and the supervised next tokens.
struct Sequence {
  std::vector<Token> tokens;
  TokenLayout layout;
  std::vector<NextTokenTarget> targets;

  std::size_t size() const noexcept { return tokens.size(); }
};

}  // namespace attnlab
