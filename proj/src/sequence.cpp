#include "attnlab/sequence.hpp"

#include "attnlab/error.hpp"

namespace attnlab {

Vocabulary::Vocabulary(std::size_t num_bins, std::size_t num_classes, std::size_t templates_per_variant,
                       std::size_t template_len)
    : num_bins_(num_bins),
      num_classes_(num_classes),
      templates_(templates_per_variant),
      template_len_(template_len) {
  require(num_bins > 0 && num_classes > 0, ErrorCode::invalid_argument, "vocabulary needs bins and classes");
  visual_base_ = static_cast<Token>(num_bins + 4);
  word_base_ = visual_base_ + static_cast<Token>(num_classes + 1);
  template_base_ = word_base_ + static_cast<Token>(2 * num_classes);
  before_ = template_base_ + static_cast<Token>(2 * templates_per_variant * template_len);
  size_ = static_cast<std::size_t>(before_) + 2;
}

Token Vocabulary::bin(std::size_t b) const {
  require(b < num_bins_, ErrorCode::invalid_argument, "bin token out of range");
  return static_cast<Token>(b);
}

Token Vocabulary::visual(std::size_t event_class) const {
  require(event_class <= num_classes_, ErrorCode::invalid_argument, "visual class out of range");
  return visual_base_ + static_cast<Token>(event_class);
}

Token Vocabulary::class_word(std::size_t event_class, std::size_t synonym) const {
  require(event_class >= 1 && event_class <= num_classes_ && synonym < 2, ErrorCode::invalid_argument,
          "class word out of range");
  return word_base_ + static_cast<Token>((event_class - 1) * 2 + synonym);
}

Token Vocabulary::template_word(std::size_t variant, std::size_t index, std::size_t position) const {
  require(variant < 2 && index < templates_ && position < template_len_, ErrorCode::invalid_argument,
          "template word out of range");
  return template_base_ + static_cast<Token>((variant * templates_ + index) * template_len_ + position);
}

}  // namespace attnlab
