#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cbs/lexicon.hpp"

namespace cbs {

/// Masked-LM query contract. `tokens` carries the mask id at every position
/// listed in `mask_positions`; the result holds one log-probability row over
/// the whole vocabulary per masked position, in the same order.
/// Implementations must be safe for concurrent const calls.
class MaskedLanguageModel {
 public:
  virtual ~MaskedLanguageModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<Vector> mask_logprobs(std::span<const TokenId> tokens,
                                            std::span<const std::size_t> mask_positions) const = 0;
};

/// Sentence perplexity, ppl(x) = p(x)^(-1/l).
class CausalScorer {
 public:
  virtual ~CausalScorer() = default;
  virtual double perplexity(std::string_view text) const = 0;
};

/// A single text, or a (premise, hypothesis) pair when `premise` is set.
struct ClassifierInput {
  std::string text;
  std::optional<std::string> premise;
};

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t num_classes() const = 0;
  virtual Vector predict(const ClassifierInput& input) const = 0;

  std::size_t predict_label(const ClassifierInput& input) const;
};

class EntityRecognizer {
 public:
  virtual ~EntityRecognizer() = default;
  /// Entity phrases, each occurring verbatim in `text`.
  virtual std::vector<std::string> recognize(std::string_view text) const = 0;
};

/// log(sum(exp(row))), -inf for an all -inf row.
double log_sum_exp(std::span<const double> row);

}  // namespace cbs
