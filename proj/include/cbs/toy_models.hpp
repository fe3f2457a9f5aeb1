#pragma once

#include <memory>
#include <unordered_map>

#include <json.hpp>

#include "cbs/dataset.hpp"
#include "cbs/lexicon.hpp"
#include "cbs/models.hpp"

namespace cbs {

// Count-based stand-ins for the pretrained models. They are small enough to
// train in milliseconds, deterministic, and immutable once built.

struct ToyMlmConfig {
  double smoothing = 0.1;
  double left_weight = 0.4;
  double right_weight = 0.4;
  double unigram_weight = 0.2;
};

/// Neighbor-context masked LM:
///   p(z | l, r) = wL p(z | left=l) + wR p(z | right=r) + wU p(z)
/// with add-k smoothed bigram/unigram estimates. A masked neighbor drops its
/// component to the unigram estimate; sentence edges act as a boundary
/// context. Reserved tokens get probability zero.
class ToyMaskedLm final : public MaskedLanguageModel {
 public:
  static ToyMaskedLm train(std::span<const TokenSequence> corpus, const WordPieceVocab& vocab,
                           const ToyMlmConfig& config = {}, std::vector<std::string> document_ids = {});

  std::size_t vocab_size() const override { return vocab_size_; }
  std::vector<Vector> mask_logprobs(std::span<const TokenId> tokens,
                                    std::span<const std::size_t> mask_positions) const override;

  /// Log row for explicit neighbors; nullopt means masked (backs off to
  /// unigram). Pass `boundary()` for a sentence edge.
  Vector row(std::optional<TokenId> left, std::optional<TokenId> right) const;
  TokenId boundary() const { return static_cast<TokenId>(vocab_size_); }

  double unigram_count(TokenId z) const;
  double left_count(TokenId context, TokenId z) const;   // z follows context
  double right_count(TokenId context, TokenId z) const;  // z precedes context
  std::size_t documents() const { return documents_; }
  const std::vector<std::string>& document_ids() const { return document_ids_; }
  const ToyMlmConfig& config() const { return config_; }

  bool same_counts(const ToyMaskedLm& other) const;

  nlohmann::json to_json() const;
  static ToyMaskedLm from_json(const nlohmann::json& j, const WordPieceVocab& vocab);

 private:
  using CountRow = std::unordered_map<TokenId, double>;

  ToyMaskedLm(const WordPieceVocab& vocab, ToyMlmConfig config);
  void conditional(const CountRow& counts, double total, Vector& out) const;

  ToyMlmConfig config_;
  std::size_t vocab_size_ = 0;
  std::vector<bool> special_;
  double eligible_ = 0.0;  // number of non-reserved tokens
  std::vector<double> unigram_;
  double unigram_total_ = 0.0;
  std::vector<CountRow> left_;   // indexed by context, boundary at vocab_size_
  std::vector<CountRow> right_;
  std::vector<double> left_total_;
  std::vector<double> right_total_;
  std::size_t documents_ = 0;
  std::vector<std::string> document_ids_;
};

/// Model i is trained on every example whose label differs from i. Only the
/// sampled side (the hypothesis for NLI) is used as training text.
std::vector<ToyMaskedLm> train_class_excluded_mlms(const Dataset& dataset, const WordPieceVocab& vocab,
                                                   const ToyMlmConfig& config = {},
                                                   const TokenizerOptions& tokenizer = {});

struct CausalConfig {
  double smoothing = 0.1;
  int order = 2;  // 1 = unigram, 2 = bigram
};

/// Add-k smoothed n-gram scorer over whitespace words. Unknown words map to
/// <unk>; the vocabulary is the training words plus <unk>.
class NgramScorer final : public CausalScorer {
 public:
  /// Untrained model: every conditional is uniform over `vocabulary` + <unk>.
  NgramScorer(std::vector<std::string> vocabulary, const CausalConfig& config = {});
  static NgramScorer train(std::span<const std::string> sentences, const CausalConfig& config = {});

  double perplexity(std::string_view text) const override;
  /// p(word | previous); previous == nullopt means sentence start.
  double probability(std::optional<std::string_view> previous, std::string_view word) const;
  std::size_t vocabulary_size() const { return words_.size(); }

  nlohmann::json to_json() const;
  static NgramScorer from_json(const nlohmann::json& j);

 private:
  std::size_t word_id(std::string_view w) const;

  CausalConfig config_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> unigram_;
  double unigram_total_ = 0.0;
  std::vector<std::unordered_map<std::size_t, double>> bigram_;  // context (boundary last) -> next
  std::vector<double> context_total_;
};

struct ClassifierTrainingConfig {
  std::size_t epochs = 300;
  double learning_rate = 0.5;
};

/// Multinomial logistic regression on standardized sentence representations
/// (premise and hypothesis representations concatenated for pairs).
class LogisticClassifier final : public Classifier {
 public:
  static LogisticClassifier train(const Dataset& dataset,
                                  std::shared_ptr<const EmbeddingTable> word_table,
                                  std::shared_ptr<const StopwordSet> stop,
                                  const ClassifierTrainingConfig& config = {});

  std::size_t num_classes() const override { return classes_; }
  Vector predict(const ClassifierInput& input) const override;
  Vector features(const ClassifierInput& input) const;
  bool pair_input() const { return pair_; }

  nlohmann::json to_json() const;
  static LogisticClassifier from_json(const nlohmann::json& j,
                                      std::shared_ptr<const EmbeddingTable> word_table,
                                      std::shared_ptr<const StopwordSet> stop);

 private:
  LogisticClassifier() = default;
  Vector logits(std::span<const double> standardized) const;

  std::shared_ptr<const EmbeddingTable> table_;
  std::shared_ptr<const StopwordSet> stop_;
  std::size_t classes_ = 0;
  bool pair_ = false;
  Vector mean_;
  Vector scale_;
  std::vector<Vector> weights_;  // [class][feature]
  Vector bias_;
};

/// Case-sensitive phrase lookup on whitespace-token boundaries.
class DictionaryNer final : public EntityRecognizer {
 public:
  explicit DictionaryNer(std::vector<std::string> phrases);
  static DictionaryNer load(const std::filesystem::path& path);

  std::vector<std::string> recognize(std::string_view text) const override;
  const std::vector<std::string>& phrases() const { return phrases_; }

 private:
  std::vector<std::string> phrases_;
  std::vector<std::vector<std::string>> words_;
};

/// Start indices of `phrase` as a contiguous run inside `words`.
std::vector<std::size_t> find_phrase(std::span<const std::string> words,
                                     std::span<const std::string> phrase);

}  // namespace cbs
