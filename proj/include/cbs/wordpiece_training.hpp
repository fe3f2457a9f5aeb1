#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cbs/lexicon.hpp"

namespace cbs {

enum class WordPieceInit {
  kIdenticalWord,  // piece starts at the word vector of the identical word, else zeros
  kZeros,
};

struct WordPieceTrainingConfig {
  std::size_t steps = 2000;
  std::size_t batch_words = 5000;
  /// Step size at step t is learning_rate / sqrt(t).
  double learning_rate = 0.1;
  WordPieceInit init = WordPieceInit::kIdenticalWord;
  std::uint64_t seed = 0;
  TokenizerOptions tokenizer;
};

struct WordPieceTrainingResult {
  /// One row per vocabulary piece, in vocabulary order.
  EmbeddingTable table;
  /// Full-batch L1 objective of the returned iterate, after each epoch.
  /// Entry 0 is the initialization.
  std::vector<double> epoch_objective;
  /// Objective of the raw SGD iterate at the same points.
  std::vector<double> epoch_current_objective;
  std::size_t corpus_words = 0;
  std::size_t skipped_words = 0;

  double objective_per_word() const;
};

/// Fits word-piece embeddings E' so that the sum of the piece vectors of each
/// corpus word approximates its word vector, minimizing
///   sum_w || E(w) - sum_{p in pieces(w)} E'(p) ||_1
/// by stochastic subgradient descent. Each step samples `batch_words` corpus
/// words with replacement; every touched row moves by the mean subgradient of
/// its occurrences. Subgradient steps are not monotone, so the best full-batch
/// iterate seen at an epoch boundary is the one returned.
///
/// Corpus words without a word vector are skipped.
WordPieceTrainingResult train_wordpiece_embeddings(std::span<const std::string> corpus,
                                                   const EmbeddingTable& word_table,
                                                   const WordPieceVocab& vocab,
                                                   const WordPieceTrainingConfig& config = {});

/// Full-batch objective of `pieces` (vocabulary-aligned) over `corpus`;
/// exposed for tests and reporting.
double wordpiece_objective(std::span<const std::string> corpus, const EmbeddingTable& word_table,
                           const WordPieceVocab& vocab, const EmbeddingTable& pieces,
                           const TokenizerOptions& tokenizer = {});

}  // namespace cbs
