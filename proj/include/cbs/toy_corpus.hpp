#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cbs/dataset.hpp"
#include "cbs/lexicon.hpp"
#include "cbs/wordpiece_training.hpp"

namespace cbs {

// Synthetic topic corpus for desk-scale runs. Every word vector is
//   topic * g + class_strength * e_c (class words only) + noise
// where g is a shared topic axis and e_c a per-class axis. Noise on the class
// axes is scaled down by 4. Class words
// cluster by class while whole sentences stay close in cosine terms.
struct ToyCorpusConfig {
  std::size_t classes = 2;
  std::size_t class_words = 20;   // per class
  std::size_t shared_words = 30;
  std::size_t train_per_class = 250;
  std::size_t test_per_class = 50;
  std::size_t min_length = 8;     // words
  std::size_t max_length = 14;
  std::size_t dimension = 16;
  double topic = 0.6;
  double class_strength = 0.3;
  double noise = 0.3;
  double stopword_rate = 0.2;
  double class_word_rate = 0.4;
  /// Chance that a class slot draws a word of another class.
  double contamination = 0.05;
  /// Chance that a content word carries an inflection suffix piece.
  double inflection_rate = 0.2;
  /// Chance that a content word is followed by one of its own successors,
  /// which gives the corpus local word order for the LMs to pick up.
  double coherence = 0.9;
  std::size_t successors = 2;
  std::size_t entities = 10;
  /// Chance that a sentence mentions an entity name.
  double entity_rate = 0.3;
  std::uint64_t seed = 7;
  std::size_t wordpiece_steps = 2000;
};

struct ToyCorpus {
  Dataset train;
  Dataset test;
  EmbeddingTable word_embeddings{1, EmbeddingLevel::kWord};
  EmbeddingTable wordpiece_embeddings{1, EmbeddingLevel::kWordPiece};
  std::vector<std::string> vocab;
  std::vector<std::string> stopwords;
  std::vector<std::string> entities;
  /// Final L1 fitting error of the word-piece embeddings, per corpus word.
  double wordpiece_objective = 0.0;
};

/// Deterministic in (config, stopwords). Only stopwords that are plain
/// lowercase ASCII words are used.
ToyCorpus generate_toy_corpus(const ToyCorpusConfig& config, const StopwordSet& stopwords);

/// Writes train.jsonl, test.jsonl, word_emb.txt, wp_emb.txt, vocab.txt,
/// stopwords.txt and entities.txt into `dir` (created if needed).
void write_toy_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir);

/// The stopword list shipped with the toolkit.
StopwordSet default_stopwords();

}  // namespace cbs
