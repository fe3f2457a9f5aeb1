#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "cbs/lexicon.hpp"
#include "cbs/models.hpp"
#include "cbs/record.hpp"

namespace cbs {

// Sentence-level threat model: u is an admissible rewrite of x when
//   ppl(u) <= lambda * ppl(x)  and  cos(R(u), R(x)) >= epsilon,
// with R the stopword-filtered sum of word-level embeddings.

struct ThreatScores {
  double ppl_ratio = 1.0;
  double similarity = 1.0;
};

/// (lambda, epsilon) pair. lambda >= 1, epsilon in [0, 1].
struct ThreatSetup {
  double lambda = 2.0;
  double epsilon = 0.95;

  ThreatSetup() = default;
  ThreatSetup(double lambda, double epsilon);

  bool admits(const ThreatScores& scores) const {
    return scores.ppl_ratio <= lambda && scores.similarity >= epsilon;
  }
  /// "lambda:epsilon" with shortest round-trip formatting, e.g. "2:0.95".
  std::string name() const;

  /// Parses "2:0.95,5:0.90".
  static std::vector<ThreatSetup> parse_list(std::string_view spec);
};

/// Computes the two threat scores; owns nothing.
struct ThreatScorer {
  const CausalScorer* scorer = nullptr;
  const EmbeddingTable* word_table = nullptr;
  const StopwordSet* stop = nullptr;

  ThreatScores score(std::string_view original, std::string_view candidate) const;
  /// Cosine of word-level sentence representations of the two texts.
  double similarity(std::string_view original, std::string_view candidate) const;
};

struct ThreatModelConfig {
  ThreatSetup setup;
  ThreatScorer scorer;
};

struct ThreatVerdict {
  bool inside = false;
  ThreatScores scores;
};

/// ppl(u) / ppl(x). Throws std::invalid_argument on empty text.
double perplexity_ratio(std::string_view original, std::string_view candidate, const CausalScorer& scorer);

ThreatVerdict in_threat_model(std::string_view original, std::string_view candidate,
                              const ThreatModelConfig& config);

// k-word-substitution comparator.

struct WordSubConfig {
  std::size_t k = 0;
  double epsilon_word = 0.0;
  const EmbeddingTable* word_table = nullptr;
};

enum class WordSubVerdict { kInside, kOutside, kLengthMismatch };

WordSubVerdict in_word_substitution_model(std::string_view original, std::string_view candidate,
                                          const WordSubConfig& config);

/// Pluggable neural sentence encoder for similarity-based comparison.
/// No encoder ships with the toolkit.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual Vector encode(std::string_view text) const = 0;
};

/// cos(H(x), H(u)) >= epsilon; ppl_ratio in the returned scores is left at 1.
ThreatVerdict in_encoder_similarity_model(std::string_view original, std::string_view candidate,
                                          const SentenceEncoder& encoder, double epsilon);

/// Fills missing ppl_ratio / similarity on every candidate. Scores are a
/// function of the texts only, so existing values are kept.
void score_candidates(std::vector<AttackRecord>& records, const ThreatScorer& scorer);

/// Success under `setup` for one record, from cached scores. Candidates
/// without scores never count.
bool record_succeeds(const AttackRecord& record, const ThreatSetup& setup);

/// Scores candidates where needed, then marks each record successful under
/// `config.setup` iff some candidate flips the label and lies inside the
/// threat model.
std::vector<AttackRecord> filter_adversarials(std::vector<AttackRecord> records,
                                              const ThreatModelConfig& config);

}  // namespace cbs
