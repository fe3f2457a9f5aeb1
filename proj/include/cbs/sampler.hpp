#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cbs/lexicon.hpp"
#include "cbs/models.hpp"

namespace cbs {

/// Word-piece embedding rows aligned with a vocabulary, plus the data the
/// similarity fast path needs. Pieces missing from the table get a zero row.
class SemanticContext {
 public:
  SemanticContext(const WordPieceVocab& vocab, const EmbeddingTable& wp_table, StopwordSet stopwords);

  std::size_t dimension() const { return dim_; }
  std::size_t vocab_size() const { return stop_piece_.size(); }
  std::span<const double> row(TokenId z) const {
    return {matrix_.data() + static_cast<std::size_t>(z) * dim_, dim_};
  }
  /// A non-continuation piece that is itself a stopword.
  bool is_stop_piece(TokenId z) const { return stop_piece_[static_cast<std::size_t>(z)]; }
  const StopwordSet& stopwords() const { return stop_; }
  TokenId mask_id() const { return mask_; }

  /// Sum of E'(piece) over positions >= begin that are not masked and whose
  /// enclosing word is not a stopword.
  Vector representation(const TokenSequence& seq, std::size_t begin = 0) const;

  // Per-target cache for the fast path.
  struct Projection {
    Vector target;
    double target_norm = 0.0;
    Vector dot_target;  // E'z . t
  };
  Projection project(Vector target) const;
  double row_norm_sq(TokenId z) const { return norm_sq_[static_cast<std::size_t>(z)]; }

 private:
  std::size_t dim_ = 0;
  std::vector<double> matrix_;
  std::vector<double> norm_sq_;
  std::vector<bool> stop_piece_;
  StopwordSet stop_;
  TokenId mask_ = -1;
};

struct EnforcingConfig {
  double sigma = 0.95;
  double kappa = 1000.0;
  std::shared_ptr<const SemanticContext> context;
  /// R(x) over the sampled region of the original sequence.
  Vector target;
  /// Positions before this index (e.g. a premise prefix) never enter c.
  std::size_t region_begin = 0;

  void validate() const;
};

/// cos(c + E'[z], target) for every vocabulary entry z when `position` (which
/// must hold the mask id, like every other masked position) is filled with z.
/// Stopword pieces contribute a zero vector.
Vector candidate_similarities(const TokenSequence& seq, std::size_t position, const EnforcingConfig& cfg);

/// Same, against a precomputed projection; used inside chains.
Vector candidate_similarities(const TokenSequence& seq, std::size_t position, const SemanticContext& context,
                              const SemanticContext::Projection& projection, std::size_t region_begin = 0);

/// exp(-kappa * max(0, sigma - s)) per entry.
Vector enforcing_distribution(std::span<const double> similarities, double sigma, double kappa);
/// -kappa * max(0, sigma - s) per entry; never underflows.
Vector enforcing_log_weights(std::span<const double> similarities, double sigma, double kappa);

/// softmax(lm_logrow + log_weights) with entries flagged in `excluded` set to
/// zero. Throws std::logic_error when no mass is left.
Vector proposal_from_log_weights(std::span<const double> lm_logrow, std::span<const double> log_weights,
                                 const std::vector<bool>& excluded);
Vector proposal_distribution(std::span<const double> lm_logrow, std::span<const double> enforce_weights,
                             const std::vector<bool>& excluded);

/// An entity phrase as surface words.
using EntityPhrase = std::vector<std::string>;

/// Normalizes raw phrases through the tokenizer so they compare against
/// detokenized sequences; phrases not present in `seed` are dropped.
std::vector<EntityPhrase> entity_phrases(const std::vector<std::string>& phrases, const TokenSequence& seed,
                                         const WordPieceVocab& vocab, const TokenizerOptions& options = {},
                                         std::size_t region_begin = 0);

/// Occurrence count of each entity among the words of seq[begin, l).
std::vector<std::size_t> entity_counts(const TokenSequence& seq, const std::vector<EntityPhrase>& entities,
                                       std::size_t begin = 0);

/// Positions inside the only remaining occurrence of some entity.
std::vector<bool> protected_positions(const TokenSequence& seq, const std::vector<EntityPhrase>& entities,
                                      std::size_t begin = 0);

struct ProposalInfo {
  std::size_t position = 0;
  TokenId old_token = 0;
  TokenId proposed = 0;
  double probability = 0.0;
  double similarity = 1.0;
};

/// Decision function h; empty means always accept.
using DecisionFunction = std::function<bool(const ProposalInfo&)>;

enum class PositionPolicy { kSweep, kRandom };

struct SamplerConfig {
  std::size_t iterations = 50;
  std::size_t block_size = 1;
  PositionPolicy policy = PositionPolicy::kSweep;
  std::size_t snapshot_every = 10;
  DecisionFunction decision;

  void validate() const;
};

struct Snapshot {
  TokenSequence tokens;
  std::size_t step = 0;
  std::size_t iteration = 0;
};

struct ChainState {
  TokenSequence current;
  std::size_t step_count = 0;
  std::vector<Snapshot> snapshots;
};

/// Everything a chain needs besides the models.
struct ChainInput {
  TokenSequence seed;
  /// Start of the sampled region; earlier positions are fixed context.
  std::size_t region_begin = 0;
  std::vector<EntityPhrase> entities;
};

/// Per-position log-weight source of the CBS loop.
class EnforcingPolicy {
 public:
  virtual ~EnforcingPolicy() = default;
  /// Log weights over the vocabulary for filling `position` of `masked`.
  /// `similarities` may be left empty.
  virtual void score(const TokenSequence& masked, std::size_t position, Vector& log_weights,
                     Vector& similarities) const = 0;
};

/// Soft semantic constraint around a fixed target representation.
class SemanticEnforcing final : public EnforcingPolicy {
 public:
  explicit SemanticEnforcing(const EnforcingConfig& config);
  void score(const TokenSequence& masked, std::size_t position, Vector& log_weights,
             Vector& similarities) const override;

 private:
  EnforcingConfig config_;
  SemanticContext::Projection projection_;
};

using UniformSource = std::function<double()>;

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(std::mt19937_64& rng);
/// Stream for chain `index` of a batch.
std::mt19937_64 chain_rng(std::uint64_t base_seed, std::uint64_t index);

/// Inverse-CDF draw; never returns a zero-probability index.
std::size_t draw_categorical(std::span<const double> probs, double u);

/// The generic CBS loop: mask, query the LM, combine with the enforcing
/// policy, draw, decide.
class CbsSampler {
 public:
  CbsSampler(const MaskedLanguageModel& mlm, const WordPieceVocab& vocab, SamplerConfig config);

  /// One blocked step over consecutive `positions`. Positions whose masking
  /// would remove the last occurrence of an entity are left untouched.
  /// Returns the number of positions actually resampled.
  std::size_t sample_step(ChainState& state, std::span<const std::size_t> positions, const ChainInput& input,
                          const EnforcingPolicy& policy, const UniformSource& uniform) const;

  ChainState run_chain(const ChainInput& input, const EnforcingPolicy& policy, std::mt19937_64& rng) const;

  const SamplerConfig& config() const { return config_; }
  const WordPieceVocab& vocab() const { return vocab_; }

 private:
  const MaskedLanguageModel& mlm_;
  const WordPieceVocab& vocab_;
  SamplerConfig config_;
  std::vector<bool> excluded_;
};

/// The CBS instance used for attacks: semantic enforcing with always-accept.
class RewritingSampler {
 public:
  RewritingSampler(const MaskedLanguageModel& mlm, const WordPieceVocab& vocab,
                   std::shared_ptr<const SemanticContext> context, SamplerConfig config, double kappa);

  ChainState rewrite(const ChainInput& input, double sigma, std::mt19937_64& rng) const;
  EnforcingConfig enforcing_for(const ChainInput& input, double sigma) const;
  const CbsSampler& core() const { return core_; }

 private:
  CbsSampler core_;
  std::shared_ptr<const SemanticContext> context_;
  double kappa_;
};

/// Chain i draws from chain_rng(base_seed, i); `threads` = 1 runs
/// sequentially, 0 uses every hardware thread. Output does not depend on it.
std::vector<ChainState> batch_sample(const RewritingSampler& sampler, std::span<const ChainInput> inputs,
                                     double sigma, std::uint64_t base_seed, std::size_t threads = 1);

}  // namespace cbs
