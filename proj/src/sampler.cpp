#include "cbs/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cbs/parallel.hpp"

namespace cbs {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool word_is_stopword(const TokenSequence& seq, const WordSpan& span, const StopwordSet& stop) {
  std::string word;
  for (std::size_t i = span.begin; i < span.end; ++i) {
    const auto& p = seq.piece(i);
    if (i > span.begin && is_continuation_piece(p)) {
      word.append(p, 2, std::string::npos);
    } else {
      word += p;
    }
  }
  return stop.contains(word);
}

std::vector<std::string> region_words(const TokenSequence& seq, std::size_t begin) {
  return join_pieces(seq.pieces().subspan(begin));
}

bool all_present(const std::vector<std::size_t>& counts) {
  return std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
}

std::vector<std::size_t> find_phrase_words(std::span<const std::string> words, std::span<const std::string> phrase) {
  std::vector<std::size_t> starts;
  if (phrase.empty() || phrase.size() > words.size()) return starts;
  for (std::size_t i = 0; i + phrase.size() <= words.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
      starts.push_back(i);
    }
  }
  return starts;
}

}  // namespace

// ---------------------------------------------------------------------------
// Similarity fast path

SemanticContext::SemanticContext(const WordPieceVocab& vocab, const EmbeddingTable& wp_table, StopwordSet stopwords)
    : dim_(wp_table.dimension()), stop_(std::move(stopwords)), mask_(vocab.mask_id()) {
  const std::size_t v = vocab.size();
  matrix_.assign(v * dim_, 0.0);
  norm_sq_.assign(v, 0.0);
  stop_piece_.assign(v, false);
  for (std::size_t z = 0; z < v; ++z) {
    const auto id = static_cast<TokenId>(z);
    const auto& piece = vocab.piece(id);
    stop_piece_[z] = !vocab.is_continuation(id) && !vocab.is_special(id) && stop_.contains(piece);
    if (vocab.is_special(id)) continue;
    auto row = wp_table.lookup(piece);
    if (!row) continue;
    std::copy(row->begin(), row->end(), matrix_.begin() + static_cast<std::ptrdiff_t>(z * dim_));
    double n = 0.0;
    for (double x : *row) n += x * x;
    norm_sq_[z] = n;
  }
}

Vector SemanticContext::representation(const TokenSequence& seq, std::size_t begin) const {
  Vector c(dim_, 0.0);
  for (const auto& span : seq.word_spans()) {
    if (span.end <= begin) continue;
    if (word_is_stopword(seq, span, stop_)) continue;
    for (std::size_t i = std::max(span.begin, begin); i < span.end; ++i) {
      const TokenId z = seq.id(i);
      if (z == mask_) continue;
      const auto r = row(z);
      for (std::size_t k = 0; k < dim_; ++k) c[k] += r[k];
    }
  }
  return c;
}

SemanticContext::Projection SemanticContext::project(Vector target) const {
  if (target.size() != dim_) throw std::invalid_argument("target representation has the wrong dimension");
  Projection p;
  p.target = std::move(target);
  double n = 0.0;
  for (double x : p.target) n += x * x;
  p.target_norm = std::sqrt(n);
  p.dot_target.assign(vocab_size(), 0.0);
  for (std::size_t z = 0; z < vocab_size(); ++z) {
    const double* r = matrix_.data() + z * dim_;
    double d = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) d += r[k] * p.target[k];
    p.dot_target[z] = d;
  }
  return p;
}

void EnforcingConfig::validate() const {
  if (!(kappa >= 0.0)) throw std::invalid_argument("kappa must be non-negative");
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw std::invalid_argument("sigma must lie in [0, 1]");
  if (!context) throw std::invalid_argument("enforcing config has no semantic context");
  if (target.size() != context->dimension()) {
    throw std::invalid_argument("target representation has the wrong dimension");
  }
}

Vector candidate_similarities(const TokenSequence& seq, std::size_t position, const EnforcingConfig& cfg) {
  cfg.validate();
  return candidate_similarities(seq, position, *cfg.context, cfg.context->project(cfg.target), cfg.region_begin);
}

Vector candidate_similarities(const TokenSequence& seq, std::size_t position, const SemanticContext& context,
                              const SemanticContext::Projection& projection, std::size_t region_begin) {
  if (position >= seq.size()) throw std::out_of_range("position outside sequence");
  if (seq.id(position) != context.mask_id()) throw std::invalid_argument("position to fill must be masked");

  const std::size_t d = context.dimension();
  const Vector c = context.representation(seq, region_begin);
  double cc = 0.0, ct = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    cc += c[k] * c[k];
    ct += c[k] * projection.target[k];
  }
  const bool target_zero = projection.target_norm == 0.0;

  const std::size_t v = context.vocab_size();
  Vector out(v);
  for (std::size_t z = 0; z < v; ++z) {
    const auto id = static_cast<TokenId>(z);
    double num = ct;
    double ns = cc;
    double scale = cc;
    if (!context.is_stop_piece(id)) {
      const auto r = context.row(id);
      double ce = 0.0;
      for (std::size_t k = 0; k < d; ++k) ce += c[k] * r[k];
      num += projection.dot_target[z];
      ns += 2.0 * ce + context.row_norm_sq(id);
      scale += context.row_norm_sq(id);
    }
    // Cancellation in the expansion leaves rounding noise where the direct
    // sum would be exactly zero.
    const bool cand_zero = ns <= 1e-14 * scale;
    if (cand_zero && target_zero) {
      out[z] = 1.0;
    } else if (cand_zero || target_zero) {
      out[z] = 0.0;
    } else {
      out[z] = std::clamp(num / (std::sqrt(ns) * projection.target_norm), -1.0, 1.0);
    }
  }
  return out;
}

Vector enforcing_log_weights(std::span<const double> similarities, double sigma, double kappa) {
  Vector out(similarities.size(), 0.0);
  if (kappa == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double gap = sigma - similarities[i];
    if (gap > 0.0) out[i] = -kappa * gap;
  }
  return out;
}

Vector enforcing_distribution(std::span<const double> similarities, double sigma, double kappa) {
  Vector out = enforcing_log_weights(similarities, sigma, kappa);
  for (double& x : out) x = x == 0.0 ? 1.0 : std::exp(x);
  return out;
}

Vector proposal_from_log_weights(std::span<const double> lm_logrow, std::span<const double> log_weights,
                                 const std::vector<bool>& excluded) {
  if (lm_logrow.size() != log_weights.size() || (!excluded.empty() && excluded.size() != lm_logrow.size())) {
    throw std::invalid_argument("proposal inputs have different lengths");
  }
  Vector out(lm_logrow.size());
  double hi = kNegInf;
  for (std::size_t z = 0; z < out.size(); ++z) {
    out[z] = (!excluded.empty() && excluded[z]) ? kNegInf : lm_logrow[z] + log_weights[z];
    if (std::isnan(out[z])) out[z] = kNegInf;
    hi = std::max(hi, out[z]);
  }
  if (hi == kNegInf) throw std::logic_error("proposal distribution has no mass");
  double total = 0.0;
  for (double& x : out) {
    x = x == kNegInf ? 0.0 : std::exp(x - hi);
    total += x;
  }
  for (double& x : out) x /= total;
  return out;
}

Vector proposal_distribution(std::span<const double> lm_logrow, std::span<const double> enforce_weights,
                             const std::vector<bool>& excluded) {
  Vector logw(enforce_weights.size());
  for (std::size_t i = 0; i < logw.size(); ++i) {
    logw[i] = enforce_weights[i] > 0.0 ? std::log(enforce_weights[i]) : kNegInf;
  }
  return proposal_from_log_weights(lm_logrow, logw, excluded);
}

// ---------------------------------------------------------------------------
// Entities

std::vector<EntityPhrase> entity_phrases(const std::vector<std::string>& phrases, const TokenSequence& seed,
                                         const WordPieceVocab& vocab, const TokenizerOptions& options,
                                         std::size_t region_begin) {
  std::vector<EntityPhrase> out;
  const auto words = region_words(seed, region_begin);
  for (const auto& phrase : phrases) {
    if (split_whitespace(phrase).empty()) continue;
    const TokenSequence t = tokenize(phrase, vocab, options);
    EntityPhrase e = join_pieces(t.pieces());
    if (std::find(out.begin(), out.end(), e) != out.end()) continue;
    if (find_phrase_words(words, e).empty()) continue;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::size_t> entity_counts(const TokenSequence& seq, const std::vector<EntityPhrase>& entities,
                                       std::size_t begin) {
  std::vector<std::size_t> counts;
  counts.reserve(entities.size());
  if (entities.empty()) return counts;
  const auto words = region_words(seq, begin);
  for (const auto& e : entities) counts.push_back(find_phrase_words(words, e).size());
  return counts;
}

std::vector<bool> protected_positions(const TokenSequence& seq, const std::vector<EntityPhrase>& entities,
                                      std::size_t begin) {
  std::vector<bool> flags(seq.size(), false);
  if (entities.empty() || begin >= seq.size()) return flags;
  const TokenSequence region = seq.slice(begin, seq.size());
  const auto& spans = region.word_spans();
  const auto words = join_pieces(region.pieces());
  for (const auto& e : entities) {
    const auto starts = find_phrase_words(words, e);
    if (starts.size() != 1) continue;
    const std::size_t w = starts.front();
    for (std::size_t i = spans[w].begin; i < spans[w + e.size() - 1].end; ++i) flags[begin + i] = true;
  }
  return flags;
}

// ---------------------------------------------------------------------------
// Sampling

void SamplerConfig::validate() const {
  if (block_size < 1) throw std::invalid_argument("block size must be at least 1");
  if (snapshot_every < 1) throw std::invalid_argument("snapshot cadence must be at least 1");
}

SemanticEnforcing::SemanticEnforcing(const EnforcingConfig& config) : config_(config) {
  config_.validate();
  projection_ = config_.context->project(config_.target);
}

void SemanticEnforcing::score(const TokenSequence& masked, std::size_t position, Vector& log_weights,
                              Vector& similarities) const {
  similarities = candidate_similarities(masked, position, *config_.context, projection_, config_.region_begin);
  log_weights = enforcing_log_weights(similarities, config_.sigma, config_.kappa);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::mt19937_64 chain_rng(std::uint64_t base_seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base_seed), static_cast<std::uint32_t>(base_seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::size_t draw_categorical(std::span<const double> probs, double u) {
  double total = 0.0;
  std::size_t last = probs.size();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) {
      total += probs[i];
      last = i;
    }
  }
  if (last == probs.size()) throw std::invalid_argument("categorical distribution has no mass");
  const double target = u * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] > 0.0)) continue;
    acc += probs[i];
    if (acc > target) return i;
  }
  return last;
}

CbsSampler::CbsSampler(const MaskedLanguageModel& mlm, const WordPieceVocab& vocab, SamplerConfig config)
    : mlm_(mlm), vocab_(vocab), config_(std::move(config)) {
  config_.validate();
  if (mlm_.vocab_size() != vocab_.size()) {
    throw std::invalid_argument("masked LM and vocabulary sizes differ");
  }
  excluded_.assign(vocab_.size(), false);
  for (std::size_t z = 0; z < vocab_.size(); ++z) excluded_[z] = vocab_.is_special(static_cast<TokenId>(z));
}

std::size_t CbsSampler::sample_step(ChainState& state, std::span<const std::size_t> positions,
                                    const ChainInput& input, const EnforcingPolicy& policy,
                                    const UniformSource& uniform) const {
  TokenSequence& seq = state.current;
  if (positions.empty()) throw std::invalid_argument("sample_step needs at least one position");
  for (std::size_t k = 0; k < positions.size(); ++k) {
    if (positions[k] < input.region_begin || positions[k] >= seq.size()) {
      throw std::out_of_range("sample position outside the sampled region");
    }
    if (k > 0 && positions[k] != positions[k - 1] + 1) {
      throw std::invalid_argument("block positions must be consecutive");
    }
  }
  const auto& entities = input.entities;
  const std::size_t begin = input.region_begin;
  const TokenId mask = vocab_.mask_id();

  seq.set_protection(protected_positions(seq, entities, begin));

  // Mask greedily, skipping positions whose masking would erase the last
  // occurrence of an entity given the masks already placed.
  TokenSequence work = seq;
  std::vector<std::size_t> masked;
  std::vector<TokenId> old;
  for (std::size_t p : positions) {
    const TokenId before = work.id(p);
    work.replace(p, mask, vocab_);
    if (!entities.empty() && !all_present(entity_counts(work, entities, begin))) {
      work.replace(p, before, vocab_);
      continue;
    }
    masked.push_back(p);
    old.push_back(before);
  }

  Vector log_weights, sims;
  std::vector<bool> excluded;
  for (std::size_t k = 0; k < masked.size(); ++k) {
    const std::size_t p = masked[k];
    const std::span<const std::size_t> still(masked.data() + k, masked.size() - k);
    const auto rows = mlm_.mask_logprobs(work.ids(), still);
    if (rows.empty() || rows.front().size() != vocab_.size()) {
      throw std::runtime_error("masked LM returned a row of the wrong size");
    }
    policy.score(work, p, log_weights, sims);

    // A continuation piece would glue onto the preceding word: never at the
    // start of the region, and not where that breaks an entity.
    bool forbid_continuation = p == begin;
    if (!forbid_continuation && !entities.empty()) {
      for (std::size_t z = 0; z < vocab_.size(); ++z) {
        const auto id = static_cast<TokenId>(z);
        if (!vocab_.is_continuation(id) || vocab_.is_special(id)) continue;
        work.replace(p, id, vocab_);
        forbid_continuation = !all_present(entity_counts(work, entities, begin));
        work.replace(p, mask, vocab_);
        break;
      }
    }
    excluded = excluded_;
    if (forbid_continuation) {
      for (std::size_t z = 0; z < vocab_.size(); ++z) {
        if (vocab_.is_continuation(static_cast<TokenId>(z))) excluded[z] = true;
      }
    }

    const Vector probs = proposal_from_log_weights(rows.front(), log_weights, excluded);
    const std::size_t z = draw_categorical(probs, uniform());
    ProposalInfo info;
    info.position = p;
    info.old_token = old[k];
    info.proposed = static_cast<TokenId>(z);
    info.probability = probs[z];
    info.similarity = sims.empty() ? 1.0 : sims[z];
    const bool accept = !config_.decision || config_.decision(info);
    work.replace(p, accept ? info.proposed : old[k], vocab_);
  }
  work.set_protection(seq.protection());
  seq = std::move(work);
  return masked.size();
}

ChainState CbsSampler::run_chain(const ChainInput& input, const EnforcingPolicy& policy,
                                 std::mt19937_64& rng) const {
  if (input.seed.empty()) throw std::invalid_argument("cannot sample from an empty sequence");
  if (input.region_begin >= input.seed.size()) throw std::invalid_argument("sampled region is empty");

  ChainState state;
  state.current = input.seed;
  if (config_.iterations == 0) {
    state.snapshots.push_back({input.seed, 0, 0});
    return state;
  }

  const std::size_t l = input.seed.size();
  const std::size_t begin = input.region_begin;
  const std::size_t len = l - begin;
  const std::size_t b = std::min(config_.block_size, len);
  const UniformSource uniform = [&rng] { return uniform01(rng); };
  std::vector<std::size_t> positions;

  auto snapshot = [&](std::size_t iteration) {
    if (!state.snapshots.empty() && state.snapshots.back().step == state.step_count) return;
    state.snapshots.push_back({state.current, state.step_count, iteration});
  };
  auto step = [&](std::size_t start, std::size_t iteration) {
    positions.clear();
    for (std::size_t p = start; p < std::min(start + b, l); ++p) positions.push_back(p);
    sample_step(state, positions, input, policy, uniform);
    ++state.step_count;
    if (state.step_count % config_.snapshot_every == 0) snapshot(iteration);
  };

  for (std::size_t it = 1; it <= config_.iterations; ++it) {
    if (config_.policy == PositionPolicy::kSweep) {
      for (std::size_t start = begin; start < l; start += b) step(start, it);
    } else {
      const std::size_t choices = len - b + 1;
      const auto offset = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(choices)),
                                   choices - 1);
      step(begin + offset, it);
    }
    snapshot(it);
  }
  return state;
}

RewritingSampler::RewritingSampler(const MaskedLanguageModel& mlm, const WordPieceVocab& vocab,
                                   std::shared_ptr<const SemanticContext> context, SamplerConfig config,
                                   double kappa)
    : core_(mlm, vocab, std::move(config)), context_(std::move(context)), kappa_(kappa) {
  if (!context_) throw std::invalid_argument("rewriting sampler needs a semantic context");
  if (context_->vocab_size() != vocab.size()) {
    throw std::invalid_argument("semantic context and vocabulary sizes differ");
  }
  if (!(kappa_ >= 0.0)) throw std::invalid_argument("kappa must be non-negative");
}

EnforcingConfig RewritingSampler::enforcing_for(const ChainInput& input, double sigma) const {
  EnforcingConfig cfg;
  cfg.sigma = sigma;
  cfg.kappa = kappa_;
  cfg.context = context_;
  cfg.target = context_->representation(input.seed, input.region_begin);
  cfg.region_begin = input.region_begin;
  return cfg;
}

ChainState RewritingSampler::rewrite(const ChainInput& input, double sigma, std::mt19937_64& rng) const {
  const SemanticEnforcing policy(enforcing_for(input, sigma));
  return core_.run_chain(input, policy, rng);
}

std::vector<ChainState> batch_sample(const RewritingSampler& sampler, std::span<const ChainInput> inputs,
                                     double sigma, std::uint64_t base_seed, std::size_t threads) {
  std::vector<ChainState> out(inputs.size());
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    auto rng = chain_rng(base_seed, i);
    out[i] = sampler.rewrite(inputs[i], sigma, rng);
  });
  return out;
}

}  // namespace cbs
