#include "cbs/threat.hpp"

#include <charconv>
#include <unordered_map>

namespace cbs {

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

Vector word_representation(std::string_view text, const EmbeddingTable& table, const StopwordSet& stop) {
  const auto words = split_whitespace(text);
  return sentence_representation(words, table, stop);
}

}  // namespace

ThreatSetup::ThreatSetup(double lambda_, double epsilon_) : lambda(lambda_), epsilon(epsilon_) {
  if (!(lambda >= 1.0)) throw std::invalid_argument("threat model lambda must be >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("threat model epsilon must lie in [0, 1]");
}

std::string ThreatSetup::name() const { return shortest(lambda) + ":" + shortest(epsilon); }

std::vector<ThreatSetup> ThreatSetup::parse_list(std::string_view spec) {
  std::vector<ThreatSetup> out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    std::size_t end = spec.find(',', start);
    if (end == std::string_view::npos) end = spec.size();
    const std::string item(spec.substr(start, end - start));
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("threat setup '" + item + "' is not lambda:epsilon");
    try {
      std::size_t used = 0;
      const double lambda = std::stod(item.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument("trailing characters");
      const std::string eps = item.substr(colon + 1);
      const double epsilon = std::stod(eps, &used);
      if (used != eps.size()) throw std::invalid_argument("trailing characters");
      out.emplace_back(lambda, epsilon);
    } catch (const std::logic_error& e) {
      throw std::invalid_argument("bad threat setup '" + item + "': " + e.what());
    }
    start = end + 1;
  }
  return out;
}

double ThreatScorer::similarity(std::string_view original, std::string_view candidate) const {
  return cosine_similarity(word_representation(candidate, *word_table, *stop),
                           word_representation(original, *word_table, *stop));
}

ThreatScores ThreatScorer::score(std::string_view original, std::string_view candidate) const {
  return {perplexity_ratio(original, candidate, *scorer), similarity(original, candidate)};
}

double perplexity_ratio(std::string_view original, std::string_view candidate, const CausalScorer& scorer) {
  if (split_whitespace(original).empty() || split_whitespace(candidate).empty()) {
    throw std::invalid_argument("perplexity_ratio needs two non-empty texts");
  }
  return scorer.perplexity(candidate) / scorer.perplexity(original);
}

ThreatVerdict in_threat_model(std::string_view original, std::string_view candidate,
                              const ThreatModelConfig& config) {
  const ThreatScores scores = config.scorer.score(original, candidate);
  return {config.setup.admits(scores), scores};
}

WordSubVerdict in_word_substitution_model(std::string_view original, std::string_view candidate,
                                          const WordSubConfig& config) {
  const auto x = split_whitespace(original);
  const auto u = split_whitespace(candidate);
  if (x.size() != u.size()) return WordSubVerdict::kLengthMismatch;
  const Vector zero(config.word_table->dimension(), 0.0);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == u[i]) continue;
    if (++changed > config.k) return WordSubVerdict::kOutside;
    const auto ex = config.word_table->lookup(x[i]);
    const auto eu = config.word_table->lookup(u[i]);
    const double cos = cosine_similarity(ex ? *ex : std::span<const double>(zero), eu ? *eu : std::span<const double>(zero));
    if (cos < config.epsilon_word) return WordSubVerdict::kOutside;
  }
  return WordSubVerdict::kInside;
}

ThreatVerdict in_encoder_similarity_model(std::string_view original, std::string_view candidate,
                                          const SentenceEncoder& encoder, double epsilon) {
  ThreatScores scores;
  scores.similarity = cosine_similarity(encoder.encode(candidate), encoder.encode(original));
  return {scores.similarity >= epsilon, scores};
}

void score_candidates(std::vector<AttackRecord>& records, const ThreatScorer& scorer) {
  for (auto& record : records) {
    std::optional<double> base_ppl;
    std::optional<Vector> base_rep;
    std::unordered_map<std::string, std::pair<double, double>> memo;
    for (auto& c : record.candidates) {
      if (c.ppl_ratio && c.similarity) continue;
      auto it = memo.find(c.text);
      if (it == memo.end()) {
        if (!base_ppl) base_ppl = scorer.scorer->perplexity(record.original);
        if (!base_rep) base_rep = word_representation(record.original, *scorer.word_table, *scorer.stop);
        const double ratio = scorer.scorer->perplexity(c.text) / *base_ppl;
        const double sim = cosine_similarity(word_representation(c.text, *scorer.word_table, *scorer.stop), *base_rep);
        it = memo.emplace(c.text, std::make_pair(ratio, sim)).first;
      }
      if (!c.ppl_ratio) c.ppl_ratio = it->second.first;
      if (!c.similarity) c.similarity = it->second.second;
    }
  }
}

bool record_succeeds(const AttackRecord& record, const ThreatSetup& setup) {
  if (record.originally_misclassified) return false;
  for (const auto& c : record.candidates) {
    if (!record.flips(c) || !c.ppl_ratio || !c.similarity) continue;
    if (setup.admits({*c.ppl_ratio, *c.similarity})) return true;
  }
  return false;
}

std::vector<AttackRecord> filter_adversarials(std::vector<AttackRecord> records, const ThreatModelConfig& config) {
  if (config.scorer.scorer != nullptr) score_candidates(records, config.scorer);
  const std::string key = config.setup.name();
  for (auto& record : records) record.success[key] = record_succeeds(record, config.setup);
  return records;
}

}  // namespace cbs
