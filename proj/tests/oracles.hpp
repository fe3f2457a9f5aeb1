#pragma once

// Direct recomputations used to check the library's fast paths.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbs/lexicon.hpp"
#include "cbs/record.hpp"

namespace cbs::oracle {

// Cosine from scratch with the zero-vector conventions.
inline double cosine(const Vector& a, const Vector& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 && nb == 0) return 1.0;
  if (na == 0 || nb == 0) return 0.0;
  return dot / std::sqrt(na * nb);
}

// Fill `pos` with each candidate in turn and sum E'(piece) over the region.
// A piece counts when it is not masked and its surface word (read with the
// masks in place) is not a stopword; the filled piece counts unless it is a
// stopword on its own.
inline Vector naive_similarities(const std::vector<std::string>& pieces, std::size_t pos,
                                 const WordPieceVocab& vocab, const EmbeddingTable& wp, const StopwordSet& stop,
                                 const Vector& target, std::size_t begin) {
  const std::string mask(WordPieceVocab::kMask);
  auto is_cont = [](const std::string& p) { return p.size() > 2 && p.compare(0, 2, "##") == 0; };
  // word index and surface text per position
  std::vector<std::size_t> word_of(pieces.size());
  std::vector<std::string> words;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (i == 0 || !is_cont(pieces[i])) {
      words.push_back(pieces[i]);
    } else {
      words.back() += pieces[i].substr(2);
    }
    word_of[i] = words.size() - 1;
  }
  const std::size_t d = wp.dimension();
  auto vec = [&](const std::string& piece) {
    Vector v(d, 0.0);
    if (piece == "<unk>" || piece == "<mask>" || piece == "<pad>") return v;
    if (auto r = wp.lookup(piece)) v.assign(r->begin(), r->end());
    return v;
  };
  Vector out(vocab.size());
  for (std::size_t z = 0; z < vocab.size(); ++z) {
    const std::string& cand = vocab.piece(static_cast<TokenId>(z));
    Vector sum(d, 0.0);
    for (std::size_t i = begin; i < pieces.size(); ++i) {
      Vector v;
      if (i == pos) {
        const bool special = vocab.is_special(static_cast<TokenId>(z));
        if (!special && !is_cont(cand) && stop.contains(cand)) continue;
        v = vec(cand);
      } else {
        if (pieces[i] == mask) continue;
        if (stop.contains(words[word_of[i]])) continue;
        v = vec(pieces[i]);
      }
      for (std::size_t k = 0; k < d; ++k) sum[k] += v[k];
    }
    out[z] = cosine(sum, target);
  }
  return out;
}

// Pearson statistic of observed counts against expected probabilities.
inline double chi_square(const std::vector<double>& observed, const std::vector<double>& probs) {
  double n = 0;
  for (double o : observed) n += o;
  double stat = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double e = n * probs[i];
    stat += (observed[i] - e) * (observed[i] - e) / e;
  }
  return stat;
}

inline double change_rate(const std::vector<TokenId>& x, const std::vector<TokenId>& u) {
  std::size_t diff = 0;
  for (std::size_t i = 0; i < x.size(); ++i) diff += x[i] != u[i] ? 1 : 0;
  return x.empty() ? 0.0 : double(diff) / double(x.size());
}

struct SetupTotals {
  std::optional<double> after_attack;
  std::size_t successes = 0;
  std::optional<double> mean_change_rate;
  std::optional<double> mean_ppl;
  std::optional<double> mean_similarity;
};

// Brute force summary for one (lambda, epsilon) setup, errors counted as
// failed attacks. A candidate "wins" when it flips and both scores pass;
// the reported one is the winner with the highest similarity.
inline SetupTotals setup_totals(const std::vector<AttackRecord>& records, double lambda, double epsilon) {
  SetupTotals t;
  std::size_t correct = 0;
  double cr = 0, ppl = 0, sim = 0;
  for (const auto& r : records) {
    if (r.clean_prediction != r.label) continue;
    ++correct;
    const Candidate* best = nullptr;
    for (const auto& c : r.candidates) {
      const bool win = c.predicted != r.label && c.ppl_ratio && c.similarity && *c.ppl_ratio <= lambda &&
                       *c.similarity >= epsilon;
      if (win && (best == nullptr || *c.similarity > *best->similarity)) best = &c;
    }
    if (best == nullptr) continue;
    ++t.successes;
    cr += best->change_rate;
    ppl += *best->ppl_ratio;
    sim += *best->similarity;
  }
  if (!records.empty()) t.after_attack = double(correct - t.successes) / double(records.size());
  if (t.successes > 0) {
    t.mean_change_rate = cr / double(t.successes);
    t.mean_ppl = ppl / double(t.successes);
    t.mean_similarity = sim / double(t.successes);
  }
  return t;
}

}  // namespace cbs::oracle
