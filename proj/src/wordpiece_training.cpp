#include "cbs/wordpiece_training.hpp"

#include <cmath>
#include <random>
#include <unordered_map>

#include <spdlog/spdlog.h>

namespace cbs {

namespace {

// Distinct corpus words with their piece ids, word vector and multiplicity.
struct WordType {
  std::vector<TokenId> pieces;
  std::span<const double> target;
  double count = 0.0;
};

struct PreparedCorpus {
  std::vector<WordType> types;
  std::vector<std::size_t> stream;  // corpus position -> type index
  std::size_t skipped = 0;
};

PreparedCorpus prepare(std::span<const std::string> corpus, const EmbeddingTable& word_table,
                       const WordPieceVocab& vocab, const TokenizerOptions& tokenizer) {
  PreparedCorpus out;
  std::unordered_map<std::string, std::size_t> type_index;
  for (const auto& word : corpus) {
    auto it = type_index.find(word);
    if (it == type_index.end()) {
      auto target = word_table.lookup(word);
      if (!target) {
        ++out.skipped;
        continue;
      }
      it = type_index.emplace(word, out.types.size()).first;
      out.types.push_back({tokenize_word(word, vocab, tokenizer), *target, 0.0});
    }
    out.types[it->second].count += 1.0;
    out.stream.push_back(it->second);
  }
  return out;
}

double objective(const PreparedCorpus& corpus, const EmbeddingTable& pieces) {
  const std::size_t d = pieces.dimension();
  Vector sum(d);
  double total = 0.0;
  for (const auto& type : corpus.types) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (TokenId p : type.pieces) {
      auto row = pieces.row(static_cast<std::size_t>(p));
      for (std::size_t k = 0; k < d; ++k) sum[k] += row[k];
    }
    double err = 0.0;
    for (std::size_t k = 0; k < d; ++k) err += std::abs(type.target[k] - sum[k]);
    total += type.count * err;
  }
  return total;
}

EmbeddingTable initial_table(const EmbeddingTable& word_table, const WordPieceVocab& vocab,
                             WordPieceInit init) {
  EmbeddingTable table(word_table.dimension(), EmbeddingLevel::kWordPiece);
  const Vector zeros(word_table.dimension(), 0.0);
  for (const auto& piece : vocab.pieces()) {
    std::optional<std::span<const double>> start;
    if (init == WordPieceInit::kIdenticalWord && !is_continuation_piece(piece)) {
      start = word_table.lookup(piece);
    }
    table.add(piece, start ? *start : std::span<const double>(zeros));
  }
  return table;
}

}  // namespace

double WordPieceTrainingResult::objective_per_word() const {
  if (epoch_objective.empty() || corpus_words == 0) return 0.0;
  return epoch_objective.back() / static_cast<double>(corpus_words);
}

double wordpiece_objective(std::span<const std::string> corpus, const EmbeddingTable& word_table,
                           const WordPieceVocab& vocab, const EmbeddingTable& pieces,
                           const TokenizerOptions& tokenizer) {
  return objective(prepare(corpus, word_table, vocab, tokenizer), pieces);
}

WordPieceTrainingResult train_wordpiece_embeddings(std::span<const std::string> corpus,
                                                   const EmbeddingTable& word_table,
                                                   const WordPieceVocab& vocab,
                                                   const WordPieceTrainingConfig& config) {
  const PreparedCorpus prepared = prepare(corpus, word_table, vocab, config.tokenizer);
  if (prepared.skipped > 0) {
    spdlog::warn("word-piece training: skipped {} corpus words without a word vector",
                 prepared.skipped);
  }

  EmbeddingTable current = initial_table(word_table, vocab, config.init);
  WordPieceTrainingResult result{current, {}, {}, prepared.stream.size(), prepared.skipped};

  double best = objective(prepared, current);
  result.epoch_objective.push_back(best);
  result.epoch_current_objective.push_back(best);
  if (prepared.stream.empty() || config.steps == 0 || config.batch_words == 0) return result;

  const std::size_t d = word_table.dimension();
  const std::size_t n = prepared.stream.size();
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, (n + config.batch_words - 1) / config.batch_words);

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  std::vector<double> grad(vocab.size() * d, 0.0);
  std::vector<double> hits(vocab.size(), 0.0);
  std::vector<std::size_t> touched;
  Vector residual(d);

  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (std::size_t s = 0; s < config.batch_words; ++s) {
      const WordType& type = prepared.types[prepared.stream[pick(rng)]];
      for (std::size_t k = 0; k < d; ++k) residual[k] = type.target[k];
      for (TokenId p : type.pieces) {
        auto row = current.row(static_cast<std::size_t>(p));
        for (std::size_t k = 0; k < d; ++k) residual[k] -= row[k];
      }
      for (TokenId p : type.pieces) {
        const auto pi = static_cast<std::size_t>(p);
        if (hits[pi] == 0.0) touched.push_back(pi);
        hits[pi] += 1.0;
        double* g = grad.data() + pi * d;
        // d/dE' |E - sum E'| = -sign(residual); we step against it.
        for (std::size_t k = 0; k < d; ++k) {
          g[k] += (residual[k] > 0.0) - (residual[k] < 0.0);
        }
      }
    }
    const double lr = config.learning_rate / std::sqrt(static_cast<double>(step));
    for (std::size_t pi : touched) {
      auto row = current.mutable_row(pi);
      double* g = grad.data() + pi * d;
      for (std::size_t k = 0; k < d; ++k) {
        row[k] += lr * g[k] / hits[pi];
        g[k] = 0.0;
      }
      hits[pi] = 0.0;
    }
    touched.clear();

    if (step % steps_per_epoch == 0 || step == config.steps) {
      const double now = objective(prepared, current);
      if (now < best) {
        best = now;
        result.table = current;
      }
      result.epoch_objective.push_back(best);
      result.epoch_current_objective.push_back(now);
    }
  }
  return result;
}

}  // namespace cbs
