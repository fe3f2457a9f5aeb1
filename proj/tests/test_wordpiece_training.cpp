#include <doctest.h>

#include <random>

#include "cbs/wordpiece_training.hpp"
#include "support.hpp"

using namespace cbs;
using cbs::testing::vocab_with;

namespace {

// Every word is stem + suffix with E(w) = A(stem) + B(suffix), so an exact
// fit exists.
struct CompositionalCorpus {
  WordPieceVocab vocab = vocab_with({});
  EmbeddingTable words{1, EmbeddingLevel::kWord};
  std::vector<std::string> corpus;
};

CompositionalCorpus compositional_corpus(std::size_t dim, std::uint64_t seed) {
  const std::vector<std::string> stems{"ka", "lo", "mi", "nu", "pe", "ri"};
  const std::vector<std::string> suffixes{"s", "d", "t"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> small(-4, 4);
  auto draw = [&] {
    Vector v(dim);
    for (double& x : v) x = 0.25 * small(rng);
    return v;
  };
  CompositionalCorpus out;
  std::vector<std::string> pieces = stems;
  for (const auto& s : suffixes) pieces.push_back("##" + s);
  out.vocab = vocab_with(pieces);
  out.words = EmbeddingTable(dim, EmbeddingLevel::kWord);
  std::vector<Vector> suffix_vec;
  for (std::size_t i = 0; i < suffixes.size(); ++i) suffix_vec.push_back(draw());
  for (const auto& stem : stems) {
    const Vector a = draw();
    out.words.add(stem, a);
    for (std::size_t k = 0; k < 3; ++k) out.corpus.push_back(stem);
    for (std::size_t i = 0; i < suffixes.size(); ++i) {
      Vector w = a;
      for (std::size_t k = 0; k < dim; ++k) w[k] += suffix_vec[i][k];
      out.words.add(stem + suffixes[i], w);
      out.corpus.push_back(stem + suffixes[i]);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("two-piece exact case recovers both rows") {
  const auto vocab = vocab_with({"a", "##b"});
  EmbeddingTable words(1, EmbeddingLevel::kWord);
  words.add("a", Vector{1.0});
  words.add("ab", Vector{3.0});
  const std::vector<std::string> corpus{"a", "ab", "a", "ab"};
  const auto r = train_wordpiece_embeddings(corpus, words, vocab);
  CHECK(std::abs((*r.table.lookup("a"))[0] - 1.0) < 1e-2);
  CHECK(std::abs((*r.table.lookup("##b"))[0] - 2.0) < 1e-2);
}

TEST_CASE("single-piece words keep their word vectors") {
  const auto vocab = vocab_with({"a", "b", "c"});
  EmbeddingTable words(2, EmbeddingLevel::kWord);
  words.add("a", Vector{1.0, -2.0});
  words.add("b", Vector{0.5, 0.25});
  words.add("c", Vector{-3.0, 4.0});
  const std::vector<std::string> corpus{"a", "b", "b", "c", "a", "a"};
  const auto r = train_wordpiece_embeddings(corpus, words, vocab);
  CHECK(r.objective_per_word() < 1e-3);
  CHECK((*r.table.lookup("c"))[1] == doctest::Approx(4.0).epsilon(1e-3));
}

// Subgradient steps shrink the gap roughly as 1/sqrt(steps) here.
TEST_CASE("compositional corpus from zeros converges") {
  const auto c = compositional_corpus(4, 11);
  WordPieceTrainingConfig cfg;
  cfg.init = WordPieceInit::kZeros;
  const auto r = train_wordpiece_embeddings(c.corpus, c.words, c.vocab, cfg);
  CHECK(r.corpus_words == c.corpus.size());
  CHECK(r.objective_per_word() < 1e-2 * r.epoch_objective.front() / static_cast<double>(r.corpus_words));
  CHECK(r.epoch_objective.back() ==
        doctest::Approx(wordpiece_objective(c.corpus, c.words, c.vocab, r.table)));
}

TEST_CASE("reported objective never increases across epochs") {
  const auto c = compositional_corpus(3, 5);
  WordPieceTrainingConfig cfg;
  cfg.steps = 300;
  cfg.batch_words = 7;
  cfg.learning_rate = 0.5;
  const auto r = train_wordpiece_embeddings(c.corpus, c.words, c.vocab, cfg);
  REQUIRE(r.epoch_objective.size() > 10);
  for (std::size_t i = 1; i < r.epoch_objective.size(); ++i) {
    CHECK(r.epoch_objective[i] <= r.epoch_objective[i - 1]);
  }
}

TEST_CASE("words without vectors are skipped") {
  const auto vocab = vocab_with({"a", "##b"});
  EmbeddingTable words(1, EmbeddingLevel::kWord);
  words.add("a", Vector{1.0});
  const std::vector<std::string> corpus{"a", "zz", "ab"};
  const auto r = train_wordpiece_embeddings(corpus, words, vocab);
  CHECK(r.skipped_words == 2);
  CHECK(r.corpus_words == 1);
}

TEST_CASE("identical-word init copies non-continuation pieces") {
  const auto vocab = vocab_with({"a", "##a"});
  EmbeddingTable words(2, EmbeddingLevel::kWord);
  words.add("a", Vector{1.0, -1.0});
  WordPieceTrainingConfig cfg;
  cfg.steps = 0;
  const std::vector<std::string> corpus{"a"};
  const auto r = train_wordpiece_embeddings(corpus, words, vocab, cfg);
  CHECK((*r.table.lookup("a"))[1] == -1.0);
  CHECK((*r.table.lookup("##a"))[0] == 0.0);
  CHECK(r.epoch_objective == std::vector<double>{0.0});
}
