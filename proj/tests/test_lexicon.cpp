#include <doctest.h>

#include <sstream>

#include "cbs/lexicon.hpp"
#include "support.hpp"

using namespace cbs;
using cbs::testing::vocab_with;

TEST_CASE("embedding table round trips through text") {
  std::istringstream in("apple 1 2 3\n\nbanana -0.5 0 1e-3\n");
  const auto t = parse_embeddings(in, EmbeddingLevel::kWord);
  CHECK(t.size() == 2);
  CHECK(t.dimension() == 3);
  CHECK((*t.lookup("banana"))[2] == doctest::Approx(1e-3));
  CHECK_FALSE(t.lookup("cherry"));

  std::ostringstream out;
  write_embeddings(t, out);
  std::istringstream again(out.str());
  const auto u = parse_embeddings(again, EmbeddingLevel::kWord);
  REQUIRE(u.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(u.tokens()[i] == t.tokens()[i]);
    for (std::size_t k = 0; k < 3; ++k) CHECK(u.row(i)[k] == t.row(i)[k]);
  }
}

TEST_CASE("malformed embedding files report the line") {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      parse_embeddings(in, EmbeddingLevel::kWord);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 999;
  };
  CHECK(line_of("a 1 2\nb 1\n") == 2);
  CHECK(line_of("a 1 2\nb 1 x\n") == 2);
  CHECK(line_of("a 1 2\na 3 4\n") == 2);
  CHECK(line_of("a 1 nan\n") == 1);
  CHECK(line_of("lonely\n") == 1);
  std::istringstream empty("");
  CHECK_THROWS_AS(parse_embeddings(empty, EmbeddingLevel::kWord), ParseError);
}

TEST_CASE("embedding table rejects bad rows") {
  EmbeddingTable t(2, EmbeddingLevel::kWord);
  const Vector ok{1, 2};
  t.add("a", ok);
  CHECK_THROWS_AS(t.add("a", ok), std::invalid_argument);
  CHECK_THROWS_AS(t.add("b", Vector{1}), std::invalid_argument);
  CHECK_THROWS_AS(t.add("c", Vector{1, INFINITY}), std::invalid_argument);
  CHECK_THROWS_AS(EmbeddingTable(0, EmbeddingLevel::kWord), std::invalid_argument);
}

TEST_CASE("stopwords compare case-insensitively") {
  const StopwordSet s({"The", "of"});
  CHECK(s.contains("the"));
  CHECK(s.contains("THE"));
  CHECK(s.contains("Of"));
  CHECK_FALSE(s.contains("off"));
  CHECK(s.sorted() == std::vector<std::string>{"of", "the"});
}

TEST_CASE("vocabulary needs reserved entries and unique pieces") {
  CHECK_THROWS_AS(WordPieceVocab({"<unk>", "<mask>", "a"}), std::invalid_argument);
  CHECK_THROWS_AS(vocab_with({"a", "a"}), std::invalid_argument);
  const auto v = vocab_with({"play", "##ing", "##"});
  CHECK(v.is_continuation(*v.id("##ing")));
  CHECK_FALSE(v.is_continuation(*v.id("##")));
  CHECK(v.is_special(v.mask_id()));
}

TEST_CASE("tokenizer takes the longest match first") {
  const auto v = vocab_with({"un", "unaff", "##able", "##a", "##ff", "##b", "##le", "the"});
  const auto seq = tokenize("the unaffable", v);
  const std::vector<std::string> pieces(seq.pieces().begin(), seq.pieces().end());
  CHECK(pieces == std::vector<std::string>{"the", "unaff", "##able"});
  CHECK(seq.word_spans() == std::vector<WordSpan>{{0, 1}, {1, 3}});
  CHECK(detokenize(seq) == "the unaffable");
}

TEST_CASE("unsegmentable and overlong words become unk") {
  const auto v = vocab_with({"ab", "##c"});
  CHECK(tokenize_word("abd", v) == std::vector<TokenId>{v.unk_id()});
  CHECK(tokenize_word("abc", v) == std::vector<TokenId>{*v.id("ab"), *v.id("##c")});
  TokenizerOptions o;
  o.max_chars_per_word = 2;
  CHECK(tokenize_word("abc", v, o) == std::vector<TokenId>{v.unk_id()});
  o.lowercase = true;
  CHECK(tokenize_word("AB", v, o) == std::vector<TokenId>{*v.id("ab")});
  CHECK_THROWS_AS(tokenize("  \t", v), std::invalid_argument);
}

TEST_CASE("spans, replace and slicing stay consistent") {
  const auto v = vocab_with({"go", "##es", "to", "school"});
  auto seq = cbs::testing::sequence_of({"go", "##es", "to", "school"}, v);
  CHECK(seq.word_spans().size() == 3);
  seq.replace(1, *v.id("to"), v);
  CHECK(seq.word_spans() == compute_word_spans(seq.pieces()));
  CHECK(seq.word_spans().size() == 4);
  seq.replace(3, *v.id("##es"), v);
  CHECK(seq.word_spans() == std::vector<WordSpan>{{0, 1}, {1, 2}, {2, 4}});
  const auto tail = seq.slice(3, 4);
  CHECK(tail.word_spans() == std::vector<WordSpan>{{0, 1}});
  CHECK_THROWS_AS(detokenize(tail), std::invalid_argument);
  const auto joined = TokenSequence::concat(seq.slice(0, 2), seq.slice(2, 4));
  CHECK(joined == seq);
  CHECK(joined.word_spans() == seq.word_spans());
}

TEST_CASE("cosine conventions for zero vectors") {
  const Vector z{0, 0}, a{1, 0}, b{0, 2}, c{-3, 0};
  CHECK(cosine_similarity(z, z) == 1.0);
  CHECK(cosine_similarity(z, a) == 0.0);
  CHECK(cosine_similarity(a, z) == 0.0);
  CHECK(cosine_similarity(a, b) == 0.0);
  CHECK(cosine_similarity(a, c) == -1.0);
  CHECK(cosine_similarity(Vector{1, 1}, Vector{2, 2}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cosine_similarity(a, Vector{1}), std::invalid_argument);
}

TEST_CASE("sentence representation skips stopwords and unknown tokens") {
  EmbeddingTable t(2, EmbeddingLevel::kWord);
  t.add("cat", Vector{1, 0});
  t.add("the", Vector{5, 5});
  t.add("dog", Vector{0, 2});
  const StopwordSet stop({"the"});
  const std::vector<std::string> words{"The", "cat", "and", "the", "dog", "cat"};
  const auto r = sentence_representation(words, t, stop);
  CHECK(r == Vector{2, 2});
}
