#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace cbs {

using Vector = std::vector<double>;
using TokenId = std::int32_t;

/// Malformed input file. `line()` is 1-based, 0 when the error is not tied
/// to a particular line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class EmbeddingLevel { kWord, kWordPiece };

/// Token -> d-vector mapping. Rows are stored contiguously in insertion order.
class EmbeddingTable {
 public:
  EmbeddingTable(std::size_t dimension, EmbeddingLevel level);

  /// Throws std::invalid_argument on duplicate token, wrong width or
  /// non-finite components.
  void add(std::string token, std::span<const double> vec);

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return tokens_.size(); }
  EmbeddingLevel level() const { return level_; }

  std::optional<std::size_t> index_of(std::string_view token) const;
  bool contains(std::string_view token) const { return index_of(token).has_value(); }
  std::optional<std::span<const double>> lookup(std::string_view token) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::span<const double> row(std::size_t i) const;
  std::span<double> mutable_row(std::size_t i);

 private:
  std::size_t dimension_;
  EmbeddingLevel level_;
  std::vector<std::string> tokens_;
  std::vector<double> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

EmbeddingTable parse_embeddings(std::istream& in, EmbeddingLevel level);
EmbeddingTable load_word_embeddings(const std::filesystem::path& path, EmbeddingLevel level);
void write_embeddings(const EmbeddingTable& table, std::ostream& out);
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

/// Lowercase stopword list; membership is case-insensitive.
class StopwordSet {
 public:
  StopwordSet() = default;
  explicit StopwordSet(const std::vector<std::string>& words);

  static StopwordSet load(const std::filesystem::path& path);

  bool contains(std::string_view word) const;
  std::size_t size() const { return words_.size(); }
  std::vector<std::string> sorted() const;

 private:
  std::unordered_set<std::string> words_;
};

/// Word-piece vocabulary. Continuation pieces carry a "##" prefix; the
/// reserved entries <unk>, <mask> and <pad> must be present.
class WordPieceVocab {
 public:
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kMask = "<mask>";
  static constexpr std::string_view kPad = "<pad>";

  explicit WordPieceVocab(std::vector<std::string> pieces);
  static WordPieceVocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return pieces_.size(); }
  const std::string& piece(TokenId id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& pieces() const { return pieces_; }
  std::optional<TokenId> id(std::string_view piece) const;

  TokenId unk_id() const { return unk_; }
  TokenId mask_id() const { return mask_; }
  TokenId pad_id() const { return pad_; }

  bool is_special(TokenId id) const { return id == unk_ || id == mask_ || id == pad_; }
  bool is_continuation(TokenId id) const { return continuation_.at(static_cast<std::size_t>(id)); }

 private:
  std::vector<std::string> pieces_;
  std::vector<bool> continuation_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId unk_ = -1;
  TokenId mask_ = -1;
  TokenId pad_ = -1;
};

bool is_continuation_piece(std::string_view piece);

/// Half-open piece range forming one surface word.
struct WordSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const WordSpan&, const WordSpan&) = default;
};

/// Spans for a piece list: every non-continuation piece opens a new span.
/// A leading continuation piece still opens the first span so the result
/// always partitions [0, l).
std::vector<WordSpan> compute_word_spans(std::span<const std::string> pieces);

/// Fixed-length word-piece sequence. Length never changes after
/// construction; `replace` keeps pieces, ids and spans in sync.
class TokenSequence {
 public:
  TokenSequence() = default;
  TokenSequence(std::vector<TokenId> ids, const WordPieceVocab& vocab);

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  std::span<const TokenId> ids() const { return ids_; }
  std::span<const std::string> pieces() const { return pieces_; }
  const std::vector<WordSpan>& word_spans() const { return spans_; }
  TokenId id(std::size_t pos) const { return ids_.at(pos); }
  const std::string& piece(std::size_t pos) const { return pieces_.at(pos); }

  /// Entity-protection flags from the most recent sampling step.
  const std::vector<bool>& protection() const { return protected_; }
  void set_protection(std::vector<bool> flags);

  void replace(std::size_t pos, TokenId id, const WordPieceVocab& vocab);

  /// Concatenation; used to build premise+hypothesis contexts.
  static TokenSequence concat(const TokenSequence& head, const TokenSequence& tail);
  TokenSequence slice(std::size_t begin, std::size_t end) const;

  friend bool operator==(const TokenSequence& a, const TokenSequence& b) {
    return a.ids_ == b.ids_;
  }

 private:
  std::vector<TokenId> ids_;
  std::vector<std::string> pieces_;
  std::vector<WordSpan> spans_;
  std::vector<bool> protected_;
};

std::vector<std::string> split_whitespace(std::string_view text);

struct TokenizerOptions {
  bool lowercase = false;
  std::size_t max_chars_per_word = 100;
};

/// Greedy longest-match-first segmentation of each whitespace word.
/// Throws std::invalid_argument on text with no words.
TokenSequence tokenize(std::string_view text, const WordPieceVocab& vocab,
                       const TokenizerOptions& options = {});

/// Pieces of one word, or {<unk>} when the word cannot be segmented.
std::vector<TokenId> tokenize_word(std::string_view word, const WordPieceVocab& vocab,
                                   const TokenizerOptions& options = {});

/// Surface words of a piece list ("##" pieces glued to their predecessor).
std::vector<std::string> join_pieces(std::span<const std::string> pieces);

/// Throws std::invalid_argument when the first piece is a continuation.
std::string detokenize(std::span<const std::string> pieces);
std::string detokenize(const TokenSequence& seq);

/// R(tokens): sum of embeddings of non-stopword tokens; tokens missing from
/// the table contribute nothing.
Vector sentence_representation(std::span<const std::string> tokens, const EmbeddingTable& table,
                               const StopwordSet& stop);

/// Cosine similarity with zero-vector conventions: both zero -> 1, exactly
/// one zero -> 0. Throws std::invalid_argument on dimension mismatch.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace cbs
