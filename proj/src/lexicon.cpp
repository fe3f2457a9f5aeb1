#include "cbs/lexicon.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cbs {

namespace {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::optional<double> parse_double(std::string_view field) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

}  // namespace

ParseError::ParseError(const std::string& what, std::size_t line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
      line_(line) {}

// ---------------------------------------------------------------------------
// EmbeddingTable

EmbeddingTable::EmbeddingTable(std::size_t dimension, EmbeddingLevel level)
    : dimension_(dimension), level_(level) {
  if (dimension == 0) throw std::invalid_argument("embedding dimension must be positive");
}

void EmbeddingTable::add(std::string token, std::span<const double> vec) {
  if (vec.size() != dimension_) {
    throw std::invalid_argument("embedding for '" + token + "' has " + std::to_string(vec.size()) +
                                " components, expected " + std::to_string(dimension_));
  }
  if (!std::all_of(vec.begin(), vec.end(), [](double v) { return std::isfinite(v); })) {
    throw std::invalid_argument("embedding for '" + token + "' has non-finite components");
  }
  if (index_.count(token) != 0) throw std::invalid_argument("duplicate token '" + token + "'");
  index_.emplace(token, tokens_.size());
  tokens_.push_back(std::move(token));
  data_.insert(data_.end(), vec.begin(), vec.end());
}

std::optional<std::size_t> EmbeddingTable::index_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::span<const double>> EmbeddingTable::lookup(std::string_view token) const {
  auto i = index_of(token);
  if (!i) return std::nullopt;
  return row(*i);
}

std::span<const double> EmbeddingTable::row(std::size_t i) const {
  return std::span<const double>(data_).subspan(i * dimension_, dimension_);
}

std::span<double> EmbeddingTable::mutable_row(std::size_t i) {
  return std::span<double>(data_).subspan(i * dimension_, dimension_);
}

EmbeddingTable parse_embeddings(std::istream& in, EmbeddingLevel level) {
  std::optional<EmbeddingTable> table;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string_view> fields;
  Vector values;
  while (std::getline(in, line)) {
    ++line_no;
    fields.clear();
    std::string_view rest(line);
    while (!rest.empty()) {
      std::size_t start = 0;
      while (start < rest.size() && is_space(rest[start])) ++start;
      if (start == rest.size()) break;
      std::size_t end = start;
      while (end < rest.size() && !is_space(rest[end])) ++end;
      fields.push_back(rest.substr(start, end - start));
      rest.remove_prefix(end);
    }
    if (fields.empty()) continue;
    if (fields.size() < 2) throw ParseError("expected a token followed by values", line_no);
    const std::size_t dim = fields.size() - 1;
    if (!table) table.emplace(dim, level);
    if (dim != table->dimension()) {
      throw ParseError("expected " + std::to_string(table->dimension()) + " values, found " +
                           std::to_string(dim),
                       line_no);
    }
    values.clear();
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto v = parse_double(fields[i]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError("non-numeric value '" + std::string(fields[i]) + "'", line_no);
      }
      values.push_back(*v);
    }
    std::string token(fields[0]);
    if (table->contains(token)) throw ParseError("duplicate token '" + token + "'", line_no);
    table->add(std::move(token), values);
  }
  if (!table) throw ParseError("embedding file is empty");
  return std::move(*table);
}

EmbeddingTable load_word_embeddings(const std::filesystem::path& path, EmbeddingLevel level) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file " + path.string());
  try {
    return parse_embeddings(in, level);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_embeddings(const EmbeddingTable& table, std::ostream& out) {
  out << std::setprecision(17);
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.tokens()[i];
    for (double v : table.row(i)) out << ' ' << v;
    out << '\n';
  }
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_embeddings(table, out);
}

// ---------------------------------------------------------------------------
// StopwordSet

StopwordSet::StopwordSet(const std::vector<std::string>& words) {
  for (const auto& w : words) words_.insert(ascii_lower(w));
}

StopwordSet StopwordSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stopword file " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto fields = split_whitespace(line);
    if (!fields.empty()) words.push_back(fields.front());
  }
  return StopwordSet(words);
}

bool StopwordSet::contains(std::string_view word) const {
  return words_.count(ascii_lower(word)) != 0;
}

std::vector<std::string> StopwordSet::sorted() const {
  std::vector<std::string> out(words_.begin(), words_.end());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// WordPieceVocab

bool is_continuation_piece(std::string_view piece) {
  return piece.size() > 2 && piece.substr(0, 2) == "##";
}

WordPieceVocab::WordPieceVocab(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
  continuation_.reserve(pieces_.size());
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    const auto& p = pieces_[i];
    if (p.empty()) throw std::invalid_argument("empty vocabulary entry at index " + std::to_string(i));
    if (!index_.emplace(p, static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary entry '" + p + "'");
    }
    continuation_.push_back(is_continuation_piece(p));
  }
  auto required = [&](std::string_view name) {
    auto found = id(name);
    if (!found) throw std::invalid_argument("vocabulary lacks reserved entry " + std::string(name));
    return *found;
  };
  unk_ = required(kUnk);
  mask_ = required(kMask);
  pad_ = required(kPad);
}

WordPieceVocab WordPieceVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path.string());
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && is_space(line.back())) line.pop_back();
    if (!line.empty()) pieces.push_back(line);
  }
  return WordPieceVocab(std::move(pieces));
}

void WordPieceVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : pieces_) out << p << '\n';
}

std::optional<TokenId> WordPieceVocab::id(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// TokenSequence

std::vector<WordSpan> compute_word_spans(std::span<const std::string> pieces) {
  std::vector<WordSpan> spans;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (spans.empty() || !is_continuation_piece(pieces[i])) {
      spans.push_back({i, i + 1});
    } else {
      spans.back().end = i + 1;
    }
  }
  return spans;
}

TokenSequence::TokenSequence(std::vector<TokenId> ids, const WordPieceVocab& vocab)
    : ids_(std::move(ids)) {
  pieces_.reserve(ids_.size());
  for (TokenId id : ids_) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    }
    pieces_.push_back(vocab.piece(id));
  }
  spans_ = compute_word_spans(pieces_);
  protected_.assign(ids_.size(), false);
}

void TokenSequence::set_protection(std::vector<bool> flags) {
  if (flags.size() != ids_.size()) throw std::invalid_argument("protection flags length mismatch");
  protected_ = std::move(flags);
}

void TokenSequence::replace(std::size_t pos, TokenId id, const WordPieceVocab& vocab) {
  if (pos >= ids_.size()) throw std::out_of_range("position outside sequence");
  const bool was_cont = is_continuation_piece(pieces_[pos]);
  ids_[pos] = id;
  pieces_[pos] = vocab.piece(id);
  if (was_cont != is_continuation_piece(pieces_[pos])) spans_ = compute_word_spans(pieces_);
}

TokenSequence TokenSequence::concat(const TokenSequence& head, const TokenSequence& tail) {
  TokenSequence out = head;
  out.ids_.insert(out.ids_.end(), tail.ids_.begin(), tail.ids_.end());
  out.pieces_.insert(out.pieces_.end(), tail.pieces_.begin(), tail.pieces_.end());
  out.protected_.insert(out.protected_.end(), tail.protected_.begin(), tail.protected_.end());
  out.spans_ = compute_word_spans(out.pieces_);
  return out;
}

TokenSequence TokenSequence::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw std::out_of_range("bad slice");
  TokenSequence out;
  out.ids_.assign(ids_.begin() + begin, ids_.begin() + end);
  out.pieces_.assign(pieces_.begin() + begin, pieces_.begin() + end);
  out.protected_.assign(protected_.begin() + begin, protected_.begin() + end);
  out.spans_ = compute_word_spans(out.pieces_);
  return out;
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::vector<TokenId> tokenize_word(std::string_view raw, const WordPieceVocab& vocab,
                                   const TokenizerOptions& options) {
  const std::string word = options.lowercase ? ascii_lower(raw) : std::string(raw);
  if (word.size() > options.max_chars_per_word) return {vocab.unk_id()};
  std::vector<TokenId> out;
  std::size_t start = 0;
  std::string candidate;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::optional<TokenId> match;
    while (start < end) {
      candidate.clear();
      if (start > 0) candidate = "##";
      candidate.append(word, start, end - start);
      match = vocab.id(candidate);
      if (match) break;
      --end;
    }
    if (!match) return {vocab.unk_id()};
    out.push_back(*match);
    start = end;
  }
  return out;
}

TokenSequence tokenize(std::string_view text, const WordPieceVocab& vocab,
                       const TokenizerOptions& options) {
  const auto words = split_whitespace(text);
  if (words.empty()) throw std::invalid_argument("cannot tokenize empty text");
  std::vector<TokenId> ids;
  for (const auto& w : words) {
    auto pieces = tokenize_word(w, vocab, options);
    ids.insert(ids.end(), pieces.begin(), pieces.end());
  }
  return TokenSequence(std::move(ids), vocab);
}

std::vector<std::string> join_pieces(std::span<const std::string> pieces) {
  std::vector<std::string> words;
  for (const auto& p : pieces) {
    if (is_continuation_piece(p) && !words.empty()) {
      words.back().append(p, 2, std::string::npos);
    } else {
      words.push_back(p);
    }
  }
  return words;
}

std::string detokenize(std::span<const std::string> pieces) {
  if (!pieces.empty() && is_continuation_piece(pieces.front())) {
    throw std::invalid_argument("sequence starts with continuation piece '" + pieces.front() + "'");
  }
  std::string out;
  for (const auto& w : join_pieces(pieces)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::string detokenize(const TokenSequence& seq) { return detokenize(seq.pieces()); }

// ---------------------------------------------------------------------------
// Representations

Vector sentence_representation(std::span<const std::string> tokens, const EmbeddingTable& table,
                               const StopwordSet& stop) {
  Vector sum(table.dimension(), 0.0);
  for (const auto& t : tokens) {
    if (stop.contains(t)) continue;
    auto row = table.lookup(t);
    if (!row) continue;
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += (*row)[k];
  }
  return sum;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_similarity: dimensions " + std::to_string(a.size()) +
                                " and " + std::to_string(b.size()) + " differ");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace cbs
