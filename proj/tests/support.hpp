#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cbs/lexicon.hpp"
#include "cbs/models.hpp"

namespace cbs::testing {

inline WordPieceVocab vocab_with(const std::vector<std::string>& pieces) {
  std::vector<std::string> all = {"<unk>", "<mask>", "<pad>"};
  all.insert(all.end(), pieces.begin(), pieces.end());
  return WordPieceVocab(all);
}

inline EmbeddingTable random_table(const std::vector<std::string>& tokens, std::size_t dim, std::mt19937_64& rng,
                                   EmbeddingLevel level = EmbeddingLevel::kWordPiece) {
  std::normal_distribution<double> g(0.0, 1.0);
  EmbeddingTable t(dim, level);
  for (const auto& tok : tokens) {
    Vector v(dim);
    for (double& x : v) x = g(rng);
    t.add(tok, v);
  }
  return t;
}

inline TokenSequence sequence_of(const std::vector<std::string>& pieces, const WordPieceVocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& p : pieces) ids.push_back(*vocab.id(p));
  return TokenSequence(ids, vocab);
}

/// Masked LM whose rows come from a callback: (tokens, position) -> log row.
class ScriptedMlm final : public MaskedLanguageModel {
 public:
  using RowFn = std::function<Vector(std::span<const TokenId>, std::size_t)>;
  ScriptedMlm(std::size_t v, RowFn fn) : v_(v), fn_(std::move(fn)) {}

  std::size_t vocab_size() const override { return v_; }
  std::vector<Vector> mask_logprobs(std::span<const TokenId> tokens,
                                    std::span<const std::size_t> positions) const override {
    ++calls;
    std::vector<Vector> out;
    for (std::size_t p : positions) out.push_back(fn_(tokens, p));
    return out;
  }

  mutable std::atomic<std::size_t> calls{0};

 private:
  std::size_t v_;
  RowFn fn_;
};

/// Uniform over every non-reserved entry.
inline Vector uniform_log_row(const WordPieceVocab& vocab) {
  const double n = static_cast<double>(vocab.size() - 3);
  Vector row(vocab.size(), -INFINITY);
  for (std::size_t z = 0; z < vocab.size(); ++z) {
    if (!vocab.is_special(static_cast<TokenId>(z))) row[z] = -std::log(n);
  }
  return row;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("cbs-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace cbs::testing
