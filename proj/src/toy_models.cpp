#include "cbs/toy_models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

namespace cbs {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <typename Map>
nlohmann::json sorted_triples(const std::vector<Map>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t ctx = 0; ctx < rows.size(); ++ctx) {
    std::map<typename Map::key_type, double> ordered(rows[ctx].begin(), rows[ctx].end());
    for (const auto& [z, c] : ordered) out.push_back({ctx, z, c});
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ToyMaskedLm

ToyMaskedLm::ToyMaskedLm(const WordPieceVocab& vocab, ToyMlmConfig config)
    : config_(config), vocab_size_(vocab.size()) {
  if (config_.smoothing < 0.0) throw std::invalid_argument("smoothing must be non-negative");
  const double wsum = config_.left_weight + config_.right_weight + config_.unigram_weight;
  if (!(wsum > 0.0) || config_.left_weight < 0.0 || config_.right_weight < 0.0 ||
      config_.unigram_weight < 0.0) {
    throw std::invalid_argument("mixture weights must be non-negative with a positive sum");
  }
  config_.left_weight /= wsum;
  config_.right_weight /= wsum;
  config_.unigram_weight /= wsum;

  special_.resize(vocab_size_);
  for (std::size_t z = 0; z < vocab_size_; ++z) {
    special_[z] = vocab.is_special(static_cast<TokenId>(z));
    if (!special_[z]) eligible_ += 1.0;
  }
  unigram_.assign(vocab_size_, 0.0);
  left_.resize(vocab_size_ + 1);
  right_.resize(vocab_size_ + 1);
  left_total_.assign(vocab_size_ + 1, 0.0);
  right_total_.assign(vocab_size_ + 1, 0.0);
}

ToyMaskedLm ToyMaskedLm::train(std::span<const TokenSequence> corpus, const WordPieceVocab& vocab,
                               const ToyMlmConfig& config, std::vector<std::string> document_ids) {
  if (corpus.empty()) throw std::invalid_argument("cannot train a masked LM on an empty corpus");
  ToyMaskedLm lm(vocab, config);
  const TokenId edge = lm.boundary();
  for (const auto& seq : corpus) {
    const auto ids = seq.ids();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const TokenId z = ids[i];
      if (vocab.is_special(z)) continue;
      const TokenId l = i > 0 ? ids[i - 1] : edge;
      const TokenId r = i + 1 < ids.size() ? ids[i + 1] : edge;
      lm.unigram_[static_cast<std::size_t>(z)] += 1.0;
      lm.unigram_total_ += 1.0;
      lm.left_[static_cast<std::size_t>(l)][z] += 1.0;
      lm.left_total_[static_cast<std::size_t>(l)] += 1.0;
      lm.right_[static_cast<std::size_t>(r)][z] += 1.0;
      lm.right_total_[static_cast<std::size_t>(r)] += 1.0;
    }
  }
  lm.documents_ = corpus.size();
  lm.document_ids_ = std::move(document_ids);
  return lm;
}

void ToyMaskedLm::conditional(const CountRow& counts, double total, Vector& out) const {
  // Callers guarantee a positive denominator (seen context or k > 0).
  const double denom = total + config_.smoothing * eligible_;
  const double base = config_.smoothing / denom;
  for (std::size_t z = 0; z < vocab_size_; ++z) out[z] = special_[z] ? 0.0 : base;
  for (const auto& [z, c] : counts) out[static_cast<std::size_t>(z)] += c / denom;
}

Vector ToyMaskedLm::row(std::optional<TokenId> left, std::optional<TokenId> right) const {
  Vector uni(vocab_size_, 0.0);
  {
    const double denom = unigram_total_ + config_.smoothing * eligible_;
    for (std::size_t z = 0; z < vocab_size_; ++z) {
      if (special_[z]) continue;
      uni[z] = denom > 0.0 ? (unigram_[z] + config_.smoothing) / denom : 1.0 / eligible_;
    }
  }
  Vector mix(vocab_size_, 0.0);
  Vector tmp(vocab_size_, 0.0);
  auto accumulate = [&](double weight, std::optional<TokenId> ctx, const std::vector<CountRow>& rows,
                        const std::vector<double>& totals) {
    if (weight == 0.0) return;
    const Vector* src = &uni;
    if (ctx) {
      const auto c = static_cast<std::size_t>(*ctx);
      if (c >= rows.size()) throw std::out_of_range("context token outside vocabulary");
      if (totals[c] > 0.0 || config_.smoothing > 0.0) {
        conditional(rows[c], totals[c], tmp);
        src = &tmp;
      }
    }
    for (std::size_t z = 0; z < vocab_size_; ++z) mix[z] += weight * (*src)[z];
  };
  accumulate(config_.left_weight, left, left_, left_total_);
  accumulate(config_.right_weight, right, right_, right_total_);
  accumulate(config_.unigram_weight, std::nullopt, left_, left_total_);

  Vector out(vocab_size_);
  double total = 0.0;
  for (double p : mix) total += p;
  for (std::size_t z = 0; z < vocab_size_; ++z) {
    out[z] = mix[z] > 0.0 ? std::log(mix[z] / total) : kNegInf;
  }
  return out;
}

std::vector<Vector> ToyMaskedLm::mask_logprobs(std::span<const TokenId> tokens,
                                               std::span<const std::size_t> mask_positions) const {
  // Any position listed as masked counts as masked context, whatever id it holds.
  std::vector<bool> masked(tokens.size(), false);
  for (std::size_t p : mask_positions) {
    if (p >= tokens.size()) throw std::out_of_range("mask position outside sequence");
    masked[p] = true;
  }
  std::vector<Vector> rows;
  rows.reserve(mask_positions.size());
  for (std::size_t p : mask_positions) {
    std::optional<TokenId> left = boundary();
    std::optional<TokenId> right = boundary();
    if (p > 0) left = masked[p - 1] ? std::nullopt : std::optional<TokenId>(tokens[p - 1]);
    if (p + 1 < tokens.size()) {
      right = masked[p + 1] ? std::nullopt : std::optional<TokenId>(tokens[p + 1]);
    }
    rows.push_back(row(left, right));
  }
  return rows;
}

double ToyMaskedLm::unigram_count(TokenId z) const { return unigram_.at(static_cast<std::size_t>(z)); }

double ToyMaskedLm::left_count(TokenId context, TokenId z) const {
  const auto& row = left_.at(static_cast<std::size_t>(context));
  auto it = row.find(z);
  return it == row.end() ? 0.0 : it->second;
}

double ToyMaskedLm::right_count(TokenId context, TokenId z) const {
  const auto& row = right_.at(static_cast<std::size_t>(context));
  auto it = row.find(z);
  return it == row.end() ? 0.0 : it->second;
}

bool ToyMaskedLm::same_counts(const ToyMaskedLm& other) const {
  return vocab_size_ == other.vocab_size_ && unigram_ == other.unigram_ && left_ == other.left_ &&
         right_ == other.right_;
}

nlohmann::json ToyMaskedLm::to_json() const {
  nlohmann::json unigram = nlohmann::json::array();
  for (std::size_t z = 0; z < unigram_.size(); ++z) {
    if (unigram_[z] != 0.0) unigram.push_back({z, unigram_[z]});
  }
  return {
      {"type", "toy_mlm"},
      {"vocab_size", vocab_size_},
      {"smoothing", config_.smoothing},
      {"weights", {config_.left_weight, config_.right_weight, config_.unigram_weight}},
      {"documents", documents_},
      {"document_ids", document_ids_},
      {"unigram", unigram},
      {"left", sorted_triples(left_)},
      {"right", sorted_triples(right_)},
  };
}

ToyMaskedLm ToyMaskedLm::from_json(const nlohmann::json& j, const WordPieceVocab& vocab) {
  if (j.at("type") != "toy_mlm") throw std::invalid_argument("not a toy_mlm model file");
  if (j.at("vocab_size").get<std::size_t>() != vocab.size()) {
    throw std::invalid_argument("masked LM was trained with a different vocabulary size");
  }
  ToyMlmConfig config;
  config.smoothing = j.at("smoothing").get<double>();
  const auto& w = j.at("weights");
  config.left_weight = w.at(0).get<double>();
  config.right_weight = w.at(1).get<double>();
  config.unigram_weight = w.at(2).get<double>();
  ToyMaskedLm lm(vocab, config);
  for (const auto& e : j.at("unigram")) {
    const auto z = e.at(0).get<std::size_t>();
    lm.unigram_.at(z) = e.at(1).get<double>();
    lm.unigram_total_ += lm.unigram_[z];
  }
  auto load = [](const nlohmann::json& triples, std::vector<CountRow>& rows, std::vector<double>& totals) {
    for (const auto& e : triples) {
      const auto ctx = e.at(0).get<std::size_t>();
      const double c = e.at(2).get<double>();
      rows.at(ctx)[e.at(1).get<TokenId>()] = c;
      totals.at(ctx) += c;
    }
  };
  load(j.at("left"), lm.left_, lm.left_total_);
  load(j.at("right"), lm.right_, lm.right_total_);
  lm.documents_ = j.at("documents").get<std::size_t>();
  lm.document_ids_ = j.at("document_ids").get<std::vector<std::string>>();
  return lm;
}

std::vector<ToyMaskedLm> train_class_excluded_mlms(const Dataset& dataset, const WordPieceVocab& vocab,
                                                   const ToyMlmConfig& config,
                                                   const TokenizerOptions& tokenizer) {
  std::vector<TokenSequence> sequences;
  sequences.reserve(dataset.size());
  for (const auto& ex : dataset.examples) sequences.push_back(tokenize(ex.text, vocab, tokenizer));

  std::vector<ToyMaskedLm> models;
  for (std::size_t excluded = 0; excluded < dataset.num_classes; ++excluded) {
    std::vector<TokenSequence> kept;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset.examples[i].label == excluded) continue;
      kept.push_back(sequences[i]);
      ids.push_back(dataset.examples[i].id);
    }
    if (kept.size() == dataset.size()) {
      spdlog::warn("class {} has no examples; its excluded model sees the whole corpus", excluded);
    }
    if (kept.empty()) {
      throw std::invalid_argument("excluding class " + std::to_string(excluded) +
                                  " leaves no training data");
    }
    models.push_back(ToyMaskedLm::train(kept, vocab, config, std::move(ids)));
  }
  return models;
}

// ---------------------------------------------------------------------------
// NgramScorer

NgramScorer::NgramScorer(std::vector<std::string> vocabulary, const CausalConfig& config)
    : config_(config) {
  if (config_.order != 1 && config_.order != 2) throw std::invalid_argument("order must be 1 or 2");
  std::set<std::string> unique(vocabulary.begin(), vocabulary.end());
  unique.insert(std::string(WordPieceVocab::kUnk));
  words_.assign(unique.begin(), unique.end());
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
  unigram_.assign(words_.size(), 0.0);
  bigram_.resize(words_.size() + 1);
  context_total_.assign(words_.size() + 1, 0.0);
}

NgramScorer NgramScorer::train(std::span<const std::string> sentences, const CausalConfig& config) {
  std::vector<std::vector<std::string>> tokenized;
  std::vector<std::string> vocabulary;
  for (const auto& s : sentences) {
    tokenized.push_back(split_whitespace(s));
    vocabulary.insert(vocabulary.end(), tokenized.back().begin(), tokenized.back().end());
  }
  if (vocabulary.empty()) throw std::invalid_argument("cannot train a scorer on an empty corpus");
  NgramScorer scorer(std::move(vocabulary), config);
  const std::size_t edge = scorer.words_.size();
  for (const auto& words : tokenized) {
    std::size_t prev = edge;
    for (const auto& w : words) {
      const std::size_t id = scorer.word_id(w);
      scorer.unigram_[id] += 1.0;
      scorer.unigram_total_ += 1.0;
      scorer.bigram_[prev][id] += 1.0;
      scorer.context_total_[prev] += 1.0;
      prev = id;
    }
  }
  return scorer;
}

std::size_t NgramScorer::word_id(std::string_view w) const {
  auto it = index_.find(std::string(w));
  if (it != index_.end()) return it->second;
  return index_.at(std::string(WordPieceVocab::kUnk));
}

double NgramScorer::probability(std::optional<std::string_view> previous, std::string_view word) const {
  const double v = static_cast<double>(words_.size());
  const double k = config_.smoothing;
  const std::size_t id = word_id(word);
  double count = unigram_[id];
  double total = unigram_total_;
  if (config_.order == 2) {
    const std::size_t ctx = previous ? word_id(*previous) : words_.size();
    auto it = bigram_[ctx].find(id);
    count = it == bigram_[ctx].end() ? 0.0 : it->second;
    total = context_total_[ctx];
  }
  const double denom = total + k * v;
  if (!(denom > 0.0)) return 1.0 / v;
  return (count + k) / denom;
}

double NgramScorer::perplexity(std::string_view text) const {
  const auto words = split_whitespace(text);
  if (words.empty()) throw std::invalid_argument("perplexity of empty text is undefined");
  double log_p = 0.0;
  std::optional<std::string_view> prev;
  for (const auto& w : words) {
    log_p += std::log(probability(prev, w));
    prev = w;
  }
  return std::exp(-log_p / static_cast<double>(words.size()));
}

nlohmann::json NgramScorer::to_json() const {
  nlohmann::json unigram = nlohmann::json::array();
  for (std::size_t i = 0; i < unigram_.size(); ++i) {
    if (unigram_[i] != 0.0) unigram.push_back({i, unigram_[i]});
  }
  return {
      {"type", "ngram_scorer"}, {"order", config_.order},          {"smoothing", config_.smoothing},
      {"words", words_},        {"unigram", unigram}, {"bigram", sorted_triples(bigram_)},
  };
}

NgramScorer NgramScorer::from_json(const nlohmann::json& j) {
  if (j.at("type") != "ngram_scorer") throw std::invalid_argument("not an ngram_scorer model file");
  CausalConfig config{j.at("smoothing").get<double>(), j.at("order").get<int>()};
  NgramScorer scorer(j.at("words").get<std::vector<std::string>>(), config);
  for (const auto& e : j.at("unigram")) {
    const auto i = e.at(0).get<std::size_t>();
    scorer.unigram_.at(i) = e.at(1).get<double>();
    scorer.unigram_total_ += scorer.unigram_[i];
  }
  for (const auto& e : j.at("bigram")) {
    const auto ctx = e.at(0).get<std::size_t>();
    const double c = e.at(2).get<double>();
    scorer.bigram_.at(ctx)[e.at(1).get<std::size_t>()] = c;
    scorer.context_total_.at(ctx) += c;
  }
  return scorer;
}

// ---------------------------------------------------------------------------
// LogisticClassifier

Vector LogisticClassifier::features(const ClassifierInput& input) const {
  const auto hyp = split_whitespace(input.text);
  Vector rep = sentence_representation(hyp, *table_, *stop_);
  if (!pair_) return rep;
  const auto premise = split_whitespace(input.premise.value_or(""));
  Vector out = sentence_representation(premise, *table_, *stop_);
  out.insert(out.end(), rep.begin(), rep.end());
  return out;
}

Vector LogisticClassifier::logits(std::span<const double> x) const {
  Vector out(classes_);
  for (std::size_t c = 0; c < classes_; ++c) {
    double s = bias_[c];
    for (std::size_t f = 0; f < x.size(); ++f) s += weights_[c][f] * x[f];
    out[c] = s;
  }
  return out;
}

namespace {

void softmax_inplace(Vector& v) {
  const double peak = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - peak);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

}  // namespace

Vector LogisticClassifier::predict(const ClassifierInput& input) const {
  Vector x = features(input);
  for (std::size_t f = 0; f < x.size(); ++f) x[f] = (x[f] - mean_[f]) / scale_[f];
  Vector p = logits(x);
  softmax_inplace(p);
  return p;
}

LogisticClassifier LogisticClassifier::train(const Dataset& dataset,
                                             std::shared_ptr<const EmbeddingTable> word_table,
                                             std::shared_ptr<const StopwordSet> stop,
                                             const ClassifierTrainingConfig& config) {
  std::set<std::size_t> labels;
  for (const auto& ex : dataset.examples) labels.insert(ex.label);
  if (labels.size() < 2) throw std::invalid_argument("classifier training needs at least two classes");

  LogisticClassifier model;
  model.table_ = std::move(word_table);
  model.stop_ = std::move(stop);
  model.classes_ = std::max(dataset.num_classes, *labels.rbegin() + 1);
  model.pair_ = dataset.task == Task::kNli;

  const std::size_t n = dataset.size();
  std::vector<Vector> xs;
  xs.reserve(n);
  for (const auto& ex : dataset.examples) xs.push_back(model.features(ex.input()));
  const std::size_t dim = xs.front().size();

  model.mean_.assign(dim, 0.0);
  model.scale_.assign(dim, 0.0);
  for (const auto& x : xs)
    for (std::size_t f = 0; f < dim; ++f) model.mean_[f] += x[f] / static_cast<double>(n);
  for (const auto& x : xs)
    for (std::size_t f = 0; f < dim; ++f) {
      const double dev = x[f] - model.mean_[f];
      model.scale_[f] += dev * dev / static_cast<double>(n);
    }
  for (double& s : model.scale_) s = s > 1e-24 ? std::sqrt(s) : 1.0;
  for (auto& x : xs)
    for (std::size_t f = 0; f < dim; ++f) x[f] = (x[f] - model.mean_[f]) / model.scale_[f];

  model.weights_.assign(model.classes_, Vector(dim, 0.0));
  model.bias_.assign(model.classes_, 0.0);
  std::vector<Vector> grad_w(model.classes_, Vector(dim));
  Vector grad_b(model.classes_);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (auto& g : grad_w) std::fill(g.begin(), g.end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      Vector p = model.logits(xs[i]);
      softmax_inplace(p);
      p[dataset.examples[i].label] -= 1.0;
      for (std::size_t c = 0; c < model.classes_; ++c) {
        grad_b[c] += p[c] * inv_n;
        for (std::size_t f = 0; f < dim; ++f) grad_w[c][f] += p[c] * xs[i][f] * inv_n;
      }
    }
    for (std::size_t c = 0; c < model.classes_; ++c) {
      model.bias_[c] -= config.learning_rate * grad_b[c];
      for (std::size_t f = 0; f < dim; ++f) model.weights_[c][f] -= config.learning_rate * grad_w[c][f];
    }
  }
  return model;
}

nlohmann::json LogisticClassifier::to_json() const {
  return {{"type", "logistic"}, {"classes", classes_}, {"pair", pair_},     {"mean", mean_},
          {"scale", scale_},    {"weights", weights_}, {"bias", bias_}};
}

LogisticClassifier LogisticClassifier::from_json(const nlohmann::json& j,
                                                 std::shared_ptr<const EmbeddingTable> word_table,
                                                 std::shared_ptr<const StopwordSet> stop) {
  if (j.at("type") != "logistic") throw std::invalid_argument("not a logistic classifier file");
  LogisticClassifier model;
  model.table_ = std::move(word_table);
  model.stop_ = std::move(stop);
  model.classes_ = j.at("classes").get<std::size_t>();
  model.pair_ = j.at("pair").get<bool>();
  model.mean_ = j.at("mean").get<Vector>();
  model.scale_ = j.at("scale").get<Vector>();
  model.weights_ = j.at("weights").get<std::vector<Vector>>();
  model.bias_ = j.at("bias").get<Vector>();
  const std::size_t expected = model.table_->dimension() * (model.pair_ ? 2 : 1);
  if (model.mean_.size() != expected) {
    throw std::invalid_argument("classifier feature width does not match the embedding table");
  }
  return model;
}

// ---------------------------------------------------------------------------
// DictionaryNer

std::vector<std::size_t> find_phrase(std::span<const std::string> words,
                                     std::span<const std::string> phrase) {
  std::vector<std::size_t> hits;
  if (phrase.empty() || phrase.size() > words.size()) return hits;
  for (std::size_t i = 0; i + phrase.size() <= words.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
      hits.push_back(i);
    }
  }
  return hits;
}

DictionaryNer::DictionaryNer(std::vector<std::string> phrases) {
  for (auto& p : phrases) {
    auto w = split_whitespace(p);
    if (w.empty()) continue;
    phrases_.push_back(std::move(p));
    words_.push_back(std::move(w));
  }
}

DictionaryNer DictionaryNer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open entity lexicon " + path.string());
  std::vector<std::string> phrases;
  std::string line;
  while (std::getline(in, line)) phrases.push_back(line);
  return DictionaryNer(std::move(phrases));
}

std::vector<std::string> DictionaryNer::recognize(std::string_view text) const {
  const auto words = split_whitespace(text);
  std::vector<std::pair<std::size_t, std::size_t>> found;  // (first position, lexicon index)
  for (std::size_t i = 0; i < words_.size(); ++i) {
    auto hits = find_phrase(words, words_[i]);
    if (!hits.empty()) found.emplace_back(hits.front(), i);
  }
  std::sort(found.begin(), found.end());
  std::vector<std::string> out;
  for (const auto& [pos, i] : found) {
    if (std::find(out.begin(), out.end(), phrases_[i]) == out.end()) out.push_back(phrases_[i]);
  }
  return out;
}

}  // namespace cbs
