#include "cbs/toy_corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

namespace cbs {

namespace {

constexpr const char* kSuffixes[] = {"s", "n"};

// Preferred filler words when the stopword list provides them.
constexpr const char* kCommonStopwords[] = {"the", "a", "of", "to", "in", "and", "is", "for", "on", "with",
                                            "at", "by", "from", "as", "was", "it", "that", "this", "an", "be"};

class WordForge {
 public:
  WordForge(std::mt19937_64& rng, std::set<std::string> taken) : rng_(rng), taken_(std::move(taken)) {}

  // Consonant-vowel syllables, so every word ends in a vowel and never
  // collides with a word plus a consonant suffix.
  std::string fresh(std::size_t min_syllables, std::size_t max_syllables) {
    static constexpr std::string_view kConsonants = "bdfgklmnprtvz";
    static constexpr std::string_view kVowels = "aeiou";
    std::uniform_int_distribution<std::size_t> syl(min_syllables, max_syllables);
    std::uniform_int_distribution<std::size_t> cons(0, kConsonants.size() - 1);
    std::uniform_int_distribution<std::size_t> vow(0, kVowels.size() - 1);
    for (;;) {
      std::string w;
      const std::size_t n = syl(rng_);
      for (std::size_t i = 0; i < n; ++i) {
        w += kConsonants[cons(rng_)];
        w += kVowels[vow(rng_)];
      }
      if (taken_.insert(w).second) return w;
    }
  }

 private:
  std::mt19937_64& rng_;
  std::set<std::string> taken_;
};

std::string capitalize(std::string w) {
  if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

bool plain_word(const std::string& w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [](char ch) { return ch >= 'a' && ch <= 'z'; });
}

}  // namespace

StopwordSet default_stopwords() { return StopwordSet::load(std::filesystem::path(CBS_DATA_DIR) / "stopwords.txt"); }

ToyCorpus generate_toy_corpus(const ToyCorpusConfig& cfg, const StopwordSet& stopwords) {
  if (cfg.classes < 2) throw std::invalid_argument("toy corpus needs at least 2 classes");
  if (cfg.dimension < cfg.classes + 2) throw std::invalid_argument("toy corpus dimension too small for the class axes");
  if (cfg.min_length < 1 || cfg.max_length < cfg.min_length) throw std::invalid_argument("bad sentence length range");
  if (cfg.class_words == 0) throw std::invalid_argument("toy corpus needs class words");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ToyCorpus out;

  // Filler stopwords.
  const auto all_stop = stopwords.sorted();
  for (const char* w : kCommonStopwords) {
    if (stopwords.contains(w)) out.stopwords.emplace_back(w);
  }
  if (out.stopwords.empty()) {
    for (const auto& w : all_stop) {
      if (plain_word(w)) out.stopwords.push_back(w);
      if (out.stopwords.size() == 20) break;
    }
  }
  if (cfg.stopword_rate > 0.0 && out.stopwords.empty()) {
    throw std::invalid_argument("stopword list offers no usable filler words");
  }

  WordForge forge(rng, std::set<std::string>(all_stop.begin(), all_stop.end()));
  std::vector<std::vector<std::string>> class_words(cfg.classes);
  for (auto& words : class_words) {
    for (std::size_t i = 0; i < cfg.class_words; ++i) words.push_back(forge.fresh(2, 3));
  }
  std::vector<std::string> shared;
  for (std::size_t i = 0; i < cfg.shared_words; ++i) shared.push_back(forge.fresh(2, 3));
  for (std::size_t i = 0; i < cfg.entities; ++i) out.entities.push_back(capitalize(forge.fresh(2, 2)) + "r");

  // Embeddings.
  const std::size_t d = cfg.dimension;
  out.word_embeddings = EmbeddingTable(d, EmbeddingLevel::kWord);
  auto noisy = [&](double topic_weight) {
    Vector v(d, 0.0);
    v[0] = topic_weight * (1.0 + 0.05 * gauss(rng));
    // Class axes stay nearly clean so the class signal survives summation.
    for (std::size_t k = 1; k < d; ++k) v[k] = (k <= cfg.classes ? 0.25 : 1.0) * cfg.noise * gauss(rng);
    return v;
  };
  for (const auto& w : out.stopwords) out.word_embeddings.add(w, noisy(cfg.topic));
  std::vector<Vector> suffix_vecs;
  for (std::size_t s = 0; s < std::size(kSuffixes); ++s) {
    Vector v(d, 0.0);
    for (std::size_t k = 1; k < d; ++k) v[k] = 0.5 * cfg.noise * gauss(rng);
    suffix_vecs.push_back(std::move(v));
  }
  auto add_content = [&](const std::string& w, Vector v) {
    out.word_embeddings.add(w, v);
    for (std::size_t s = 0; s < std::size(kSuffixes); ++s) {
      Vector inflected = v;
      for (std::size_t k = 0; k < d; ++k) inflected[k] += suffix_vecs[s][k];
      out.word_embeddings.add(w + kSuffixes[s], inflected);
    }
  };
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (const auto& w : class_words[c]) {
      Vector v = noisy(cfg.topic);
      v[1 + c] += cfg.class_strength;
      add_content(w, std::move(v));
    }
  }
  for (const auto& w : shared) add_content(w, noisy(cfg.topic));
  for (const auto& w : out.entities) out.word_embeddings.add(w, noisy(cfg.topic));

  // Vocabulary: reserved entries, then every piece the corpus can produce.
  out.vocab = {std::string(WordPieceVocab::kUnk), std::string(WordPieceVocab::kMask),
               std::string(WordPieceVocab::kPad)};
  for (const auto& w : out.stopwords) out.vocab.push_back(w);
  for (const auto& words : class_words) out.vocab.insert(out.vocab.end(), words.begin(), words.end());
  out.vocab.insert(out.vocab.end(), shared.begin(), shared.end());
  for (const char* s : kSuffixes) out.vocab.push_back(std::string("##") + s);
  out.vocab.insert(out.vocab.end(), out.entities.begin(), out.entities.end());

  // Sentences.
  std::uniform_int_distribution<std::size_t> length(cfg.min_length, cfg.max_length);
  auto pick = [&](const std::vector<std::string>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  auto content = [&](std::string w) {
    if (unit(rng) < cfg.inflection_rate) w += kSuffixes[std::uniform_int_distribution<std::size_t>(0, 1)(rng)];
    return w;
  };
  // Class words lead to their own class or to shared words; shared words
  // lead anywhere. A class-c sentence only follows links that stay inside
  // class c or the shared pool.
  std::map<std::string, std::vector<std::string>> next_words;
  std::map<std::string, std::size_t> word_class;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (const auto& w : class_words[c]) word_class[w] = c;
  }
  std::vector<std::string> everything = shared;
  for (const auto& words : class_words) everything.insert(everything.end(), words.begin(), words.end());
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    std::vector<std::string> pool = class_words[c];
    pool.insert(pool.end(), shared.begin(), shared.end());
    for (const auto& w : class_words[c]) {
      for (std::size_t k = 0; k < cfg.successors; ++k) next_words[w].push_back(pick(pool));
    }
  }
  for (const auto& w : shared) {
    for (std::size_t k = 0; k < cfg.successors; ++k) next_words[w].push_back(pick(everything));
  }

  auto sentence = [&](std::size_t c) {
    const std::size_t n = length(rng);
    std::vector<std::string> words;
    std::string prev;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = unit(rng);
      if (auto follow = next_words.find(prev); follow != next_words.end() && unit(rng) < cfg.coherence) {
        std::vector<std::string> allowed;
        for (const auto& w : follow->second) {
          auto wc = word_class.find(w);
          if (wc == word_class.end() || wc->second == c) allowed.push_back(w);
        }
        if (!allowed.empty()) {
          prev = pick(allowed);
          words.push_back(content(prev));
          continue;
        }
      }
      prev.clear();
      if (r < cfg.stopword_rate) {
        words.push_back(pick(out.stopwords));
      } else if (r < cfg.stopword_rate + cfg.class_word_rate || shared.empty()) {
        std::size_t cls = c;
        if (unit(rng) < cfg.contamination) {
          cls = (c + 1 + std::uniform_int_distribution<std::size_t>(0, cfg.classes - 2)(rng)) % cfg.classes;
        }
        prev = pick(class_words[cls]);
        words.push_back(content(prev));
      } else {
        prev = pick(shared);
        words.push_back(content(prev));
      }
    }
    if (!out.entities.empty() && unit(rng) < cfg.entity_rate) {
      words[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = pick(out.entities);
    }
    std::string text;
    for (const auto& w : words) {
      if (!text.empty()) text += ' ';
      text += w;
    }
    return text;
  };
  auto build = [&](std::size_t per_class, const std::string& prefix) {
    Dataset ds;
    ds.num_classes = cfg.classes;
    ds.task = Task::kClassification;
    ds.cased = true;
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      for (std::size_t i = 0; i < per_class; ++i) ds.examples.push_back({"", sentence(c), std::nullopt, c});
    }
    std::shuffle(ds.examples.begin(), ds.examples.end(), rng);
    for (std::size_t i = 0; i < ds.examples.size(); ++i) ds.examples[i].id = prefix + std::to_string(i);
    return ds;
  };
  out.train = build(cfg.train_per_class, "train-");
  out.test = build(cfg.test_per_class, "test-");

  // Word-piece embeddings fitted on the training words.
  std::vector<std::string> corpus_words;
  for (const auto& ex : out.train.examples) {
    for (auto& w : split_whitespace(ex.text)) corpus_words.push_back(std::move(w));
  }
  const WordPieceVocab vocab(out.vocab);
  WordPieceTrainingConfig wp;
  wp.steps = cfg.wordpiece_steps;
  wp.seed = cfg.seed;
  auto fitted = train_wordpiece_embeddings(corpus_words, out.word_embeddings, vocab, wp);
  out.wordpiece_objective = fitted.objective_per_word();
  out.wordpiece_embeddings = std::move(fitted.table);
  return out;
}

void write_toy_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(corpus.train, dir / "train.jsonl");
  save_dataset(corpus.test, dir / "test.jsonl");
  save_embeddings(corpus.word_embeddings, dir / "word_emb.txt");
  save_embeddings(corpus.wordpiece_embeddings, dir / "wp_emb.txt");
  WordPieceVocab(corpus.vocab).save(dir / "vocab.txt");
  auto write_lines = [&](const std::vector<std::string>& lines, const std::filesystem::path& path) {
    std::ofstream o(path);
    if (!o) throw std::runtime_error("cannot write " + path.string());
    for (const auto& l : lines) o << l << '\n';
  };
  write_lines(corpus.stopwords, dir / "stopwords.txt");
  write_lines(corpus.entities, dir / "entities.txt");
}

}  // namespace cbs
