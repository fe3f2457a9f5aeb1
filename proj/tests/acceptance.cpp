// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "cbs/attack.hpp"
#include "cbs/cli.hpp"
#include "cbs/sampler.hpp"
#include "cbs/threat.hpp"
#include "cbs/toy_corpus.hpp"
#include "cbs/toy_models.hpp"
#include "cbs/wordpiece_training.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cbs;
using cbs::testing::read_file;
using cbs::testing::ScriptedMlm;
using cbs::testing::sequence_of;
using cbs::testing::TempDir;
using cbs::testing::uniform_log_row;
using cbs::testing::vocab_with;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome fast_path_equivalence() {
  Outcome o;
  std::mt19937_64 rng(101);
  const std::vector<std::string> stems{"th", "the", "a", "of", "ca", "cat", "do", "dog", "ru", "run", "sky", "blu",
                                       "is", "it", "we", "go", "to", "ma", "ny", "sun"};
  const std::vector<std::string> conts{"##e", "##s", "##t", "##ing", "##ed", "##y", "##n", "##a"};
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> pieces;
    for (const auto& s : stems) {
      if (rng() % 4 != 0) pieces.push_back(s);
    }
    for (const auto& c : conts) {
      if (rng() % 3 != 0) pieces.push_back(c);
    }
    if (pieces.empty()) pieces.push_back("cat");
    const auto vocab = vocab_with(pieces);
    const std::size_t dim = 2 + rng() % 15;
    std::vector<std::string> embedded;
    for (const auto& p : pieces) {
      if (rng() % 8 != 0) embedded.push_back(p);
    }
    const auto table = cbs::testing::random_table(embedded, dim, rng);
    std::vector<std::string> stop_words{"the", "a", "of", "is", "it", "to", "we"};
    std::shuffle(stop_words.begin(), stop_words.end(), rng);
    stop_words.resize(rng() % stop_words.size());
    const StopwordSet stop(stop_words);
    auto ctx = std::make_shared<SemanticContext>(vocab, table, stop);

    const std::size_t len = 1 + rng() % 30;
    std::vector<std::string> sentence;
    for (std::size_t i = 0; i < len; ++i) sentence.push_back(pieces[rng() % pieces.size()]);
    const std::size_t pos = rng() % len;
    sentence[pos] = "<mask>";
    for (std::size_t i = 0; i < len; ++i) {
      if (rng() % 6 == 0) sentence[i] = "<mask>";
    }
    const std::size_t begin = rng() % 3 == 0 ? rng() % (pos + 1) : 0;
    const auto seq = sequence_of(sentence, vocab);

    EnforcingConfig cfg;
    cfg.context = ctx;
    cfg.region_begin = begin;
    std::normal_distribution<double> g(0, 1);
    switch (trial % 4) {
      case 0:
        cfg.target.assign(dim, 0.0);
        break;
      case 1:
        cfg.target = ctx->representation(seq, begin);
        break;
      default:
        cfg.target.resize(dim);
        for (double& x : cfg.target) x = g(rng);
    }
    const auto fast = candidate_similarities(seq, pos, cfg);
    const auto slow = oracle::naive_similarities(sentence, pos, vocab, table, stop, cfg.target, begin);
    for (std::size_t z = 0; z < fast.size(); ++z) {
      const double err = std::abs(fast[z] - slow[z]) / std::max(std::abs(slow[z]), 1e-6);
      worst = std::max(worst, err);
    }
  }
  o.require(worst <= 1e-6, fmt("worst relative error %.3g", worst));
  if (o.pass) o.detail = fmt("200 cases, worst relative error %.3g", worst);
  return o;
}

Outcome enforcing_math() {
  Outcome o;
  const Vector sims{0.95, 0.99, 1.0, 0.95 - 1e-3, 0.2};
  const auto w = enforcing_distribution(sims, 0.95, 1000.0);
  o.require(w[0] == 1.0 && w[1] == 1.0 && w[2] == 1.0, "weight above the threshold is not exactly 1");
  o.require(std::abs(w[3] - std::exp(-1.0)) < 1e-9, fmt("weight at gap 1e-3 is %.12f", w[3]));
  o.require(w[4] < w[3], "weights do not decrease with the gap");
  for (double sigma : {0.0, 0.5, 0.95, 1.0}) {
    for (double x : enforcing_distribution(sims, sigma, 0.0)) o.require(x == 1.0, "kappa=0 weight differs from 1");
  }
  const auto logw = enforcing_log_weights(sims, 0.95, 1000.0);
  o.require(std::abs(logw[3] + 1.0) < 1e-9, "log weight at gap 1e-3 is not -1");
  if (o.pass) o.detail = fmt("w(gap=1e-3)=%.12f", w[3]);
  return o;
}

class FixedPolicy final : public EnforcingPolicy {
 public:
  explicit FixedPolicy(Vector logw) : logw_(std::move(logw)) {}
  void score(const TokenSequence&, std::size_t, Vector& log_weights, Vector& sims) const override {
    log_weights = logw_;
    sims.clear();
  }

 private:
  Vector logw_;
};

Outcome proposal_correctness() {
  Outcome o;
  const Vector lm(3, std::log(1.0 / 3));
  const Vector weights{1.0, std::exp(-1.0), std::exp(-2.0)};
  const auto p = proposal_distribution(lm, weights, {});
  const double expect[] = {0.66524, 0.24473, 0.09003};
  for (int i = 0; i < 3; ++i) {
    o.require(std::abs(p[static_cast<std::size_t>(i)] - expect[i]) < 1e-5, fmt("p[%g] = %.6f", i, p[static_cast<std::size_t>(i)]));
  }

  // Draws go through the sampler's own step.
  const auto v = vocab_with({"a", "b", "c"});
  const ScriptedMlm mlm(v.size(), [&](auto, std::size_t) { return uniform_log_row(v); });
  const CbsSampler sampler(mlm, v, SamplerConfig{});
  const FixedPolicy policy({0, 0, 0, 0, -1, -2});
  ChainInput input;
  input.seed = sequence_of({"a"}, v);
  std::mt19937_64 rng(12345);
  const UniformSource u = [&] { return uniform01(rng); };
  std::vector<double> counts(3, 0.0);
  const std::vector<std::size_t> pos{0};
  for (int i = 0; i < 10000; ++i) {
    ChainState state{input.seed, 0, {}};
    sampler.sample_step(state, pos, input, policy, u);
    counts[static_cast<std::size_t>(state.current.id(0) - 3)] += 1;
  }
  const std::vector<double> probs(p.begin(), p.end());
  const double stat = oracle::chi_square(counts, probs);
  const double crit = boost::math::quantile(boost::math::complement(boost::math::chi_squared(2), 0.01));
  o.require(stat < crit, fmt("chi-square %.3f >= %.3f", stat, crit));
  if (o.pass) o.detail = fmt("p=(%.5f, %.5f, %.5f), chi-square %.3f", p[0], p[1], p[2], stat) + fmt(" < %.3f", crit);
  return o;
}

Outcome wordpiece_training() {
  Outcome o;
  std::mt19937_64 rng(29);
  std::normal_distribution<double> g(0.0, 1.0);

  // Bijective: every corpus word is a single vocabulary piece.
  const std::size_t dim = 8;
  std::vector<std::string> singles;
  for (int i = 0; i < 40; ++i) singles.push_back("w" + std::to_string(i));
  std::vector<std::string> pieces = singles;
  pieces.push_back("##x");
  const auto vocab = vocab_with(pieces);
  EmbeddingTable words(dim, EmbeddingLevel::kWord);
  std::vector<std::string> corpus;
  for (const auto& w : singles) {
    Vector x(dim);
    for (double& e : x) e = g(rng);
    words.add(w, x);
    for (std::size_t r = 0; r < 1 + rng() % 5; ++r) corpus.push_back(w);
  }
  std::shuffle(corpus.begin(), corpus.end(), rng);
  const auto fit = train_wordpiece_embeddings(corpus, words, vocab);  // default configuration, 2000 steps
  const double per_word = wordpiece_objective(corpus, words, vocab, fit.table) / static_cast<double>(corpus.size());
  o.require(per_word < 1e-3, fmt("bijective objective per word %.3g", per_word));

  // Monotone reporting on a compositional corpus started from zeros.
  const std::vector<std::string> stems{"ka", "lo", "mi", "nu", "pe", "ri"};
  const std::vector<std::string> suffixes{"s", "d", "t"};
  std::vector<std::string> cpieces = stems;
  for (const auto& s : suffixes) cpieces.push_back("##" + s);
  const auto cvocab = vocab_with(cpieces);
  EmbeddingTable cwords(4, EmbeddingLevel::kWord);
  std::vector<Vector> suffix_vec(suffixes.size(), Vector(4));
  for (auto& v : suffix_vec) {
    for (double& e : v) e = g(rng);
  }
  std::vector<std::string> ccorpus;
  for (const auto& stem : stems) {
    Vector a(4);
    for (double& e : a) e = g(rng);
    cwords.add(stem, a);
    ccorpus.push_back(stem);
    for (std::size_t i = 0; i < suffixes.size(); ++i) {
      Vector wv = a;
      for (std::size_t k = 0; k < 4; ++k) wv[k] += suffix_vec[i][k];
      cwords.add(stem + suffixes[i], wv);
      ccorpus.push_back(stem + suffixes[i]);
    }
  }
  WordPieceTrainingConfig zeros;
  zeros.init = WordPieceInit::kZeros;
  zeros.batch_words = 7;
  const auto traced = train_wordpiece_embeddings(ccorpus, cwords, cvocab, zeros);
  o.require(traced.epoch_objective.size() > 100, "too few epochs recorded");
  for (std::size_t i = 1; i < traced.epoch_objective.size(); ++i) {
    o.require(traced.epoch_objective[i] <= traced.epoch_objective[i - 1], "objective increased between epochs");
  }

  const auto v2 = vocab_with({"a", "##b"});
  EmbeddingTable w2(1, EmbeddingLevel::kWord);
  w2.add("a", Vector{1.0});
  w2.add("ab", Vector{3.0});
  const std::vector<std::string> c2{"a", "ab"};
  const auto exact = train_wordpiece_embeddings(c2, w2, v2);
  const double ea = (*exact.table.lookup("a"))[0];
  const double eb = (*exact.table.lookup("##b"))[0];
  o.require(std::abs(ea - 1.0) < 1e-2 && std::abs(eb - 2.0) < 1e-2, fmt("E'(a)=%.4f E'(##b)=%.4f", ea, eb));
  if (o.pass) {
    o.detail = fmt("bijective objective/word %.3g, E'(a)=%.4f, E'(##b)=%.4f", per_word, ea, eb) +
               fmt(", %g monotone epochs", double(traced.epoch_objective.size()));
  }
  return o;
}

Outcome threat_properties() {
  Outcome o;
  class LengthScorer final : public CausalScorer {
   public:
    double perplexity(std::string_view t) const override { return 1.0 + static_cast<double>(t.size()); }
  } ppl;
  std::mt19937_64 rng(7);
  EmbeddingTable table(3, EmbeddingLevel::kWord);
  const std::vector<std::string> vocab{"alpha", "beta", "gamma", "delta", "the"};
  table = cbs::testing::random_table(vocab, 3, rng, EmbeddingLevel::kWord);
  const StopwordSet stop({"the"});
  const ThreatScorer scorer{&ppl, &table, &stop};
  std::uniform_real_distribution<double> unit(0, 1);
  for (int i = 0; i < 200; ++i) {
    std::string text;
    for (int k = 0; k < 1 + i % 6; ++k) text += vocab[rng() % vocab.size()] + " ";
    const ThreatSetup setup(1.0 + 4 * unit(rng), unit(rng));
    o.require(in_threat_model(text, text, {setup, scorer}).inside, "identity rewrite outside the threat model");
  }
  for (int i = 0; i < 1000; ++i) {
    const ThreatScores s{0.5 + 6 * unit(rng), unit(rng)};
    const ThreatSetup tight(1.0 + 3 * unit(rng), unit(rng));
    const ThreatSetup loose(tight.lambda + 2 * unit(rng), tight.epsilon * unit(rng));
    const bool expect = s.ppl_ratio <= tight.lambda && s.similarity >= tight.epsilon;
    o.require(tight.admits(s) == expect, "admission differs from its definition");
    o.require(!tight.admits(s) || loose.admits(s), "relaxing the setup dropped an admitted pair");
  }

  // Scripted records; a candidate passing (2, 0.95) also passes (5, 0.90).
  std::vector<AttackRecord> records(10);
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    r.id = std::to_string(i);
    r.label = 0;
    r.clean_prediction = 0;
    Candidate c;
    c.predicted = 1;
    c.ppl_ratio = 1.0 + 0.5 * static_cast<double>(i);   // 1.0 .. 5.5
    c.similarity = 0.99 - 0.01 * static_cast<double>(i);  // 0.99 .. 0.90
    r.candidates.push_back(c);
  }
  const std::vector<ThreatSetup> setups{{2, 0.95}, {5, 0.9}};
  const auto s = summarize(filter_adversarials(filter_adversarials(records, {setups[0], {}}), {setups[1], {}}), setups);
  const double a = *s.setups[0].after_attack_accuracy, b = *s.setups[1].after_attack_accuracy;
  o.require(a > b, fmt("after-attack %.2f at 2:0.95 vs %.2f at 5:0.9", a, b));
  if (o.pass) o.detail = fmt("after-attack %.2f at (2, 0.95) > %.2f at (5, 0.90)", a, b);
  return o;
}

Outcome entity_preservation() {
  Outcome o;
  ToyCorpusConfig cfg;
  cfg.entity_rate = 1.0;
  cfg.train_per_class = 100;
  cfg.test_per_class = 25;
  cfg.wordpiece_steps = 300;
  const auto corpus = generate_toy_corpus(cfg, default_stopwords());
  const WordPieceVocab vocab(corpus.vocab);
  const auto mlms = train_class_excluded_mlms(corpus.train, vocab);
  auto context = std::make_shared<SemanticContext>(vocab, corpus.wordpiece_embeddings, StopwordSet(corpus.stopwords));
  const DictionaryNer ner(corpus.entities);

  std::size_t chains = 0, snapshots = 0;
  for (const auto& ex : corpus.test.examples) {
    if (chains == 50) break;
    const auto entities = ner.recognize(ex.text);
    if (entities.empty()) continue;
    ChainInput input;
    input.seed = tokenize(ex.text, vocab);
    input.entities = entity_phrases(entities, input.seed, vocab);
    SamplerConfig sc;
    sc.iterations = 100;
    sc.policy = PositionPolicy::kRandom;
    sc.block_size = 1 + chains % 3;
    sc.snapshot_every = 1;
    const RewritingSampler sampler(mlms[ex.label], vocab, context, sc, 0.0);
    auto rng = chain_rng(2024, chains);
    const auto state = sampler.rewrite(input, 0.9, rng);
    o.require(state.step_count == 100, "chain did not run 100 steps");
    for (const auto& snap : state.snapshots) {
      ++snapshots;
      const auto found = ner.recognize(detokenize(snap.tokens));
      for (const auto& e : entities) {
        o.require(std::find(found.begin(), found.end(), e) != found.end(), "entity '" + e + "' lost in " + ex.id);
      }
    }
    ++chains;
  }
  o.require(chains == 50, fmt("only %g chains had entities", double(chains)));
  if (o.pass) o.detail = fmt("%g chains, %g snapshots, all entities kept", double(chains), double(snapshots));
  return o;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cbs");
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  if (code != 0) std::fprintf(stderr, "cbs %s failed: %s\n", args[1].c_str(), err.str().c_str());
  return code;
}

// gen-toy, train-lm, train-classifier, attack under `dir`.
bool pipeline(const std::string& dir, const std::vector<std::string>& toy_flags, const std::vector<std::string>& attack_flags) {
  std::vector<std::string> gen{"gen-toy", "--out", dir};
  gen.insert(gen.end(), toy_flags.begin(), toy_flags.end());
  if (cli(gen) != 0) return false;
  if (cli({"train-lm", "--dataset", dir + "/train.jsonl", "--vocab", dir + "/vocab.txt", "--out", dir + "/models"}) != 0) {
    return false;
  }
  if (cli({"train-classifier", "--dataset", dir + "/train.jsonl", "--word-embeddings", dir + "/word_emb.txt",
           "--stopwords", dir + "/stopwords.txt", "--out", dir + "/models/classifier.json"}) != 0) {
    return false;
  }
  std::vector<std::string> attack{"attack", "--dataset", dir + "/test.jsonl", "--classifier",
                                  dir + "/models/classifier.json", "--mlms", dir + "/models/mlms", "--scorer",
                                  dir + "/models", "--word-embeddings", dir + "/word_emb.txt", "--wp-embeddings",
                                  dir + "/wp_emb.txt", "--vocab", dir + "/vocab.txt", "--stopwords",
                                  dir + "/stopwords.txt", "--entities", dir + "/entities.txt"};
  attack.insert(attack.end(), attack_flags.begin(), attack_flags.end());
  return cli(attack) == 0;
}

Outcome determinism() {
  Outcome o;
  TempDir dir;
  const std::vector<std::string> toy{"--train-per-class", "60", "--test-per-class", "15", "--wp-steps", "300"};
  auto attack = [&](const std::string& run) {
    return std::vector<std::string>{"--schedule", "0.98:5,0.95:5", "--threads", "0", "--setups", "2:0.95,5:0.9",
                                    "--out", (dir / run / "out").string()};
  };
  ::setenv("CBS_SEED", "4242", 1);
  const bool ok1 = pipeline((dir / "run1").string(), toy, attack("run1"));
  const bool ok2 = pipeline((dir / "run2").string(), toy, attack("run2"));
  ::unsetenv("CBS_SEED");
  o.require(ok1 && ok2, "pipeline run failed");
  if (!o.pass) return o;
  std::size_t bytes = 0;
  for (const char* f : {"records.jsonl", "summary.json", "scatter.csv"}) {
    const auto x = read_file(dir / "run1" / "out" / f);
    const auto y = read_file(dir / "run2" / "out" / f);
    o.require(!x.empty() && x == y, std::string(f) + " differs between runs");
    bytes += x.size();
  }
  if (o.pass) o.detail = fmt("records.jsonl, summary.json, scatter.csv identical (%g bytes)", double(bytes));
  return o;
}

Outcome end_to_end() {
  Outcome o;
  TempDir dir;
  const std::string d = (dir / "toy").string();
  // default toy corpus: 2 classes, 250 + 50 examples per class
  std::map<std::size_t, nlohmann::json> summary;
  for (std::size_t block : {1, 3}) {
    const std::vector<std::string> attack{"--schedule", "0.98:50,0.95:50", "--kappa", "1000", "--block",
                                          std::to_string(block), "--threads", "1", "--setups", "5:0.9",
                                          "--seed", "7", "--out", d + "/out" + std::to_string(block)};
    if (block == 1) {
      if (!pipeline(d, {"--seed", "7"}, attack)) {
        o.require(false, "pipeline run failed");
        return o;
      }
    } else if (cli([&] {
                 std::vector<std::string> a{"attack", "--dataset", d + "/test.jsonl", "--classifier",
                                            d + "/models/classifier.json", "--mlms", d + "/models/mlms", "--scorer",
                                            d + "/models", "--word-embeddings", d + "/word_emb.txt",
                                            "--wp-embeddings", d + "/wp_emb.txt", "--vocab", d + "/vocab.txt",
                                            "--stopwords", d + "/stopwords.txt", "--entities", d + "/entities.txt"};
                 a.insert(a.end(), attack.begin(), attack.end());
                 return a;
               }()) != 0) {
      o.require(false, "attack with block 3 failed");
      return o;
    }
    summary[block] = nlohmann::json::parse(read_file(dir / "toy" / ("out" + std::to_string(block)) / "summary.json"));
  }
  const auto& s1 = summary[1];
  const auto& s3 = summary[3];
  o.require(s1["examples"] == 100, "test split is not 100 examples");
  const double clean = s1["clean_accuracy"].get<double>();
  const double acc1 = s1["setups"][0]["after_attack_accuracy"].get<double>();
  const double acc3 = s3["setups"][0]["after_attack_accuracy"].get<double>();
  const double cr1 = s1["setups"][0]["mean_change_rate"].get<double>();
  const double cr3 = s3["setups"][0]["mean_change_rate"].get<double>();
  o.detail = fmt("clean %.2f, after-attack b1 %.2f b3 %.2f", clean, acc1, acc3) + fmt(", change rate b1 %.3f b3 %.3f", cr1, cr3);
  o.require(clean >= 0.90, "clean accuracy below 0.90: " + o.detail);
  o.require(acc1 <= clean - 0.20 + 1e-12, "block 1 drop under 20 points: " + o.detail);
  o.require(acc3 <= clean - 0.20 + 1e-12, "block 3 drop under 20 points: " + o.detail);
  o.require(cr3 > cr1, "block 3 change rate not above block 1: " + o.detail);
  return o;
}

Outcome class_excluded_lms() {
  Outcome o;
  ToyCorpusConfig cfg;
  cfg.classes = 3;
  cfg.train_per_class = 40;
  cfg.test_per_class = 1;
  cfg.wordpiece_steps = 10;
  const auto corpus = generate_toy_corpus(cfg, default_stopwords());
  const WordPieceVocab vocab(corpus.vocab);
  const auto models = train_class_excluded_mlms(corpus.train, vocab);
  o.require(models.size() == 3, "expected three models");
  std::map<std::string, std::size_t> label_of;
  for (const auto& ex : corpus.train.examples) label_of[ex.id] = ex.label;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::size_t own = 0;
    for (const auto& id : models[i].document_ids()) own += label_of.at(id) == i ? 1 : 0;
    o.require(own == 0, fmt("model %g saw %g documents of its own class", double(i), double(own)));
    // Counts must equal a model trained on exactly the other classes.
    std::vector<TokenSequence> others;
    double tokens = 0;
    for (const auto& ex : corpus.train.examples) {
      if (ex.label == i) continue;
      others.push_back(tokenize(ex.text, vocab));
      tokens += static_cast<double>(others.back().size());
    }
    o.require(models[i].documents() == others.size(), "document count mismatch");
    o.require(models[i].same_counts(ToyMaskedLm::train(others, vocab)), "counts differ from the filtered corpus");
    double total = 0;
    for (std::size_t z = 0; z < vocab.size(); ++z) total += models[i].unigram_count(static_cast<TokenId>(z));
    o.require(total == tokens, "token total differs from the filtered corpus");
  }
  if (o.pass) o.detail = fmt("3 models, %g training documents checked", double(corpus.train.size()));
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> unit(0, 1);
  const auto vocab = vocab_with({"a", "b", "c", "d"});
  std::vector<AttackRecord> records(20);
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    r.id = "r" + std::to_string(i);
    r.label = rng() % 3;
    r.clean_prediction = i % 5 == 4 ? (r.label + 1) % 3 : r.label;
    r.originally_misclassified = r.clean_prediction != r.label;
    if (r.originally_misclassified) continue;
    r.rounds_used = 1 + rng() % 2;
    const std::size_t len = 2 + rng() % 8;
    std::vector<TokenId> x;
    for (std::size_t k = 0; k < len; ++k) x.push_back(static_cast<TokenId>(3 + rng() % 4));
    const TokenSequence xs(x, vocab);
    for (std::size_t c = 0; c < 1 + rng() % 4; ++c) {
      std::vector<TokenId> u = x;
      for (auto& t : u) {
        if (unit(rng) < 0.4) t = static_cast<TokenId>(3 + rng() % 4);
      }
      Candidate cand;
      cand.text = "c";
      cand.predicted = unit(rng) < 0.5 ? r.label : (r.label + 1) % 3;
      cand.change_rate = change_rate(xs, TokenSequence(u, vocab));
      o.require(cand.change_rate == oracle::change_rate(x, u), "change_rate differs from the direct count");
      cand.ppl_ratio = 0.5 + 5 * unit(rng);
      cand.similarity = 0.85 + 0.15 * unit(rng);
      r.candidates.push_back(cand);
    }
  }
  const std::vector<ThreatSetup> setups{{2, 0.95}, {5, 0.9}, {3, 0.88}};
  auto filtered = records;
  for (const auto& s : setups) filtered = filter_adversarials(filtered, {s, {}});
  const auto summary = summarize(filtered, setups);

  std::size_t correct = 0;
  std::map<std::size_t, std::size_t> hist;
  for (const auto& r : records) {
    if (r.clean_prediction == r.label) {
      ++correct;
      ++hist[r.rounds_used];
    }
  }
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
  o.require(close(*summary.clean_accuracy, double(correct) / 20.0), "clean accuracy mismatch");
  o.require(summary.rounds_histogram == hist, "rounds histogram mismatch");
  o.require(summary.originally_misclassified == 20 - correct, "misclassified count mismatch");
  std::size_t total_successes = 0;
  for (std::size_t k = 0; k < setups.size(); ++k) {
    const auto t = oracle::setup_totals(records, setups[k].lambda, setups[k].epsilon);
    const auto& s = summary.setups[k];
    total_successes += t.successes;
    o.require(s.successes == t.successes, "success count mismatch at " + setups[k].name());
    o.require(close(*s.after_attack_accuracy, *t.after_attack), "after-attack accuracy mismatch at " + setups[k].name());
    o.require(s.mean_change_rate.has_value() == t.mean_change_rate.has_value(), "mean presence mismatch");
    if (t.mean_change_rate) {
      o.require(close(*s.mean_change_rate, *t.mean_change_rate), "mean change rate mismatch at " + setups[k].name());
      o.require(close(*s.mean_ppl_ratio, *t.mean_ppl), "mean ppl ratio mismatch at " + setups[k].name());
      o.require(close(*s.mean_similarity, *t.mean_similarity), "mean similarity mismatch at " + setups[k].name());
    }
  }
  o.require(total_successes > 0, "scripted records produced no successes");
  if (o.pass) o.detail = fmt("20 records, 3 setups, %g successes", double(total_successes));
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "fast-path similarity equivalence", 10, fast_path_equivalence},
      {2, "enforcing weights", 1, enforcing_math},
      {3, "proposal distribution", 5, proposal_correctness},
      {4, "word-piece embedding training", 30, wordpiece_training},
      {5, "threat-model properties", 5, threat_properties},
      {6, "entity preservation", 60, entity_preservation},
      {7, "pipeline determinism", 0, determinism},
      {8, "end-to-end toy attack", 600, end_to_end},
      {9, "class-excluded masked LMs", 5, class_excluded_lms},
      {10, "metric oracles", 1, metric_oracles},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (c.limit_seconds > 0 && secs >= c.limit_seconds) {
      out.pass = false;
      out.detail += fmt(" (took %.2f s, limit %.0f s)", secs, c.limit_seconds);
    }
    std::printf("%s [%d] %s: %s (%.2f s)\n", out.pass ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str(), secs);
    std::fflush(stdout);
    failures += out.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
