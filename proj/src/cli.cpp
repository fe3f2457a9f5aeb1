#include "cbs/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbs/attack.hpp"
#include "cbs/dataset.hpp"
#include "cbs/remote_model.hpp"
#include "cbs/sampler.hpp"
#include "cbs/threat.hpp"
#include "cbs/toy_corpus.hpp"
#include "cbs/toy_models.hpp"
#include "cbs/wordpiece_training.hpp"

namespace cbs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// JSON config: top-level keys mirror the flag names of the invoked
// subcommand; an object keyed by a subcommand name applies to that
// subcommand only.
class JsonConfig : public CLI::Config {
 public:
  JsonConfig(std::string active, std::set<std::string> subcommands)
      : active_(std::move(active)), subcommands_(std::move(subcommands)) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (subcommands_.count(key) != 0) {
        if (!value.is_object()) throw CLI::ConfigError("config section '" + key + "' must be an object");
        if (key != active_) continue;
        for (const auto& [k, v] : value.items()) items.push_back(item(k, v));
      } else if (key != "config") {
        items.push_back(item(key, value));
      }
    }
    return items;
  }

 private:
  CLI::ConfigItem item(const std::string& key, const json& value) const {
    CLI::ConfigItem it;
    if (!active_.empty()) it.parents = {active_};
    it.name = key;
    auto scalar = [&](const json& v) {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
      if (v.is_number()) return v.dump();
      throw CLI::ConfigError("config value for '" + key + "' must be a scalar or a list of scalars");
    };
    if (value.is_array()) {
      for (const auto& v : value) it.inputs.push_back(scalar(v));
    } else {
      it.inputs.push_back(scalar(value));
    }
    return it;
  }

  std::string active_;
  std::set<std::string> subcommands_;
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const fs::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

StopwordSet load_stopwords(const std::string& path) {
  return path.empty() ? default_stopwords() : StopwordSet::load(path);
}

std::shared_ptr<const MaskedLanguageModel> load_mlm(const std::string& spec, const WordPieceVocab& vocab) {
  if (Endpoint::looks_like_endpoint(spec)) {
    return std::get<std::shared_ptr<MaskedLanguageModel>>(connect_external_model(spec, ModelRole::kMlm, vocab.size()));
  }
  return std::make_shared<ToyMaskedLm>(ToyMaskedLm::from_json(read_json_file(spec), vocab));
}

std::vector<std::shared_ptr<const MaskedLanguageModel>> load_mlms(const std::vector<std::string>& specs,
                                                                  const WordPieceVocab& vocab, std::size_t classes) {
  std::vector<std::shared_ptr<const MaskedLanguageModel>> out;
  if (specs.size() == 1 && fs::is_directory(specs.front())) {
    for (std::size_t i = 0; i < classes; ++i) {
      out.push_back(load_mlm((fs::path(specs.front()) / ("mlm_" + std::to_string(i) + ".json")).string(), vocab));
    }
    return out;
  }
  if (specs.size() != classes) {
    throw std::invalid_argument("--mlms needs a directory or exactly one model per class (" +
                                std::to_string(classes) + ")");
  }
  for (const auto& s : specs) out.push_back(load_mlm(s, vocab));
  return out;
}

std::shared_ptr<const CausalScorer> load_scorer(const std::string& spec) {
  if (Endpoint::looks_like_endpoint(spec)) {
    return std::get<std::shared_ptr<CausalScorer>>(connect_external_model(spec, ModelRole::kScorer));
  }
  fs::path path = spec;
  if (fs::is_directory(path)) path /= "scorer.json";
  return std::make_shared<NgramScorer>(NgramScorer::from_json(read_json_file(path)));
}

std::shared_ptr<const Classifier> load_classifier(const std::string& spec, std::size_t classes,
                                                  std::shared_ptr<const EmbeddingTable> table,
                                                  std::shared_ptr<const StopwordSet> stop) {
  if (Endpoint::looks_like_endpoint(spec)) {
    return std::get<std::shared_ptr<Classifier>>(connect_external_model(spec, ModelRole::kClassifier, classes));
  }
  if (!table) throw std::invalid_argument("a local classifier needs --word-embeddings");
  return std::make_shared<LogisticClassifier>(LogisticClassifier::from_json(read_json_file(spec), table, stop));
}

std::shared_ptr<const EntityRecognizer> load_ner(const std::string& spec) {
  if (spec.empty()) return nullptr;
  if (Endpoint::looks_like_endpoint(spec)) {
    return std::get<std::shared_ptr<EntityRecognizer>>(connect_external_model(spec, ModelRole::kNer));
  }
  return std::make_shared<DictionaryNer>(DictionaryNer::load(spec));
}

std::vector<ThreatSetup> parse_setups(const std::string& spec) { return ThreatSetup::parse_list(spec); }

PositionPolicy parse_policy(const std::string& s) {
  if (s == "sweep") return PositionPolicy::kSweep;
  if (s == "random") return PositionPolicy::kRandom;
  throw std::invalid_argument("unknown position policy '" + s + "'");
}

const std::vector<std::string> kSubcommands = {"gen-toy", "train-wp-emb", "train-lm", "train-classifier",
                                               "sample",  "attack",       "filter",   "report"};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Constrained rewriting sampler toolkit: generate adversarial rewrites under a fluency and "
               "semantic-similarity threat model.",
               "cbs"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string active;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (std::find(kSubcommands.begin(), kSubcommands.end(), args[i]) != kSubcommands.end()) {
      active = args[i];
      break;
    }
  }
  app.config_formatter(
      std::make_shared<JsonConfig>(active, std::set<std::string>(kSubcommands.begin(), kSubcommands.end())));
  app.set_config("--config", "", "JSON file with flag values; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);

  std::function<void()> action;
  std::string task_str = "classification";
  bool lowercase = false;
  std::size_t threads = 1;

  auto add_seed = [](CLI::App* sub, std::uint64_t& seed) {
    sub->add_option("--seed", seed, "Random seed (env CBS_SEED)")->envname("CBS_SEED")->capture_default_str();
  };

  // gen-toy ------------------------------------------------------------------
  ToyCorpusConfig toy;
  std::string toy_out, toy_stop;
  auto* gen = app.add_subcommand("gen-toy", "Generate a synthetic topic corpus with embeddings and vocabulary");
  gen->add_option("--out", toy_out, "Output directory")->required();
  gen->add_option("--classes", toy.classes, "Number of classes")->capture_default_str();
  gen->add_option("--class-words", toy.class_words, "Vocabulary size per class")->capture_default_str();
  gen->add_option("--shared-words", toy.shared_words, "Shared vocabulary size")->capture_default_str();
  gen->add_option("--train-per-class", toy.train_per_class, "Training examples per class")->capture_default_str();
  gen->add_option("--test-per-class", toy.test_per_class, "Test examples per class")->capture_default_str();
  gen->add_option("--min-length", toy.min_length, "Minimum words per sentence")->capture_default_str();
  gen->add_option("--max-length", toy.max_length, "Maximum words per sentence")->capture_default_str();
  gen->add_option("--dimension", toy.dimension, "Embedding dimension")->capture_default_str();
  gen->add_option("--coherence", toy.coherence, "Chance of following a successor word")->capture_default_str();
  gen->add_option("--successors", toy.successors, "Successor words per content word")->capture_default_str();
  gen->add_option("--topic", toy.topic, "Weight of the shared topic axis")->capture_default_str();
  gen->add_option("--stopword-rate", toy.stopword_rate, "Share of stopword slots")->capture_default_str();
  gen->add_option("--class-word-rate", toy.class_word_rate, "Share of class-word slots")->capture_default_str();
  gen->add_option("--inflection-rate", toy.inflection_rate, "Chance of a suffix piece")->capture_default_str();
  gen->add_option("--class-strength", toy.class_strength, "Weight of the class axis")->capture_default_str();
  gen->add_option("--noise", toy.noise, "Embedding noise scale")->capture_default_str();
  gen->add_option("--contamination", toy.contamination, "Chance of an off-class word")->capture_default_str();
  gen->add_option("--entities", toy.entities, "Number of entity names")->capture_default_str();
  gen->add_option("--entity-rate", toy.entity_rate, "Chance a sentence mentions an entity")->capture_default_str();
  gen->add_option("--wp-steps", toy.wordpiece_steps, "Word-piece embedding training steps")->capture_default_str();
  gen->add_option("--stopwords", toy_stop, "Stopword list (default: shipped list)");
  add_seed(gen, toy.seed);
  gen->callback([&] { action = [&] {
    const ToyCorpus corpus = generate_toy_corpus(toy, load_stopwords(toy_stop));
    write_toy_corpus(corpus, toy_out);
    out << "wrote toy corpus to " << toy_out << " (" << corpus.train.size() << " train, " << corpus.test.size()
        << " test, " << corpus.vocab.size() << " pieces)\n";
  }; });

  // train-wp-emb ---------------------------------------------------------------
  std::string wp_corpus, wp_words, wp_vocab, wp_out, wp_init = "identical";
  WordPieceTrainingConfig wp;
  auto* twp = app.add_subcommand("train-wp-emb", "Fit word-piece embeddings to word embeddings (L1)");
  twp->add_option("--dataset", wp_corpus, "Dataset JSONL whose words form the corpus")->required();
  twp->add_option("--task", task_str, "classification or nli")->capture_default_str();
  twp->add_option("--word-embeddings", wp_words, "Word embedding file")->required();
  twp->add_option("--vocab", wp_vocab, "Word-piece vocabulary file")->required();
  twp->add_option("--out", wp_out, "Output embedding file")->required();
  twp->add_option("--steps", wp.steps, "SGD steps")->capture_default_str();
  twp->add_option("--batch", wp.batch_words, "Words per step")->capture_default_str();
  twp->add_option("--lr", wp.learning_rate, "Base learning rate")->capture_default_str();
  twp->add_option("--init", wp_init, "identical or zeros")->check(CLI::IsMember({"identical", "zeros"}));
  twp->add_flag("--lowercase", lowercase, "Lowercase before tokenizing");
  add_seed(twp, wp.seed);
  twp->callback([&] { action = [&] {
    const Dataset ds = load_dataset(wp_corpus, parse_task(task_str));
    std::vector<std::string> words;
    for (const auto& ex : ds.examples) {
      for (auto& w : split_whitespace(ex.text)) words.push_back(std::move(w));
      if (ex.premise) {
        for (auto& w : split_whitespace(*ex.premise)) words.push_back(std::move(w));
      }
    }
    wp.init = wp_init == "zeros" ? WordPieceInit::kZeros : WordPieceInit::kIdenticalWord;
    wp.tokenizer.lowercase = lowercase;
    const auto table = load_word_embeddings(wp_words, EmbeddingLevel::kWord);
    const auto result = train_wordpiece_embeddings(words, table, WordPieceVocab::load(wp_vocab), wp);
    save_embeddings(result.table, wp_out);
    out << "objective per word: " << result.objective_per_word() << '\n';
  }; });

  // train-lm -------------------------------------------------------------------
  std::string lm_data, lm_vocab, lm_out;
  ToyMlmConfig mlm_cfg;
  CausalConfig causal_cfg;
  auto* tlm = app.add_subcommand("train-lm", "Train class-excluded masked LMs and the perplexity scorer");
  tlm->add_option("--dataset", lm_data, "Training dataset JSONL")->required();
  tlm->add_option("--task", task_str, "classification or nli")->capture_default_str();
  tlm->add_option("--vocab", lm_vocab, "Word-piece vocabulary file")->required();
  tlm->add_option("--out", lm_out, "Output directory (mlms/mlm_<label>.json, scorer.json)")->required();
  tlm->add_option("--smoothing", mlm_cfg.smoothing, "Masked LM add-k smoothing")->capture_default_str();
  tlm->add_option("--scorer-smoothing", causal_cfg.smoothing, "Scorer add-k smoothing")->capture_default_str();
  tlm->add_option("--order", causal_cfg.order, "Scorer n-gram order (1 or 2)")->check(CLI::Range(1, 2));
  tlm->add_flag("--lowercase", lowercase, "Lowercase before tokenizing");
  tlm->callback([&] { action = [&] {
    const Dataset ds = load_dataset(lm_data, parse_task(task_str));
    const WordPieceVocab vocab = WordPieceVocab::load(lm_vocab);
    TokenizerOptions tok;
    tok.lowercase = lowercase;
    const auto mlms = train_class_excluded_mlms(ds, vocab, mlm_cfg, tok);
    fs::create_directories(fs::path(lm_out) / "mlms");
    for (std::size_t i = 0; i < mlms.size(); ++i) {
      write_json_file(mlms[i].to_json(), fs::path(lm_out) / "mlms" / ("mlm_" + std::to_string(i) + ".json"));
    }
    std::vector<std::string> sentences;
    for (const auto& ex : ds.examples) {
      sentences.push_back(ex.text);
      if (ex.premise) sentences.push_back(*ex.premise);
    }
    write_json_file(NgramScorer::train(sentences, causal_cfg).to_json(), fs::path(lm_out) / "scorer.json");
    out << "trained " << mlms.size() << " masked LMs and a scorer in " << lm_out << '\n';
  }; });

  // train-classifier -----------------------------------------------------------
  std::string cls_data, cls_words, cls_stop, cls_out;
  ClassifierTrainingConfig cls_cfg;
  auto* tcl = app.add_subcommand("train-classifier", "Train the bundled logistic-regression classifier");
  tcl->add_option("--dataset", cls_data, "Training dataset JSONL")->required();
  tcl->add_option("--task", task_str, "classification or nli")->capture_default_str();
  tcl->add_option("--word-embeddings", cls_words, "Word embedding file")->required();
  tcl->add_option("--stopwords", cls_stop, "Stopword list (default: shipped list)");
  tcl->add_option("--out", cls_out, "Output model file")->required();
  tcl->add_option("--epochs", cls_cfg.epochs, "Gradient steps")->capture_default_str();
  tcl->add_option("--lr", cls_cfg.learning_rate, "Learning rate")->capture_default_str();
  tcl->callback([&] { action = [&] {
    const Dataset ds = load_dataset(cls_data, parse_task(task_str));
    auto table = std::make_shared<const EmbeddingTable>(load_word_embeddings(cls_words, EmbeddingLevel::kWord));
    auto stop = std::make_shared<const StopwordSet>(load_stopwords(cls_stop));
    const auto model = LogisticClassifier::train(ds, table, stop, cls_cfg);
    write_json_file(model.to_json(), cls_out);
    std::size_t correct = 0;
    for (const auto& ex : ds.examples) correct += model.predict_label(ex.input()) == ex.label;
    out << "training accuracy: " << (ds.size() ? static_cast<double>(correct) / ds.size() : 0.0) << '\n';
  }; });

  // sample ---------------------------------------------------------------------
  std::string s_input, s_mlm, s_vocab, s_wp, s_stop, s_ner, s_out, s_policy = "sweep";
  double s_sigma = 0.95, s_kappa = kDefaultKappa;
  SamplerConfig s_cfg;
  std::uint64_t s_seed = 0;
  auto* smp = app.add_subcommand("sample", "Run rewriting chains on texts and emit their trajectories");
  smp->add_option("--input", s_input, "JSONL with {\"id\",\"text\"} per line")->required();
  smp->add_option("--mlm", s_mlm, "Masked LM file or endpoint (tcp://host:port, exec:cmd)")->required();
  smp->add_option("--vocab", s_vocab, "Word-piece vocabulary file")->required();
  smp->add_option("--wp-embeddings", s_wp, "Word-piece embedding file")->required();
  smp->add_option("--stopwords", s_stop, "Stopword list (default: shipped list)");
  smp->add_option("--entities", s_ner, "Entity list file or NER endpoint");
  smp->add_option("--sigma", s_sigma, "Similarity threshold")->capture_default_str();
  smp->add_option("--kappa", s_kappa, "Penalty strength")->capture_default_str();
  smp->add_option("--block", s_cfg.block_size, "Block size")->capture_default_str();
  smp->add_option("--iterations", s_cfg.iterations, "Iterations")->capture_default_str();
  smp->add_option("--snapshot-every", s_cfg.snapshot_every, "Snapshot cadence in steps")->capture_default_str();
  smp->add_option("--policy", s_policy, "sweep or random")->check(CLI::IsMember({"sweep", "random"}));
  smp->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
  smp->add_option("--out", s_out, "Output JSONL (default: stdout)");
  smp->add_flag("--lowercase", lowercase, "Lowercase before tokenizing");
  add_seed(smp, s_seed);
  smp->callback([&] { action = [&] {
    const WordPieceVocab vocab = WordPieceVocab::load(s_vocab);
    const auto mlm = load_mlm(s_mlm, vocab);
    const auto ner = load_ner(s_ner);
    auto context = std::make_shared<const SemanticContext>(
        vocab, load_word_embeddings(s_wp, EmbeddingLevel::kWordPiece), load_stopwords(s_stop));
    s_cfg.policy = parse_policy(s_policy);
    const RewritingSampler sampler(*mlm, vocab, context, s_cfg, s_kappa);
    TokenizerOptions tok;
    tok.lowercase = lowercase;

    std::ifstream in(s_input);
    if (!in) throw std::runtime_error("cannot read " + s_input);
    std::vector<std::string> ids;
    std::vector<ChainInput> inputs;
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const json j = json::parse(line);
      const std::string text = j.at("text").get<std::string>();
      ids.push_back(j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                                     : std::to_string(ids.size()));
      ChainInput input;
      input.seed = tokenize(text, vocab, tok);
      if (ner) input.entities = entity_phrases(ner->recognize(text), input.seed, vocab, tok);
      inputs.push_back(std::move(input));
    }
    const auto chains = batch_sample(sampler, inputs, s_sigma, s_seed, threads);
    std::ofstream file;
    std::ostream* sink = &out;
    if (!s_out.empty()) {
      file = open_out(s_out);
      sink = &file;
    }
    for (std::size_t i = 0; i < chains.size(); ++i) {
      json snaps = json::array();
      json steps = json::array();
      for (const auto& s : chains[i].snapshots) {
        snaps.push_back(detokenize(s.tokens));
        steps.push_back(s.step);
      }
      *sink << json{{"id", ids[i]}, {"snapshots", snaps}, {"steps", steps}}.dump() << '\n';
    }
  }; });

  // attack ---------------------------------------------------------------------
  std::string a_data, a_cls, a_scorer, a_words, a_wp, a_vocab, a_stop, a_ner, a_schedule, a_setups = "2:0.95,5:0.9",
                                                                                          a_out, a_policy = "sweep";
  std::vector<std::string> a_mlms;
  std::optional<std::size_t> a_classes;
  std::size_t a_limit = 0;
  AttackConfig a_cfg;
  auto* atk = app.add_subcommand("attack", "Attack a dataset and write records.jsonl, summary.json, scatter.csv");
  atk->add_option("--dataset", a_data, "Dataset JSONL to attack")->required();
  atk->add_option("--task", task_str, "classification or nli")->capture_default_str();
  atk->add_option("--num-classes", a_classes, "Class count (default: from the labels)");
  atk->add_option("--classifier", a_cls, "Classifier file or endpoint")->required();
  atk->add_option("--mlms", a_mlms, "Directory of mlm_<label>.json, or one file/endpoint per class")
      ->required()
      ->delimiter(',');
  atk->add_option("--scorer", a_scorer, "Scorer file, directory with scorer.json, or endpoint")->required();
  atk->add_option("--word-embeddings", a_words, "Word embedding file (threat model, local classifier)")->required();
  atk->add_option("--wp-embeddings", a_wp, "Word-piece embedding file")->required();
  atk->add_option("--vocab", a_vocab, "Word-piece vocabulary file")->required();
  atk->add_option("--stopwords", a_stop, "Stopword list (default: shipped list)");
  atk->add_option("--entities", a_ner, "Entity list file or NER endpoint");
  atk->add_option("--schedule", a_schedule, "classification, nli, or sigma:iterations,... (default: task preset)");
  atk->add_option("--block", a_cfg.block_size, "Block size")->capture_default_str();
  atk->add_option("--kappa", a_cfg.kappa, "Penalty strength")->capture_default_str();
  atk->add_option("--snapshot-every", a_cfg.snapshot_every, "Snapshot cadence in steps")->capture_default_str();
  atk->add_option("--policy", a_policy, "sweep or random")->check(CLI::IsMember({"sweep", "random"}));
  atk->add_option("--setups", a_setups, "Threat setups lambda:epsilon,...")->capture_default_str();
  atk->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
  atk->add_option("--limit", a_limit, "Attack only the first N examples (0 = all)");
  atk->add_flag("--premise-context", a_cfg.premise_context, "NLI: condition the masked LM on the premise too");
  atk->add_flag("--lowercase", lowercase, "Lowercase before tokenizing");
  atk->add_option("--out", a_out, "Output directory")->required();
  add_seed(atk, a_cfg.seed);
  atk->callback([&] { action = [&] {
    const Task task = parse_task(task_str);
    Dataset ds = load_dataset(a_data, task, a_classes);
    if (a_limit > 0 && ds.examples.size() > a_limit) ds.examples.resize(a_limit);
    const WordPieceVocab vocab = WordPieceVocab::load(a_vocab);
    auto stop = std::make_shared<const StopwordSet>(load_stopwords(a_stop));
    auto words = std::make_shared<const EmbeddingTable>(load_word_embeddings(a_words, EmbeddingLevel::kWord));
    auto context = std::make_shared<const SemanticContext>(
        vocab, load_word_embeddings(a_wp, EmbeddingLevel::kWordPiece), *stop);
    const auto classifier = load_classifier(a_cls, ds.num_classes, words, stop);
    const auto mlms = load_mlms(a_mlms, vocab, ds.num_classes);
    const auto scorer = load_scorer(a_scorer);
    const auto ner = load_ner(a_ner);

    AttackStack stack;
    stack.classifier = classifier.get();
    for (const auto& m : mlms) stack.mlms.push_back(m.get());
    stack.vocab = &vocab;
    stack.context = context;
    stack.ner = ner.get();
    stack.tokenizer.lowercase = lowercase;

    a_cfg.schedule = a_schedule.empty() ? RoundSchedule::preset(task) : RoundSchedule::parse(a_schedule);
    a_cfg.policy = parse_policy(a_policy);
    a_cfg.threads = threads;
    const auto setups = parse_setups(a_setups);
    const ThreatScorer threat{scorer.get(), words.get(), stop.get()};
    const AttackResult result = attack_dataset(ds, stack, a_cfg, setups, threat);

    fs::create_directories(a_out);
    {
      auto f = open_out(fs::path(a_out) / "records.jsonl");
      write_records(result.records, f);
    }
    write_json_file(result.summary.to_json(), fs::path(a_out) / "summary.json");
    {
      auto f = open_out(fs::path(a_out) / "scatter.csv");
      export_scatter(result.records, setups.front(), f);
    }
    out << render_report(result.summary);
  }; });

  // filter ---------------------------------------------------------------------
  std::string f_records, f_scorer, f_words, f_stop, f_setups = "2:0.95,5:0.9", f_out;
  auto* flt = app.add_subcommand("filter", "Score candidates and recompute success flags under threat setups");
  flt->add_option("--records", f_records, "records.jsonl")->required();
  flt->add_option("--scorer", f_scorer, "Scorer file, directory or endpoint (needed for unscored candidates)");
  flt->add_option("--word-embeddings", f_words, "Word embedding file (needed for unscored candidates)");
  flt->add_option("--stopwords", f_stop, "Stopword list (default: shipped list)");
  flt->add_option("--setups", f_setups, "Threat setups lambda:epsilon,...")->capture_default_str();
  flt->add_option("--out", f_out, "Output records.jsonl")->required();
  flt->callback([&] { action = [&] {
    auto records = load_records(f_records);
    std::shared_ptr<const CausalScorer> scorer;
    std::shared_ptr<const EmbeddingTable> words;
    const StopwordSet stop = load_stopwords(f_stop);
    ThreatScorer threat{nullptr, nullptr, &stop};
    if (!f_scorer.empty() || !f_words.empty()) {
      if (f_scorer.empty() || f_words.empty()) {
        throw std::invalid_argument("--scorer and --word-embeddings must be given together");
      }
      scorer = load_scorer(f_scorer);
      words = std::make_shared<const EmbeddingTable>(load_word_embeddings(f_words, EmbeddingLevel::kWord));
      threat.scorer = scorer.get();
      threat.word_table = words.get();
    }
    std::size_t successes = 0;
    for (const auto& setup : parse_setups(f_setups)) {
      records = filter_adversarials(std::move(records), {setup, threat});
    }
    for (const auto& r : records) {
      for (const auto& [k, v] : r.success) successes += v;
    }
    auto f = open_out(f_out);
    write_records(records, f);
    out << "filtered " << records.size() << " records (" << successes << " successes over all setups)\n";
  }; });

  // report ---------------------------------------------------------------------
  std::string r_records, r_setups = "2:0.95,5:0.9", r_summary, r_scatter, r_out;
  bool r_exclude = false;
  auto* rep = app.add_subcommand("report", "Summarize attack records");
  rep->add_option("--records", r_records, "records.jsonl")->required();
  rep->add_option("--setups", r_setups, "Threat setups lambda:epsilon,...")->capture_default_str();
  rep->add_option("--summary", r_summary, "Also write summary JSON here");
  rep->add_option("--scatter", r_scatter, "Also write scatter CSV for the first setup here");
  rep->add_option("--out", r_out, "Write the report here instead of stdout");
  rep->add_flag("--exclude-errors", r_exclude, "Leave failed examples out of the denominators");
  rep->callback([&] { action = [&] {
    const auto records = load_records(r_records);
    const auto setups = parse_setups(r_setups);
    const Summary summary = summarize(records, setups, r_exclude);
    if (!r_summary.empty()) write_json_file(summary.to_json(), r_summary);
    if (!r_scatter.empty()) {
      auto f = open_out(r_scatter);
      export_scatter(records, setups.front(), f);
    }
    if (r_out.empty()) {
      out << render_report(summary);
    } else {
      auto f = open_out(r_out);
      f << render_report(summary);
    }
  }; });

  for (auto* sub : app.get_subcommands({})) sub->allow_config_extras(CLI::config_extras_mode::error);

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  try {
    if (action) action();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace cbs
