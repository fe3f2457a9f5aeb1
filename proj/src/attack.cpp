#include "cbs/attack.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "cbs/parallel.hpp"

namespace cbs {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Schedules

void RoundSchedule::validate() const {
  if (rounds.empty()) throw std::invalid_argument("round schedule is empty");
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const double s = rounds[i].first;
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("schedule sigma must lie in [0, 1]");
    if (i > 0 && s > rounds[i - 1].first) throw std::invalid_argument("schedule sigmas must not increase");
  }
}

RoundSchedule RoundSchedule::preset(Task task) {
  if (task == Task::kNli) return {{{0.95, 10}, {0.90, 10}}};
  return {{{0.98, 50}, {0.95, 50}}};
}

RoundSchedule RoundSchedule::parse(std::string_view spec) {
  if (spec == "classification") return preset(Task::kClassification);
  if (spec == "nli") return preset(Task::kNli);
  RoundSchedule out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    std::size_t end = spec.find(',', start);
    if (end == std::string_view::npos) end = spec.size();
    const std::string item(spec.substr(start, end - start));
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("schedule entry '" + item + "' is not sigma:iterations");
    try {
      std::size_t used = 0;
      const double sigma = std::stod(item.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument("trailing characters");
      const std::string it = item.substr(colon + 1);
      const long long n = std::stoll(it, &used);
      if (used != it.size() || n < 0) throw std::invalid_argument("bad iteration count");
      out.rounds.emplace_back(sigma, static_cast<std::size_t>(n));
    } catch (const std::logic_error& e) {
      throw std::invalid_argument("bad schedule entry '" + item + "': " + e.what());
    }
    start = end + 1;
  }
  out.validate();
  return out;
}

void AttackStack::validate(std::size_t num_classes) const {
  if (classifier == nullptr || vocab == nullptr || !context) {
    throw std::invalid_argument("attack stack is missing a model");
  }
  if (mlms.size() < num_classes) throw std::invalid_argument("need one class-excluded masked LM per class");
  for (const auto* m : mlms) {
    if (m == nullptr) throw std::invalid_argument("attack stack has a null masked LM");
  }
}

// ---------------------------------------------------------------------------
// Attacking

double change_rate(const TokenSequence& x, const TokenSequence& u) {
  if (x.size() != u.size()) throw std::invalid_argument("change_rate needs sequences of equal length");
  if (x.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t i = 0; i < x.size(); ++i) diff += x.id(i) != u.id(i);
  return static_cast<double>(diff) / static_cast<double>(x.size());
}

AttackRecord attack_example(const Example& example, const AttackStack& stack, const AttackConfig& config,
                            std::mt19937_64& rng) {
  AttackRecord record;
  record.id = example.id;
  record.original = example.text;
  record.premise = example.premise;
  record.label = example.label;
  record.clean_prediction = stack.classifier->predict_label(example.input());
  if (record.clean_prediction != record.label) {
    record.originally_misclassified = true;
    return record;
  }
  if (example.label >= stack.mlms.size()) throw std::invalid_argument("no masked LM for label of " + example.id);

  try {
    const WordPieceVocab& vocab = *stack.vocab;
    const TokenSequence hypothesis = tokenize(example.text, vocab, stack.tokenizer);
    ChainInput input;
    if (config.premise_context && example.premise) {
      const TokenSequence premise = tokenize(*example.premise, vocab, stack.tokenizer);
      input.seed = TokenSequence::concat(premise, hypothesis);
      input.region_begin = premise.size();
    } else {
      input.seed = hypothesis;
    }
    if (stack.ner != nullptr) {
      input.entities =
          entity_phrases(stack.ner->recognize(example.text), input.seed, vocab, stack.tokenizer, input.region_begin);
    }

    SamplerConfig sampler_config;
    sampler_config.block_size = config.block_size;
    sampler_config.policy = config.policy;
    sampler_config.snapshot_every = config.snapshot_every;
    const MaskedLanguageModel& mlm = *stack.mlms[example.label];

    for (std::size_t r = 0; r < config.schedule.rounds.size(); ++r) {
      const auto [sigma, iterations] = config.schedule.rounds[r];
      sampler_config.iterations = iterations;
      const RewritingSampler sampler(mlm, vocab, stack.context, sampler_config, config.kappa);
      record.rounds_used = r + 1;
      const ChainState state = sampler.rewrite(input, sigma, rng);

      const TokenSequence* previous = nullptr;
      for (const auto& snap : state.snapshots) {
        if (previous != nullptr && *previous == snap.tokens) continue;
        previous = &snap.tokens;
        const TokenSequence region = snap.tokens.slice(input.region_begin, snap.tokens.size());
        Candidate c;
        c.text = detokenize(region);
        c.round = r + 1;
        c.step = snap.step;
        c.predicted = stack.classifier->predict_label({c.text, example.premise});
        c.change_rate = change_rate(hypothesis, region);
        record.candidates.push_back(std::move(c));
      }
      if (record.any_flip()) break;
    }
  } catch (const std::exception& e) {
    record.error = e.what();
  }
  return record;
}

const Candidate* best_candidate(const AttackRecord& record, const ThreatSetup& setup) {
  if (record.candidates.empty()) return nullptr;
  const Candidate* best_success = nullptr;
  const Candidate* best_flip = nullptr;
  for (const auto& c : record.candidates) {
    if (!record.flips(c)) continue;
    const double sim = c.similarity.value_or(-2.0);
    if (best_flip == nullptr || sim > best_flip->similarity.value_or(-2.0)) best_flip = &c;
    if (c.ppl_ratio && c.similarity && setup.admits({*c.ppl_ratio, *c.similarity})) {
      if (best_success == nullptr || sim > *best_success->similarity) best_success = &c;
    }
  }
  if (best_success != nullptr && !record.originally_misclassified) return best_success;
  if (best_flip != nullptr) return best_flip;
  return &record.candidates.back();
}

bool record_success(const AttackRecord& record, const ThreatSetup& setup) {
  auto it = record.success.find(setup.name());
  if (it != record.success.end()) return it->second;
  return record_succeeds(record, setup);
}

namespace {

std::optional<double> mean(double sum, std::size_t n) {
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

Summary summarize(const std::vector<AttackRecord>& records, const std::vector<ThreatSetup>& setups,
                  bool exclude_errors) {
  Summary s;
  s.examples = records.size();
  std::size_t clean_correct = 0;
  for (const auto& r : records) {
    if (r.error) ++s.errors;
    if (exclude_errors && r.error) continue;
    ++s.counted;
    if (r.originally_misclassified) {
      ++s.originally_misclassified;
      continue;
    }
    ++clean_correct;
    ++s.rounds_histogram[r.rounds_used];
  }
  s.clean_accuracy = mean(static_cast<double>(clean_correct), s.counted);

  for (const auto& setup : setups) {
    SetupSummary ss;
    ss.setup = setup;
    double cr = 0.0, ppl = 0.0, sim = 0.0;
    std::size_t scored = 0;
    for (const auto& r : records) {
      if (exclude_errors && r.error) continue;
      if (r.originally_misclassified || !record_success(r, setup)) continue;
      ++ss.successes;
      const Candidate* best = best_candidate(r, setup);
      cr += best->change_rate;
      if (best->ppl_ratio && best->similarity) {
        ppl += *best->ppl_ratio;
        sim += *best->similarity;
        ++scored;
      }
    }
    ss.after_attack_accuracy = mean(static_cast<double>(clean_correct - ss.successes), s.counted);
    ss.mean_change_rate = mean(cr, ss.successes);
    ss.mean_ppl_ratio = mean(ppl, scored);
    ss.mean_similarity = mean(sim, scored);
    s.setups.push_back(ss);
  }
  return s;
}

json Summary::to_json() const {
  json j;
  j["examples"] = examples;
  j["counted"] = counted;
  j["originally_misclassified"] = originally_misclassified;
  j["errors"] = errors;
  j["clean_accuracy"] = optional_json(clean_accuracy);
  json hist = json::object();
  for (const auto& [rounds, n] : rounds_histogram) hist[std::to_string(rounds)] = n;
  j["rounds_histogram"] = hist;
  json arr = json::array();
  for (const auto& ss : setups) {
    arr.push_back({
        {"setup", ss.setup.name()},
        {"lambda", ss.setup.lambda},
        {"epsilon", ss.setup.epsilon},
        {"after_attack_accuracy", optional_json(ss.after_attack_accuracy)},
        {"successes", ss.successes},
        {"mean_change_rate", optional_json(ss.mean_change_rate)},
        {"mean_ppl_ratio", optional_json(ss.mean_ppl_ratio)},
        {"mean_similarity", optional_json(ss.mean_similarity)},
    });
  }
  j["setups"] = arr;
  j["reference"] = {{"dataset", "AG"},
                    {"setup", "2:0.95"},
                    {"textfooler_after_attack_accuracy", kReferenceTextFoolerAg},
                    {"rewriting_block1_after_attack_accuracy", kReferenceRewritingAg}};
  return j;
}

AttackResult attack_dataset(const Dataset& dataset, const AttackStack& stack, const AttackConfig& config,
                            const std::vector<ThreatSetup>& setups, const ThreatScorer& scorer) {
  config.schedule.validate();
  stack.validate(dataset.num_classes);
  AttackResult result;
  result.records.resize(dataset.size());
  parallel_for(dataset.size(), config.threads, [&](std::size_t i) {
    auto rng = chain_rng(config.seed, i);
    result.records[i] = attack_example(dataset.examples[i], stack, config, rng);
  });
  for (const auto& r : result.records) {
    if (r.error) spdlog::warn("attack on example {} failed: {}", r.id, *r.error);
  }
  for (const auto& setup : setups) {
    result.records = filter_adversarials(std::move(result.records), {setup, scorer});
  }
  result.summary = summarize(result.records, setups);
  return result;
}

// ---------------------------------------------------------------------------
// Scatter export

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else {
      fields.back() += ch;
    }
  }
  return fields;
}

constexpr const char* kScatterHeader = "id,ppl_ratio,similarity,change_rate,success";

}  // namespace

ScatterTable scatter_rows(const std::vector<AttackRecord>& records, const ThreatSetup& setup) {
  ScatterTable table;
  for (const auto& r : records) {
    const Candidate* best = best_candidate(r, setup);
    if (best == nullptr) {
      ++table.omitted;
      continue;
    }
    if (!best->ppl_ratio || !best->similarity) {
      throw std::invalid_argument("record " + r.id + " has unscored candidates");
    }
    table.rows.push_back({r.id, *best->ppl_ratio, *best->similarity, best->change_rate, record_success(r, setup)});
  }
  return table;
}

void export_scatter(const std::vector<AttackRecord>& records, const ThreatSetup& setup, std::ostream& out) {
  const ScatterTable table = scatter_rows(records, setup);
  out << kScatterHeader << '\n';
  for (const auto& row : table.rows) {
    out << csv_field(row.id) << ',' << format_double(row.ppl_ratio) << ',' << format_double(row.similarity) << ','
        << format_double(row.change_rate) << ',' << (row.success ? 1 : 0) << '\n';
  }
  out << "# omitted: " << table.omitted << '\n';
}

ScatterTable parse_scatter(std::istream& in) {
  ScatterTable table;
  std::string line;
  if (!std::getline(in, line) || line != kScatterHeader) throw ParseError("scatter file has an unexpected header", 1);
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    if (line.rfind("# omitted: ", 0) == 0) {
      table.omitted = std::stoul(line.substr(11));
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 5) throw ParseError("scatter row needs 5 fields", n);
    try {
      ScatterRow row;
      row.id = f[0];
      row.ppl_ratio = std::stod(f[1]);
      row.similarity = std::stod(f[2]);
      row.change_rate = std::stod(f[3]);
      if (f[4] != "0" && f[4] != "1") throw std::invalid_argument("success must be 0 or 1");
      row.success = f[4] == "1";
      table.rows.push_back(std::move(row));
    } catch (const std::logic_error& e) {
      throw ParseError(std::string("bad scatter row: ") + e.what(), n);
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Report

std::string render_report(const Summary& summary) {
  auto pct = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
    return std::string(buf);
  };
  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "examples: " << summary.examples << " (counted " << summary.counted << ", errors " << summary.errors
      << ")\n";
  out << "clean accuracy: " << pct(summary.clean_accuracy) << "%\n";
  out << "originally misclassified: " << summary.originally_misclassified << "\n\n";
  out << "setup (lambda:epsilon) | after-attack acc % | successes | change rate | ppl ratio | similarity\n";
  for (const auto& s : summary.setups) {
    out << s.setup.name() << " | " << pct(s.after_attack_accuracy) << " | " << s.successes << " | "
        << num(s.mean_change_rate) << " | " << num(s.mean_ppl_ratio) << " | " << num(s.mean_similarity) << '\n';
  }
  out << "\nrounds used:";
  if (summary.rounds_histogram.empty()) out << " none";
  for (const auto& [rounds, n] : summary.rounds_histogram) out << ' ' << rounds << "->" << n;
  out << "\n\n";
  out << "reference (AG's News, lambda=2, epsilon=0.95, pretrained models): TextFooler " << kReferenceTextFoolerAg
      << "%, rewriting sampler block=1 " << kReferenceRewritingAg << "%. Not comparable with toy runs.\n";
  return out.str();
}

}  // namespace cbs
