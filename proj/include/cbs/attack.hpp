#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cbs/dataset.hpp"
#include "cbs/record.hpp"
#include "cbs/sampler.hpp"
#include "cbs/threat.hpp"

namespace cbs {

/// (sigma, iterations) per round; sigmas must not increase.
struct RoundSchedule {
  std::vector<std::pair<double, std::size_t>> rounds;

  void validate() const;
  /// classification: 0.98/50 then 0.95/50; nli: 0.95/10 then 0.90/10.
  static RoundSchedule preset(Task task);
  /// "classification", "nli", or an explicit list "0.98:50,0.95:50".
  static RoundSchedule parse(std::string_view spec);
};

inline constexpr double kDefaultKappa = 1000.0;

/// Reference accuracies (%) on AG's News at lambda=2, epsilon=0.95 for the
/// report footer. Not reproduced by the toy pipeline.
inline constexpr double kReferenceTextFoolerAg = 84.0;
inline constexpr double kReferenceRewritingAg = 76.8;

/// Models shared by every attacked example. Non-owning.
struct AttackStack {
  const Classifier* classifier = nullptr;
  /// mlms[y] never saw examples labeled y; used to rewrite those examples.
  std::vector<const MaskedLanguageModel*> mlms;
  const WordPieceVocab* vocab = nullptr;
  std::shared_ptr<const SemanticContext> context;
  const EntityRecognizer* ner = nullptr;
  TokenizerOptions tokenizer;

  void validate(std::size_t num_classes) const;
};

struct AttackConfig {
  RoundSchedule schedule = RoundSchedule::preset(Task::kClassification);
  double kappa = kDefaultKappa;
  std::size_t block_size = 1;
  PositionPolicy policy = PositionPolicy::kSweep;
  std::size_t snapshot_every = 10;
  /// NLI: condition the LM on the premise as well as the hypothesis.
  bool premise_context = false;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// Fraction of positions holding different pieces. Throws
/// std::invalid_argument on a length mismatch.
double change_rate(const TokenSequence& x, const TokenSequence& u);

/// Runs the rounds of `config.schedule` on one example. Every snapshot (and
/// hence every iteration end) becomes a candidate labeled by the classifier;
/// later rounds are skipped once a candidate flips the label. Sampling errors
/// are stored in `record.error` with the candidates gathered so far.
AttackRecord attack_example(const Example& example, const AttackStack& stack, const AttackConfig& config,
                            std::mt19937_64& rng);

struct SetupSummary {
  ThreatSetup setup;
  std::optional<double> after_attack_accuracy;
  std::size_t successes = 0;
  std::optional<double> mean_change_rate;
  std::optional<double> mean_ppl_ratio;
  std::optional<double> mean_similarity;
};

struct Summary {
  std::size_t examples = 0;
  std::size_t counted = 0;
  std::size_t originally_misclassified = 0;
  std::size_t errors = 0;
  std::optional<double> clean_accuracy;
  std::vector<SetupSummary> setups;
  std::map<std::size_t, std::size_t> rounds_histogram;

  nlohmann::json to_json() const;
};

/// Candidate plotted for a record under `setup`: the most similar successful
/// candidate, else the most similar flip, else the last one. Null when the
/// record has no candidates.
const Candidate* best_candidate(const AttackRecord& record, const ThreatSetup& setup);

/// Success under `setup`, from the stored flag when present.
bool record_success(const AttackRecord& record, const ThreatSetup& setup);

/// Accuracies are fractions in [0, 1]; means run over the best candidates of
/// successful records. With `exclude_errors`, records carrying an error are
/// left out of every denominator; otherwise they count as failed attacks.
Summary summarize(const std::vector<AttackRecord>& records, const std::vector<ThreatSetup>& setups,
                  bool exclude_errors = false);

struct AttackResult {
  std::vector<AttackRecord> records;
  Summary summary;
};

/// attack_example over the dataset (example i draws from
/// chain_rng(config.seed, i)), then filtering under each setup.
AttackResult attack_dataset(const Dataset& dataset, const AttackStack& stack, const AttackConfig& config,
                            const std::vector<ThreatSetup>& setups, const ThreatScorer& scorer);

struct ScatterRow {
  std::string id;
  double ppl_ratio = 0.0;
  double similarity = 0.0;
  double change_rate = 0.0;
  bool success = false;
  friend bool operator==(const ScatterRow&, const ScatterRow&) = default;
};

struct ScatterTable {
  std::vector<ScatterRow> rows;
  std::size_t omitted = 0;
};

ScatterTable scatter_rows(const std::vector<AttackRecord>& records, const ThreatSetup& setup);
/// CSV with header id,ppl_ratio,similarity,change_rate,success and a
/// "# omitted: N" footer.
void export_scatter(const std::vector<AttackRecord>& records, const ThreatSetup& setup, std::ostream& out);
ScatterTable parse_scatter(std::istream& in);

/// Human-readable report with the reference footer.
std::string render_report(const Summary& summary);

}  // namespace cbs
