#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cbs {

/// One sampled rewrite of the attacked text (the hypothesis for NLI).
struct Candidate {
  std::string text;
  std::size_t round = 0;
  std::size_t step = 0;
  std::size_t predicted = 0;
  double change_rate = 0.0;
  // Threat-model scores, filled once by score_candidates().
  std::optional<double> ppl_ratio;
  std::optional<double> similarity;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct AttackRecord {
  std::string id;
  std::string original;
  std::optional<std::string> premise;
  std::size_t label = 0;
  std::size_t clean_prediction = 0;
  bool originally_misclassified = false;
  std::vector<Candidate> candidates;
  /// Keyed by ThreatSetup::name(), e.g. "2:0.95".
  std::map<std::string, bool> success;
  std::size_t rounds_used = 0;
  std::optional<std::string> error;

  bool flips(const Candidate& c) const { return c.predicted != label; }
  bool any_flip() const;

  friend bool operator==(const AttackRecord&, const AttackRecord&) = default;
};

nlohmann::json to_json(const AttackRecord& record);
AttackRecord record_from_json(const nlohmann::json& j);

void write_records(const std::vector<AttackRecord>& records, std::ostream& out);
void save_records(const std::vector<AttackRecord>& records, const std::filesystem::path& path);
std::vector<AttackRecord> load_records(const std::filesystem::path& path);

}  // namespace cbs
