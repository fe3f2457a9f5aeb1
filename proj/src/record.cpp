#include "cbs/record.hpp"

#include <fstream>
#include <ostream>
#include <stdexcept>

#include "cbs/lexicon.hpp"

namespace cbs {

using nlohmann::json;

bool AttackRecord::any_flip() const {
  for (const auto& c : candidates) {
    if (flips(c)) return true;
  }
  return false;
}

json to_json(const AttackRecord& record) {
  json j;
  j["id"] = record.id;
  j["original"] = record.original;
  if (record.premise) j["premise"] = *record.premise;
  j["label"] = record.label;
  j["clean_prediction"] = record.clean_prediction;
  j["originally_misclassified"] = record.originally_misclassified;
  j["rounds_used"] = record.rounds_used;
  json cands = json::array();
  for (const auto& c : record.candidates) {
    json jc;
    jc["text"] = c.text;
    jc["round"] = c.round;
    jc["step"] = c.step;
    jc["predicted"] = c.predicted;
    jc["change_rate"] = c.change_rate;
    jc["ppl_ratio"] = c.ppl_ratio ? json(*c.ppl_ratio) : json(nullptr);
    jc["similarity"] = c.similarity ? json(*c.similarity) : json(nullptr);
    cands.push_back(std::move(jc));
  }
  j["candidates"] = std::move(cands);
  j["success"] = record.success;
  if (record.error) j["error"] = *record.error;
  return j;
}

namespace {

std::optional<double> optional_number(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

}  // namespace

AttackRecord record_from_json(const json& j) {
  AttackRecord r;
  r.id = j.at("id").get<std::string>();
  r.original = j.at("original").get<std::string>();
  if (j.contains("premise")) r.premise = j.at("premise").get<std::string>();
  r.label = j.at("label").get<std::size_t>();
  r.clean_prediction = j.at("clean_prediction").get<std::size_t>();
  r.originally_misclassified = j.value("originally_misclassified", false);
  r.rounds_used = j.value("rounds_used", std::size_t{0});
  for (const auto& jc : j.value("candidates", json::array())) {
    Candidate c;
    c.text = jc.at("text").get<std::string>();
    c.round = jc.value("round", std::size_t{0});
    c.step = jc.value("step", std::size_t{0});
    c.predicted = jc.at("predicted").get<std::size_t>();
    c.change_rate = jc.value("change_rate", 0.0);
    c.ppl_ratio = optional_number(jc, "ppl_ratio");
    c.similarity = optional_number(jc, "similarity");
    r.candidates.push_back(std::move(c));
  }
  if (j.contains("success")) r.success = j.at("success").get<std::map<std::string, bool>>();
  if (j.contains("error")) r.error = j.at("error").get<std::string>();
  return r;
}

void write_records(const std::vector<AttackRecord>& records, std::ostream& out) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

void save_records(const std::vector<AttackRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_records(records, out);
}

std::vector<AttackRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<AttackRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), n);
    }
  }
  return out;
}

}  // namespace cbs
