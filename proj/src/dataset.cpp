#include "cbs/dataset.hpp"

#include <fstream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "cbs/lexicon.hpp"

namespace cbs {

using nlohmann::json;

Task parse_task(std::string_view name) {
  if (name == "classification") return Task::kClassification;
  if (name == "nli") return Task::kNli;
  throw std::invalid_argument("unknown task '" + std::string(name) + "' (expected classification or nli)");
}

std::string_view task_name(Task task) { return task == Task::kNli ? "nli" : "classification"; }

namespace {

std::string required_string(const json& j, const char* key, std::size_t index) {
  auto it = j.find(key);
  if (it == j.end()) throw std::invalid_argument("record " + std::to_string(index) + ": missing field \"" + key + "\"");
  if (!it->is_string()) {
    throw std::invalid_argument("record " + std::to_string(index) + ": field \"" + key + "\" must be a string");
  }
  return it->get<std::string>();
}

}  // namespace

Dataset parse_dataset(std::istream& in, Task task, std::optional<std::size_t> num_classes) {
  Dataset ds;
  ds.task = task;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::size_t index = ds.examples.size();
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("record " + std::to_string(index) + ": " + e.what(), lineno);
    }
    if (!j.is_object()) throw ParseError("record " + std::to_string(index) + ": not a JSON object", lineno);
    Example ex;
    if (auto it = j.find("id"); it != j.end() && !it->is_null()) {
      ex.id = it->is_string() ? it->get<std::string>() : it->dump();
    } else {
      ex.id = std::to_string(index);
    }
    try {
      if (task == Task::kNli) {
        ex.premise = required_string(j, "premise", index);
        ex.text = required_string(j, "hypothesis", index);
      } else {
        ex.text = required_string(j, "text", index);
      }
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), lineno);
    }
    auto lab = j.find("label");
    if (lab == j.end()) throw ParseError("record " + std::to_string(index) + ": missing field \"label\"", lineno);
    if (!lab->is_number_integer() || lab->get<long long>() < 0) {
      throw ParseError("record " + std::to_string(index) + ": label must be a non-negative integer", lineno);
    }
    ex.label = lab->get<std::size_t>();
    if (num_classes && ex.label >= *num_classes) {
      throw ParseError("record " + std::to_string(index) + ": label " + std::to_string(ex.label) +
                           " out of range for " + std::to_string(*num_classes) + " classes",
                       lineno);
    }
    max_label = std::max(max_label, ex.label);
    ds.examples.push_back(std::move(ex));
  }
  ds.num_classes = num_classes ? *num_classes : (ds.examples.empty() ? 0 : max_label + 1);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, Task task, std::optional<std::size_t> num_classes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset " + path.string());
  return parse_dataset(in, task, num_classes);
}

void write_dataset(const Dataset& dataset, std::ostream& out) {
  for (const auto& ex : dataset.examples) {
    json j;
    j["id"] = ex.id;
    if (dataset.task == Task::kNli) {
      j["premise"] = ex.premise.value_or("");
      j["hypothesis"] = ex.text;
    } else {
      j["text"] = ex.text;
    }
    j["label"] = ex.label;
    out << j.dump() << '\n';
  }
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  write_dataset(dataset, out);
}

}  // namespace cbs
