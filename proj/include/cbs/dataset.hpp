#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cbs/models.hpp"

namespace cbs {

enum class Task { kClassification, kNli };

Task parse_task(std::string_view name);
std::string_view task_name(Task task);

/// One labeled example. For NLI, `text` is the hypothesis and `premise` is set.
struct Example {
  std::string id;
  std::string text;
  std::optional<std::string> premise;
  std::size_t label = 0;

  ClassifierInput input() const { return {text, premise}; }
  friend bool operator==(const Example&, const Example&) = default;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t num_classes = 0;
  bool cased = true;
  Task task = Task::kClassification;

  std::size_t size() const { return examples.size(); }
};

/// Reads JSONL: classification {"id","text","label"}, NLI
/// {"id","premise","hypothesis","label"}. Missing ids become the record
/// index. Without `num_classes` the class count is max label + 1.
/// Errors name the offending record index.
Dataset parse_dataset(std::istream& in, Task task, std::optional<std::size_t> num_classes = {});
Dataset load_dataset(const std::filesystem::path& path, Task task,
                     std::optional<std::size_t> num_classes = {});

void write_dataset(const Dataset& dataset, std::ostream& out);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace cbs
