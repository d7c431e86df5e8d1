#pragma once

// Experiment configuration: a JSON document checked against a schema of
// defaults. Unknown keys and type mismatches are rejected with the dotted key
// path in the message.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tasked/data.hpp"
#include "tasked/model.hpp"
#include "tasked/training.hpp"

#include "json.hpp"

namespace tasked::config {

enum class Mode { prepare, train, loso, cross_dataset, report };
Mode parse_mode(const std::string& s);
std::string to_string(Mode m);

struct RecordingFiles {
  int subject = 0;
  std::vector<std::string> paths;
};

struct AdapterSource {
  std::string name;
  std::vector<RecordingFiles> files;
  std::size_t window = 0;  // 0: adapter default
  std::size_t step = 0;
  std::string normalization;  // empty: adapter default
  std::optional<double> target_rate;
  std::string bounds_csv;  // min-max bounds; empty: bundled defaults for Opportunity
};

struct CrossDatasetSource {
  std::vector<std::string> vocabulary;  // resolved from a built-in name or given literally
  double rate_hz = 50.0;
  std::size_t window = 100;
  std::size_t step = 16;
  std::vector<AdapterSource> datasets;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | container | adapter | cross_dataset
  data::SyntheticConfig synthetic;
  std::string container;
  AdapterSource adapter;
  CrossDatasetSource cross;
};

struct ReportMethod {
  std::string name;
  std::string dir;
};

struct Experiment {
  Mode mode = Mode::loso;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::string output_dir;
  std::string method_name = "TASKED";
  bool save_checkpoints = true;
  DataConfig data;
  model::ModelConfig arch;
  training::TrainConfig train;
  int train_test_subject = 0;  // mode=train
  std::size_t train_variant = 0;
  std::vector<ReportMethod> report_methods;
  bool report_plots = true;
};

// Schema with every key and its default value.
nlohmann::json defaults();

// Validates against the schema (unknown keys, types) and fills defaults.
nlohmann::json merge_with_defaults(const nlohmann::json& user);
// "a.b.c=value"; value parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

Experiment from_json(const nlohmann::json& merged);
nlohmann::json to_json(const Experiment& e);

// Reads, merges, applies overrides and converts.
Experiment load(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

}  // namespace tasked::config
