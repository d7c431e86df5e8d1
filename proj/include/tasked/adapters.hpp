#pragma once

// Column layouts, label codes and default preprocessing for the supported
// public activity datasets, plus the windowed-dataset container format.

#include <filesystem>
#include <string>
#include <vector>

#include "tasked/data.hpp"

namespace tasked::data {

struct StreamLayout {
  std::string name;
  std::vector<std::size_t> columns;  // 0-based columns of the raw text file
};

struct ActivityCode {
  long code;
  std::string name;
};

struct Adapter {
  std::string name;
  double sample_rate = 0.0;
  std::vector<StreamLayout> streams;
  std::size_t label_column = 0;
  std::vector<ActivityCode> activities;  // class index = position; other codes are excluded
  std::size_t window = 0;
  std::size_t step = 0;
  Normalization normalization = Normalization::zscore_per_user;
  // Common 18-channel layout for cross-dataset runs, in common_channel_layout() order.
  std::vector<ChannelRef> common_channels;
  // Activity names of this dataset paired with their name in the shared vocabularies.
  std::vector<std::pair<std::string, std::string>> common_names;

  std::size_t channels() const;
  DatasetSpec default_spec() const;
  std::vector<std::string> activity_names() const;
};

const std::vector<Adapter>& adapters();
const Adapter& adapter(const std::string& name);

// Parses a whitespace-separated numeric file; "NaN" entries become missing.
SensorRecording load_recording(const Adapter& a, const std::filesystem::path& file, int subject_id);

// Built-in shared vocabularies: "common4" and "common13".
std::vector<std::string> vocabulary(const std::string& name);
// native class index -> vocabulary index for the activities the adapter shares.
std::map<int, int> vocabulary_map(const Adapter& a, const std::vector<std::string>& vocab);

// Default per-channel bounds for min-max scaling of the 113 Opportunity channels,
// read from a CSV with columns index,name,min,max.
ChannelBounds read_bounds_csv(const std::filesystem::path& file);
std::filesystem::path default_opportunity_bounds();

// dataset.bin + dataset.json under dir.
void write_container(const std::filesystem::path& dir, const WindowedDataset& ds);
WindowedDataset read_container(const std::filesystem::path& dir);

}  // namespace tasked::data
