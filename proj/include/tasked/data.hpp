#pragma once

// Raw recordings, windowed datasets and the preprocessing chain that turns one
// into the other. A label of -1 marks time steps excluded from training data
// (transient or unmapped activities); windows whose label resolves to -1 are
// dropped.

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tasked/tensor.hpp"

namespace tasked::data {

using Warnings = std::vector<std::string>;

inline constexpr int kExcludedLabel = -1;
inline const double kMissing = std::numeric_limits<double>::quiet_NaN();

struct Stream {
  std::string name;
  Tensor samples;  // channels x time

  std::size_t channels() const { return samples.dim(0); }
  std::size_t length() const { return samples.dim(1); }
};

struct SensorRecording {
  int subject_id = 0;
  std::vector<Stream> streams;
  double sample_rate = 0.0;
  std::vector<int> labels;  // per time step, in [0, n_activities) or kExcludedLabel
  std::size_t n_activities = 0;

  std::size_t length() const { return labels.size(); }
  std::size_t channels() const;
  void validate() const;
};

enum class Normalization { minmax_per_channel, zscore_per_user, zscore_global };

Normalization parse_normalization(const std::string& name);
std::string to_string(Normalization n);

// Per-channel bounds over the concatenated stream channels.
struct ChannelBounds {
  std::vector<double> lo;
  std::vector<double> hi;
};

struct DatasetSpec {
  std::string name;
  std::vector<std::vector<std::size_t>> channel_selection;  // per stream; empty list keeps all
  std::size_t window_size = 64;
  std::size_t step = 16;
  Normalization normalization = Normalization::zscore_global;
  std::optional<double> target_rate;
  std::optional<ChannelBounds> bounds;

  void validate() const;
};

struct SensorGroup {
  std::string name;
  std::size_t first_channel = 0;
  std::size_t channel_count = 0;
};

struct WindowedDataset {
  Tensor x;  // n x channels x window
  std::vector<int> activity;
  std::vector<int> subject;  // contiguous 0..K-1
  std::vector<SensorGroup> grouping;
  std::size_t n_activities = 0;
  double sample_rate = 0.0;
  std::vector<int> subject_ids;     // original id of each remapped subject
  std::vector<int> subject_source;  // source dataset index of each remapped subject
  std::vector<std::string> source_names;
  std::vector<std::string> activity_names;

  std::size_t size() const { return activity.size(); }
  std::size_t channels() const { return x.rank() == 3 ? x.dim(1) : 0; }
  std::size_t window() const { return x.rank() == 3 ? x.dim(2) : 0; }
  std::size_t n_subjects() const { return subject_ids.size(); }
  void validate() const;
};

struct SyntheticConfig {
  std::size_t n_subjects = 4;
  std::size_t n_activities = 4;
  std::vector<std::size_t> sensors = {3, 3};
  std::size_t window_size = 64;
  std::size_t windows_per_subject_per_activity = 10;
  double subject_effect = 0.5;
  double noise_std = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

// Linear interpolation over time per channel, edges extended from the nearest
// valid sample. Throws if a channel has no valid sample.
SensorRecording interpolate_missing(const SensorRecording& rec);

// Normalises one recording, treating it as the whole normalisation scope.
SensorRecording normalize(const SensorRecording& rec, Normalization mode, const ChannelBounds* bounds = nullptr,
                          Warnings* warnings = nullptr);
// Normalises a set of recordings; zscore_per_user pools statistics per subject,
// zscore_global and minmax (without explicit bounds) pool over all recordings.
std::vector<SensorRecording> normalize_all(const std::vector<SensorRecording>& recs, Normalization mode,
                                           const ChannelBounds* bounds = nullptr, Warnings* warnings = nullptr);

SensorRecording resample(const SensorRecording& rec, double target_hz);

SensorRecording select_channels(const SensorRecording& rec, const std::vector<std::vector<std::size_t>>& selection);

// Majority label with ties resolved towards the latest occurring tied label.
int window_label(const int* labels, std::size_t count);

WindowedDataset slide_windows(const SensorRecording& rec, const DatasetSpec& spec, Warnings* warnings = nullptr);

// Concatenates datasets with identical grouping; subjects are remapped to be
// contiguous in order of first appearance. Source indices are preserved when
// set, otherwise taken from the argument position.
WindowedDataset concat(const std::vector<WindowedDataset>& parts);

// Full single-dataset chain: select, interpolate, resample, normalise, window.
WindowedDataset prepare(const std::vector<SensorRecording>& recs, const DatasetSpec& spec,
                        Warnings* warnings = nullptr);

WindowedDataset make_synthetic(const SyntheticConfig& cfg);

WindowedDataset subset(const WindowedDataset& ds, const std::vector<std::size_t>& indices);

struct Split {
  std::vector<std::size_t> train, val, test;
  int test_subject = 0;
  int val_subject = 0;
};

// Two splits for one held-out subject: validation on the first, then the
// second, non-test subject in ascending order.
std::vector<Split> loso_splits(const WindowedDataset& ds, int test_subject);
// Both splits for every subject, test subjects in ascending order.
std::vector<Split> loso_sweep(const WindowedDataset& ds);

// --- cross-dataset harmonisation ---------------------------------------------

struct ChannelRef {
  std::size_t stream = 0;
  std::size_t channel = 0;
};

struct HarmonizeSource {
  std::string dataset;
  std::vector<SensorRecording> recordings;
  // Exactly 18 entries in the fixed common order (see common_channel_layout()).
  std::vector<ChannelRef> common_channels;
  // native activity index -> index in the shared vocabulary; unmapped labels are excluded.
  std::map<int, int> label_map;
};

struct HarmonizeOptions {
  std::vector<std::string> vocabulary;
  double rate_hz = 50.0;
  std::size_t window_size = 100;
  std::size_t step = 16;
};

// Names and sizes of the three common sensor groups: back/chest acc (3),
// right-hand acc+gyro+mag (9), left-ankle acc+gyro (6).
std::vector<SensorGroup> common_channel_layout();

WindowedDataset harmonize_cross_dataset(const std::vector<HarmonizeSource>& sources, const HarmonizeOptions& options,
                                        Warnings* warnings = nullptr);

}  // namespace tasked::data
