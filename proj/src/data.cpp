#include "tasked/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tasked/rng.hpp"

namespace tasked::data {

std::size_t SensorRecording::channels() const {
  std::size_t c = 0;
  for (const Stream& s : streams) c += s.channels();
  return c;
}

void SensorRecording::validate() const {
  if (!(sample_rate > 0.0)) throw Error("recording: sample_rate must be positive");
  if (streams.empty()) throw Error("recording: no sensor streams");
  for (const Stream& s : streams) {
    if (s.samples.rank() != 2) throw Error("recording: stream '" + s.name + "' is not channels x time");
    if (s.length() != labels.size())
      throw Error("recording: stream '" + s.name + "' has " + std::to_string(s.length()) + " samples but " +
                  std::to_string(labels.size()) + " labels");
  }
  for (int l : labels)
    if (l != kExcludedLabel && (l < 0 || static_cast<std::size_t>(l) >= n_activities))
      throw Error("recording: label " + std::to_string(l) + " outside [0, " + std::to_string(n_activities) + ")");
}

Normalization parse_normalization(const std::string& name) {
  if (name == "minmax_per_channel") return Normalization::minmax_per_channel;
  if (name == "zscore_per_user") return Normalization::zscore_per_user;
  if (name == "zscore_global") return Normalization::zscore_global;
  throw Error("unknown normalization '" + name + "'");
}

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::minmax_per_channel:
      return "minmax_per_channel";
    case Normalization::zscore_per_user:
      return "zscore_per_user";
    case Normalization::zscore_global:
      return "zscore_global";
  }
  return "?";
}

void DatasetSpec::validate() const {
  if (window_size == 0) throw Error("dataset.window_size: must be positive");
  if (step == 0 || step > window_size) throw Error("dataset.step: must satisfy 0 < step <= window_size");
  if (target_rate && !(*target_rate > 0.0)) throw Error("dataset.target_rate: must be positive");
}

void SyntheticConfig::validate() const {
  if (n_subjects == 0 || n_activities == 0 || sensors.empty() || window_size == 0 ||
      windows_per_subject_per_activity == 0)
    throw Error("synthetic: all counts must be positive");
  for (std::size_t c : sensors)
    if (c == 0) throw Error("synthetic.sensors: channel counts must be positive");
  if (subject_effect < 0 || noise_std < 0) throw Error("synthetic: subject_effect and noise_std must be >= 0");
}

void WindowedDataset::validate() const {
  const std::size_t n = activity.size();
  if (subject.size() != n) throw Error("dataset: activity/subject label counts differ");
  if (n > 0 && (x.rank() != 3 || x.dim(0) != n)) throw Error("dataset: window tensor does not match label count");
  std::size_t covered = 0;
  for (const SensorGroup& g : grouping) {
    if (g.first_channel != covered) throw Error("dataset: sensor grouping is not contiguous");
    covered += g.channel_count;
  }
  if (n > 0 && covered != channels()) throw Error("dataset: sensor grouping does not cover all channels");
  for (std::size_t i = 0; i < n; ++i) {
    if (activity[i] < 0 || static_cast<std::size_t>(activity[i]) >= n_activities)
      throw Error("dataset: activity label out of range");
    if (subject[i] < 0 || static_cast<std::size_t>(subject[i]) >= subject_ids.size())
      throw Error("dataset: subject label out of range");
  }
}

// ---------------------------------------------------------------------------

SensorRecording interpolate_missing(const SensorRecording& rec) {
  SensorRecording out = rec;
  for (Stream& s : out.streams) {
    const std::size_t len = s.length();
    for (std::size_t c = 0; c < s.channels(); ++c) {
      double* v = s.samples.ptr() + c * len;
      std::size_t prev = len;  // index of the last valid sample
      for (std::size_t t = 0; t < len; ++t) {
        if (std::isnan(v[t])) continue;
        if (prev == len) {
          std::fill(v, v + t, v[t]);
        } else if (t > prev + 1) {
          const double a = v[prev], b = v[t];
          const double span = static_cast<double>(t - prev);
          for (std::size_t u = prev + 1; u < t; ++u) v[u] = a + (b - a) * static_cast<double>(u - prev) / span;
        }
        prev = t;
      }
      if (prev == len) throw Error("interpolate_missing: channel " + std::to_string(c) + " of stream '" + s.name +
                                   "' has no valid samples");
      std::fill(v + prev + 1, v + len, v[prev]);
    }
  }
  return out;
}

namespace {

struct ChannelStats {
  std::vector<double> mean, std;
};

// Per-channel population statistics pooled over the given recordings.
ChannelStats pooled_stats(const std::vector<const SensorRecording*>& recs) {
  const std::size_t nc = recs.front()->channels();
  std::vector<double> sum(nc, 0.0), count(nc, 0.0);
  for (const SensorRecording* r : recs) {
    std::size_t ch = 0;
    for (const Stream& s : r->streams)
      for (std::size_t c = 0; c < s.channels(); ++c, ++ch)
        for (std::size_t t = 0; t < s.length(); ++t) {
          sum[ch] += s.samples[c * s.length() + t];
          count[ch] += 1.0;
        }
  }
  ChannelStats st{std::vector<double>(nc), std::vector<double>(nc, 0.0)};
  for (std::size_t ch = 0; ch < nc; ++ch) st.mean[ch] = count[ch] > 0 ? sum[ch] / count[ch] : 0.0;
  for (const SensorRecording* r : recs) {
    std::size_t ch = 0;
    for (const Stream& s : r->streams)
      for (std::size_t c = 0; c < s.channels(); ++c, ++ch)
        for (std::size_t t = 0; t < s.length(); ++t) {
          const double d = s.samples[c * s.length() + t] - st.mean[ch];
          st.std[ch] += d * d;
        }
  }
  for (std::size_t ch = 0; ch < nc; ++ch) st.std[ch] = count[ch] > 0 ? std::sqrt(st.std[ch] / count[ch]) : 0.0;
  return st;
}

ChannelBounds pooled_bounds(const std::vector<const SensorRecording*>& recs) {
  const std::size_t nc = recs.front()->channels();
  ChannelBounds b{std::vector<double>(nc, std::numeric_limits<double>::infinity()),
                  std::vector<double>(nc, -std::numeric_limits<double>::infinity())};
  for (const SensorRecording* r : recs) {
    std::size_t ch = 0;
    for (const Stream& s : r->streams)
      for (std::size_t c = 0; c < s.channels(); ++c, ++ch)
        for (std::size_t t = 0; t < s.length(); ++t) {
          const double v = s.samples[c * s.length() + t];
          b.lo[ch] = std::min(b.lo[ch], v);
          b.hi[ch] = std::max(b.hi[ch], v);
        }
  }
  return b;
}

template <typename F>
void for_each_channel(SensorRecording& r, F&& f) {
  std::size_t ch = 0;
  for (Stream& s : r.streams)
    for (std::size_t c = 0; c < s.channels(); ++c, ++ch) f(ch, s.samples.ptr() + c * s.length(), s.length(), s.name, c);
}

void apply_zscore(SensorRecording& r, const ChannelStats& st, Warnings* warnings) {
  for_each_channel(r, [&](std::size_t ch, double* v, std::size_t len, const std::string& stream, std::size_t c) {
    if (!(st.std[ch] > 1e-12)) {
      std::fill(v, v + len, 0.0);
      if (warnings)
        warnings->push_back("normalize: zero variance in channel " + std::to_string(c) + " of stream '" + stream +
                            "' (subject " + std::to_string(r.subject_id) + "), set to 0");
      return;
    }
    for (std::size_t t = 0; t < len; ++t) v[t] = (v[t] - st.mean[ch]) / st.std[ch];
  });
}

void apply_minmax(SensorRecording& r, const ChannelBounds& b) {
  if (b.lo.size() != r.channels() || b.hi.size() != r.channels())
    throw Error("normalize: bounds cover " + std::to_string(b.lo.size()) + " channels, recording has " +
                std::to_string(r.channels()));
  for_each_channel(r, [&](std::size_t ch, double* v, std::size_t len, const std::string&, std::size_t) {
    const double range = b.hi[ch] - b.lo[ch];
    for (std::size_t t = 0; t < len; ++t)
      v[t] = range > 0 ? std::clamp((v[t] - b.lo[ch]) / range, 0.0, 1.0) : 0.0;
  });
}

}  // namespace

SensorRecording normalize(const SensorRecording& rec, Normalization mode, const ChannelBounds* bounds,
                          Warnings* warnings) {
  return normalize_all({rec}, mode, bounds, warnings).front();
}

std::vector<SensorRecording> normalize_all(const std::vector<SensorRecording>& recs, Normalization mode,
                                           const ChannelBounds* bounds, Warnings* warnings) {
  std::vector<SensorRecording> out = recs;
  if (out.empty()) return out;
  std::vector<const SensorRecording*> all;
  for (const SensorRecording& r : recs) all.push_back(&r);
  switch (mode) {
    case Normalization::minmax_per_channel: {
      const ChannelBounds b = bounds ? *bounds : pooled_bounds(all);
      for (SensorRecording& r : out) apply_minmax(r, b);
      break;
    }
    case Normalization::zscore_global: {
      const ChannelStats st = pooled_stats(all);
      for (SensorRecording& r : out) apply_zscore(r, st, warnings);
      break;
    }
    case Normalization::zscore_per_user: {
      std::map<int, std::vector<const SensorRecording*>> by_user;
      for (const SensorRecording& r : recs) by_user[r.subject_id].push_back(&r);
      std::map<int, ChannelStats> stats;
      for (auto& [id, group] : by_user) stats.emplace(id, pooled_stats(group));
      for (SensorRecording& r : out) apply_zscore(r, stats.at(r.subject_id), warnings);
      break;
    }
  }
  return out;
}

SensorRecording resample(const SensorRecording& rec, double target_hz) {
  if (!(target_hz > 0.0)) throw Error("resample: target rate must be positive");
  rec.validate();
  if (target_hz == rec.sample_rate) return rec;
  const std::size_t len = rec.length();
  const std::size_t out_len =
      static_cast<std::size_t>(std::llround(static_cast<double>(len) * target_hz / rec.sample_rate));
  const double ratio = rec.sample_rate / target_hz;
  SensorRecording out;
  out.subject_id = rec.subject_id;
  out.sample_rate = target_hz;
  out.n_activities = rec.n_activities;
  out.labels.resize(out_len);
  for (std::size_t j = 0; j < out_len; ++j) {
    const double u = static_cast<double>(j) * ratio;
    const auto nearest = static_cast<std::size_t>(std::min<double>(std::llround(u), static_cast<double>(len - 1)));
    out.labels[j] = rec.labels[nearest];
  }
  for (const Stream& s : rec.streams) {
    Stream o{s.name, Tensor({s.channels(), out_len})};
    for (std::size_t c = 0; c < s.channels(); ++c) {
      const double* v = s.samples.ptr() + c * len;
      double* w = o.samples.ptr() + c * out_len;
      for (std::size_t j = 0; j < out_len; ++j) {
        const double u = static_cast<double>(j) * ratio;
        const auto lo = static_cast<std::size_t>(std::floor(u));
        if (lo + 1 >= len) {
          w[j] = v[len - 1];
          continue;
        }
        const double frac = u - static_cast<double>(lo);
        w[j] = v[lo] + (v[lo + 1] - v[lo]) * frac;
      }
    }
    out.streams.push_back(std::move(o));
  }
  return out;
}

SensorRecording select_channels(const SensorRecording& rec, const std::vector<std::vector<std::size_t>>& selection) {
  if (selection.empty()) return rec;
  if (selection.size() != rec.streams.size())
    throw Error("channel_selection: " + std::to_string(selection.size()) + " lists for " +
                std::to_string(rec.streams.size()) + " streams");
  SensorRecording out = rec;
  out.streams.clear();
  for (std::size_t si = 0; si < rec.streams.size(); ++si) {
    const Stream& s = rec.streams[si];
    const auto& idx = selection[si];
    if (idx.empty()) {
      out.streams.push_back(s);
      continue;
    }
    Stream o{s.name, Tensor({idx.size(), s.length()})};
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] >= s.channels())
        throw Error("channel_selection: index " + std::to_string(idx[k]) + " invalid for stream '" + s.name + "'");
      std::copy_n(s.samples.ptr() + idx[k] * s.length(), s.length(), o.samples.ptr() + k * s.length());
    }
    out.streams.push_back(std::move(o));
  }
  return out;
}

int window_label(const int* labels, std::size_t count) {
  std::map<int, std::size_t> counts;
  std::map<int, std::size_t> last_seen;
  for (std::size_t t = 0; t < count; ++t) {
    ++counts[labels[t]];
    last_seen[labels[t]] = t;
  }
  int best = kExcludedLabel;
  std::size_t best_count = 0, best_last = 0;
  for (auto& [label, c] : counts) {
    const std::size_t last = last_seen[label];
    if (c > best_count || (c == best_count && last > best_last)) {
      best = label;
      best_count = c;
      best_last = last;
    }
  }
  return best;
}

namespace {

std::vector<SensorGroup> grouping_of(const SensorRecording& rec) {
  std::vector<SensorGroup> g;
  std::size_t first = 0;
  for (const Stream& s : rec.streams) {
    g.push_back({s.name, first, s.channels()});
    first += s.channels();
  }
  return g;
}

}  // namespace

WindowedDataset slide_windows(const SensorRecording& rec, const DatasetSpec& spec, Warnings* warnings) {
  spec.validate();
  rec.validate();
  WindowedDataset ds;
  ds.grouping = grouping_of(rec);
  ds.n_activities = rec.n_activities;
  ds.sample_rate = rec.sample_rate;
  ds.subject_ids = {rec.subject_id};
  ds.subject_source = {0};
  const std::size_t len = rec.length();
  const std::size_t nc = rec.channels();
  const std::size_t w = spec.window_size;
  if (len < w) {
    if (warnings)
      warnings->push_back("slide_windows: recording of subject " + std::to_string(rec.subject_id) + " has " +
                          std::to_string(len) + " samples, shorter than one window");
    ds.x = Tensor({0, nc, w});
    return ds;
  }
  const std::size_t count = (len - w) / spec.step + 1;
  std::vector<double> buf;
  buf.reserve(count * nc * w);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t off = k * spec.step;
    const int label = window_label(rec.labels.data() + off, w);
    if (label == kExcludedLabel) continue;
    for (const Stream& s : rec.streams)
      for (std::size_t c = 0; c < s.channels(); ++c) {
        const double* src = s.samples.ptr() + c * len + off;
        buf.insert(buf.end(), src, src + w);
      }
    ds.activity.push_back(label);
    ds.subject.push_back(0);
  }
  ds.x = Tensor({ds.activity.size(), nc, w}, std::move(buf));
  return ds;
}

WindowedDataset concat(const std::vector<WindowedDataset>& parts) {
  WindowedDataset out;
  if (parts.empty()) return out;
  const WindowedDataset& first = parts.front();
  out.grouping = first.grouping;
  out.n_activities = first.n_activities;
  out.sample_rate = first.sample_rate;
  out.activity_names = first.activity_names;
  const std::size_t nc = first.channels(), w = first.window();
  std::vector<double> buf;
  // Sources are identified by name when the part carries one, else by index.
  std::vector<std::string> keys;
  bool all_named = true;
  std::map<std::pair<int, int>, int> remap;  // (source, original id) -> new id
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const WindowedDataset& p = parts[pi];
    if (p.channels() != nc || p.window() != w || p.n_activities != out.n_activities)
      throw Error("concat: datasets differ in channels, window or activity count");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto local = static_cast<std::size_t>(p.subject[i]);
      const auto local_src = static_cast<std::size_t>(p.subject_source.empty() ? pi : p.subject_source.at(local));
      const bool named = local_src < p.source_names.size();
      const std::string key = named ? p.source_names[local_src] : "#" + std::to_string(local_src);
      auto kit = std::find(keys.begin(), keys.end(), key);
      if (kit == keys.end()) {
        keys.push_back(key);
        all_named = all_named && named;
        kit = keys.end() - 1;
      }
      const int source = static_cast<int>(kit - keys.begin());
      const int orig = p.subject_ids.at(local);
      auto [it, inserted] = remap.try_emplace({source, orig}, static_cast<int>(out.subject_ids.size()));
      if (inserted) {
        out.subject_ids.push_back(orig);
        out.subject_source.push_back(source);
      }
      out.subject.push_back(it->second);
      out.activity.push_back(p.activity[i]);
    }
    buf.insert(buf.end(), p.x.data.begin(), p.x.data.end());
  }
  if (all_named) out.source_names = keys;
  out.x = Tensor({out.activity.size(), nc, w}, std::move(buf));
  return out;
}

WindowedDataset prepare(const std::vector<SensorRecording>& recs, const DatasetSpec& spec, Warnings* warnings) {
  spec.validate();
  std::vector<SensorRecording> cleaned;
  for (const SensorRecording& r : recs) {
    SensorRecording c = interpolate_missing(select_channels(r, spec.channel_selection));
    if (spec.target_rate) c = resample(c, *spec.target_rate);
    cleaned.push_back(std::move(c));
  }
  const ChannelBounds* bounds = spec.bounds ? &*spec.bounds : nullptr;
  cleaned = normalize_all(cleaned, spec.normalization, bounds, warnings);
  std::vector<WindowedDataset> parts;
  for (const SensorRecording& r : cleaned) parts.push_back(slide_windows(r, spec, warnings));
  return concat(parts);
}

WindowedDataset make_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t nc = std::accumulate(cfg.sensors.begin(), cfg.sensors.end(), std::size_t{0});
  const std::size_t w = cfg.window_size;
  const double two_pi = 2.0 * std::acos(-1.0);

  // Activity templates: base frequency, per-channel amplitude and phase, and a
  // harmonic mix that changes the waveform shape between activities.
  struct Template {
    double freq;
    double harmonic;
    std::vector<double> amp, phase, level;
  };
  std::vector<Template> templates;
  Rng trng(derive_seed(cfg.seed, "synthetic.templates"));
  for (std::size_t a = 0; a < cfg.n_activities; ++a) {
    Template tp;
    tp.freq = 1.0 + static_cast<double>(a) * 1.5;
    tp.harmonic = (a % 2 == 0) ? 0.0 : 0.5;
    for (std::size_t c = 0; c < nc; ++c) {
      tp.amp.push_back(trng.uniform(0.5, 1.5));
      tp.phase.push_back(trng.uniform(0.0, two_pi));
      tp.level.push_back(trng.uniform(-0.5, 0.5));
    }
    templates.push_back(std::move(tp));
  }

  WindowedDataset ds;
  std::size_t first = 0;
  for (std::size_t s = 0; s < cfg.sensors.size(); ++s) {
    ds.grouping.push_back({"sensor" + std::to_string(s), first, cfg.sensors[s]});
    first += cfg.sensors[s];
  }
  ds.n_activities = cfg.n_activities;
  ds.sample_rate = 50.0;
  for (std::size_t a = 0; a < cfg.n_activities; ++a) ds.activity_names.push_back("activity" + std::to_string(a));
  ds.source_names = {"synthetic"};

  const std::size_t per = cfg.windows_per_subject_per_activity;
  const std::size_t n = cfg.n_subjects * cfg.n_activities * per;
  ds.x = Tensor({n, nc, w});
  std::size_t idx = 0;
  for (std::size_t k = 0; k < cfg.n_subjects; ++k) {
    ds.subject_ids.push_back(static_cast<int>(k));
    ds.subject_source.push_back(0);
    Rng srng(derive_seed(cfg.seed, "synthetic.subject", k));
    std::vector<double> gain(nc), offset(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      gain[c] = std::max(0.1, 1.0 + cfg.subject_effect * srng.normal(0.0, 0.5));
      offset[c] = cfg.subject_effect * srng.normal(0.0, 1.0);
    }
    Rng nrng(derive_seed(cfg.seed, "synthetic.noise", k));
    for (std::size_t a = 0; a < cfg.n_activities; ++a) {
      const Template& tp = templates[a];
      for (std::size_t j = 0; j < per; ++j, ++idx) {
        // Phase shift depends on (activity, window) only so that subjects share
        // identical clean windows.
        Rng prng(derive_seed(cfg.seed, "synthetic.window", a * 1000003ULL + j));
        const double shift = prng.uniform(0.0, two_pi);
        double* out = ds.x.ptr() + idx * nc * w;
        for (std::size_t c = 0; c < nc; ++c)
          for (std::size_t t = 0; t < w; ++t) {
            const double arg = two_pi * tp.freq * static_cast<double>(t) / static_cast<double>(w) + tp.phase[c] + shift;
            const double clean = tp.level[c] + tp.amp[c] * (std::sin(arg) + tp.harmonic * std::sin(3.0 * arg));
            const double noise = cfg.noise_std > 0.0 ? nrng.normal(0.0, cfg.noise_std) : 0.0;
            out[c * w + t] = gain[c] * clean + offset[c] + noise;
          }
        ds.activity.push_back(static_cast<int>(a));
        ds.subject.push_back(static_cast<int>(k));
      }
    }
  }
  return ds;
}

WindowedDataset subset(const WindowedDataset& ds, const std::vector<std::size_t>& indices) {
  WindowedDataset out = ds;
  const std::size_t nc = ds.channels(), w = ds.window();
  out.x = Tensor({indices.size(), nc, w});
  out.activity.clear();
  out.subject.clear();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= ds.size()) throw Error("subset: index out of range");
    std::copy_n(ds.x.ptr() + i * nc * w, nc * w, out.x.ptr() + k * nc * w);
    out.activity.push_back(ds.activity[i]);
    out.subject.push_back(ds.subject[i]);
  }
  return out;
}

std::vector<Split> loso_splits(const WindowedDataset& ds, int test_subject) {
  const std::set<int> present(ds.subject.begin(), ds.subject.end());
  if (present.size() < 3) throw Error("loso_splits: need at least 3 subjects, have " + std::to_string(present.size()));
  if (!present.count(test_subject)) throw Error("loso_splits: test subject " + std::to_string(test_subject) + " absent");
  std::vector<int> others;
  for (int s : present)
    if (s != test_subject) others.push_back(s);
  std::vector<Split> splits;
  for (int v : {others[0], others[1]}) {
    Split sp;
    sp.test_subject = test_subject;
    sp.val_subject = v;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.subject[i] == test_subject)
        sp.test.push_back(i);
      else if (ds.subject[i] == v)
        sp.val.push_back(i);
      else
        sp.train.push_back(i);
    }
    splits.push_back(std::move(sp));
  }
  return splits;
}

std::vector<Split> loso_sweep(const WindowedDataset& ds) {
  const std::set<int> present(ds.subject.begin(), ds.subject.end());
  std::vector<Split> all;
  for (int s : present)
    for (Split& sp : loso_splits(ds, s)) all.push_back(std::move(sp));
  return all;
}

// ---------------------------------------------------------------------------

std::vector<SensorGroup> common_channel_layout() {
  return {{"back_chest_acc", 0, 3}, {"right_hand_acc_gyro_mag", 3, 9}, {"left_ankle_acc_gyro", 12, 6}};
}

WindowedDataset harmonize_cross_dataset(const std::vector<HarmonizeSource>& sources, const HarmonizeOptions& options,
                                        Warnings* warnings) {
  if (sources.empty()) throw Error("harmonize: no datasets");
  if (options.vocabulary.empty()) throw Error("harmonize: empty activity vocabulary");
  const std::vector<SensorGroup> layout = common_channel_layout();
  const std::size_t n_common = 18;
  DatasetSpec spec;
  spec.name = "cross_dataset";
  spec.window_size = options.window_size;
  spec.step = options.step;
  spec.validate();

  std::vector<WindowedDataset> parts;
  std::vector<std::string> names;
  for (std::size_t di = 0; di < sources.size(); ++di) {
    const HarmonizeSource& src = sources[di];
    names.push_back(src.dataset);
    if (src.common_channels.size() != n_common)
      throw Error("harmonize: dataset '" + src.dataset + "' maps " + std::to_string(src.common_channels.size()) +
                  " of the 18 common channels");
    std::vector<SensorRecording> mapped;
    for (const SensorRecording& rec : src.recordings) {
      SensorRecording m;
      m.subject_id = rec.subject_id;
      m.sample_rate = rec.sample_rate;
      m.n_activities = options.vocabulary.size();
      m.labels.resize(rec.labels.size());
      for (std::size_t t = 0; t < rec.labels.size(); ++t) {
        auto it = src.label_map.find(rec.labels[t]);
        m.labels[t] = it == src.label_map.end() ? kExcludedLabel : it->second;
        if (m.labels[t] != kExcludedLabel && static_cast<std::size_t>(m.labels[t]) >= m.n_activities)
          throw Error("harmonize: label map of '" + src.dataset + "' points outside the vocabulary");
      }
      std::size_t k = 0;
      for (const SensorGroup& g : layout) {
        Stream s{g.name, Tensor({g.channel_count, rec.length()})};
        for (std::size_t c = 0; c < g.channel_count; ++c, ++k) {
          const ChannelRef ref = src.common_channels[k];
          if (ref.stream >= rec.streams.size() || ref.channel >= rec.streams[ref.stream].channels())
            throw Error("harmonize: dataset '" + src.dataset + "' lacks common channel " + std::to_string(k) + " (" +
                        g.name + ")");
          const Stream& from = rec.streams[ref.stream];
          std::copy_n(from.samples.ptr() + ref.channel * from.length(), from.length(),
                      s.samples.ptr() + c * rec.length());
        }
        m.streams.push_back(std::move(s));
      }
      mapped.push_back(resample(interpolate_missing(m), options.rate_hz));
    }
    mapped = normalize_all(mapped, Normalization::zscore_global, nullptr, warnings);
    std::vector<WindowedDataset> windows;
    for (const SensorRecording& r : mapped) windows.push_back(slide_windows(r, spec, warnings));
    WindowedDataset d = concat(windows);
    for (int& s : d.subject_source) s = static_cast<int>(di);
    parts.push_back(std::move(d));
  }
  WindowedDataset out = concat(parts);
  out.grouping = layout;
  out.n_activities = options.vocabulary.size();
  out.sample_rate = options.rate_hz;
  out.activity_names = options.vocabulary;
  out.source_names = names;
  return out;
}

}  // namespace tasked::data
