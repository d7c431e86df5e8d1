#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "tasked/adapters.hpp"
#include "tasked/data.hpp"
#include "tasked/rng.hpp"

using namespace tasked;
using namespace tasked::data;
namespace fs = std::filesystem;

namespace {

SensorRecording recording(int subject, std::vector<std::size_t> channels, std::size_t len, std::uint64_t seed,
                          std::size_t n_act = 3, double rate = 50.0) {
  Rng rng(seed);
  SensorRecording r;
  r.subject_id = subject;
  r.sample_rate = rate;
  r.n_activities = n_act;
  for (std::size_t s = 0; s < channels.size(); ++s) {
    Stream st{"s" + std::to_string(s), Tensor({channels[s], len})};
    for (double& v : st.samples.data) v = rng.normal(2.0, 3.0);
    r.streams.push_back(std::move(st));
  }
  r.labels.resize(len);
  for (std::size_t t = 0; t < len; ++t) r.labels[t] = static_cast<int>((t / 20) % n_act);
  return r;
}

// Mean and population std of channel c across a set of recordings.
std::pair<double, double> channel_stats(const std::vector<SensorRecording>& recs, std::size_t stream, std::size_t c) {
  double s = 0, q = 0, n = 0;
  for (const auto& r : recs)
    for (std::size_t t = 0; t < r.length(); ++t) {
      const double v = r.streams[stream].samples[c * r.length() + t];
      s += v;
      q += v * v;
      n += 1;
    }
  const double m = s / n;
  return {m, std::sqrt(std::max(0.0, q / n - m * m))};
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tasked_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("interpolate_missing fills gaps linearly and extends edges") {
  SensorRecording r = recording(0, {1}, 5, 1);
  r.streams[0].samples.data = {kMissing, 1.0, kMissing, 3.0, kMissing};
  const auto out = interpolate_missing(r);
  CHECK(out.streams[0].samples.data == std::vector<double>{1.0, 1.0, 2.0, 3.0, 3.0});
  r.streams[0].samples.data.assign(5, kMissing);
  CHECK_THROWS_AS(interpolate_missing(r), Error);
}

TEST_CASE("z-score contracts per scope") {
  std::vector<SensorRecording> recs{recording(0, {2, 1}, 300, 1), recording(0, {2, 1}, 200, 2),
                                    recording(1, {2, 1}, 250, 3)};
  // constant channel
  for (auto& r : recs) std::fill_n(r.streams[1].samples.ptr(), r.length(), 4.0);
  Warnings w;
  const auto per_user = normalize_all(recs, Normalization::zscore_per_user, nullptr, &w);
  CHECK_FALSE(w.empty());
  for (int subject : {0, 1}) {
    std::vector<SensorRecording> mine;
    for (const auto& r : per_user)
      if (r.subject_id == subject) mine.push_back(r);
    for (std::size_t c = 0; c < 2; ++c) {
      auto [m, s] = channel_stats(mine, 0, c);
      CHECK(std::abs(m) < 1e-6);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
    auto [m, s] = channel_stats(mine, 1, 0);
    CHECK(m == 0.0);
    CHECK(s == 0.0);
  }
  const auto global = normalize_all(recs, Normalization::zscore_global);
  auto [m, s] = channel_stats(global, 0, 1);
  CHECK(std::abs(m) < 1e-6);
  CHECK(std::abs(s - 1.0) < 1e-6);
  // a subject alone is not standardised under the global scope
  auto [m0, s0] = channel_stats({global[2]}, 0, 1);
  CHECK(std::abs(m0) + std::abs(s0 - 1.0) > 1e-6);
}

TEST_CASE("min-max output stays in [0, 1]") {
  std::vector<SensorRecording> recs{recording(0, {3}, 100, 4), recording(1, {3}, 80, 5)};
  for (const auto& r : normalize_all(recs, Normalization::minmax_per_channel))
    for (double v : r.streams[0].samples.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  const ChannelBounds b{{-1.0, 0.0, 0.0}, {1.0, 1.0, 10.0}};
  const auto out = normalize(recs[0], Normalization::minmax_per_channel, &b);
  for (double v : out.streams[0].samples.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const double raw = recs[0].streams[0].samples[2 * 100 + 7];
  CHECK(out.streams[0].samples[2 * 100 + 7] == doctest::Approx(std::clamp(raw / 10.0, 0.0, 1.0)));
}

TEST_CASE("resampling") {
  const SensorRecording r = recording(0, {2}, 90, 6);
  const auto same = resample(r, r.sample_rate);
  for (std::size_t i = 0; i < r.streams[0].samples.numel(); ++i)
    CHECK(std::abs(same.streams[0].samples[i] - r.streams[0].samples[i]) <= 1e-12);

  SensorRecording ramp = recording(0, {1}, 100, 7, 3, 100.0);
  for (std::size_t t = 0; t < 100; ++t) ramp.streams[0].samples[t] = 0.5 * static_cast<double>(t);
  const auto down = resample(ramp, 30.0);
  REQUIRE(down.length() == 30);
  CHECK(down.sample_rate == 30.0);
  for (std::size_t j = 0; j < 30; ++j) {
    const double u = static_cast<double>(j) * 100.0 / 30.0;
    CHECK(down.streams[0].samples[j] == doctest::Approx(0.5 * u).epsilon(1e-12));
    CHECK(down.labels[j] == ramp.labels[static_cast<std::size_t>(std::llround(u))]);
  }
  const auto up = resample(ramp, 250.0);
  CHECK(up.length() == 250);
}

TEST_CASE("window labels: majority with latest tie-break") {
  const int a[] = {1, 1, 2, 2, 2};
  CHECK(window_label(a, 5) == 2);
  const int b[] = {0, 0, 1, 1};
  CHECK(window_label(b, 4) == 1);
  const int c[] = {1, 1, 0, 0};
  CHECK(window_label(c, 4) == 0);
  const int d[] = {2, 0, 0, 1, 2, 1};
  CHECK(window_label(d, 6) == 1);
  const int e[] = {-1, -1, -1, 0};
  CHECK(window_label(e, 4) == kExcludedLabel);
}

TEST_CASE("window count follows floor((L - W) / step) + 1") {
  for (std::size_t len : {64u, 65u, 100u, 333u}) {
    SensorRecording r = recording(3, {2, 3}, len, 8);
    for (std::size_t step : {1u, 7u, 16u, 64u}) {
      DatasetSpec spec;
      spec.window_size = 64;
      spec.step = step;
      const auto ds = slide_windows(r, spec);
      CHECK(ds.size() == (len - 64) / step + 1);
      CHECK(ds.channels() == 5);
      REQUIRE(ds.grouping.size() == 2);
      CHECK(ds.grouping[1].first_channel == 2);
      CHECK(ds.grouping[1].channel_count == 3);
      // window k holds samples [k*step, k*step + W)
      const std::size_t k = ds.size() - 1;
      CHECK(ds.x[(k * 5 + 3) * 64 + 5] == r.streams[1].samples[1 * len + k * step + 5]);
    }
  }
  SensorRecording shorty = recording(0, {1}, 10, 9);
  DatasetSpec spec;
  CHECK(slide_windows(shorty, spec).size() == 0);
}

TEST_CASE("windows labelled as excluded are dropped") {
  SensorRecording r = recording(0, {1}, 128, 10);
  std::fill(r.labels.begin(), r.labels.begin() + 64, kExcludedLabel);
  DatasetSpec spec;
  spec.window_size = 32;
  spec.step = 32;
  CHECK(slide_windows(r, spec).size() == 2);
}

TEST_CASE("spec validation") {
  DatasetSpec spec;
  spec.step = 0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.step = 65;
  CHECK_THROWS_AS(spec.validate(), Error);
  SensorRecording r = recording(0, {2}, 10, 1);
  r.labels[3] = 7;
  CHECK_THROWS_AS(r.validate(), Error);
}

TEST_CASE("synthetic data: shapes, contiguity and determinism") {
  SyntheticConfig cfg;
  cfg.n_subjects = 3;
  cfg.sensors = {3, 2, 4};
  const auto a = make_synthetic(cfg), b = make_synthetic(cfg);
  a.validate();
  CHECK(a.size() == 3 * 4 * 10);
  CHECK(a.channels() == 9);
  CHECK(a.window() == 64);
  CHECK(a.grouping.size() == 3);
  CHECK(std::set<int>(a.subject.begin(), a.subject.end()) == std::set<int>{0, 1, 2});
  CHECK(a.x.data.size() == b.x.data.size());
  CHECK(std::memcmp(a.x.ptr(), b.x.ptr(), a.x.data.size() * sizeof(double)) == 0);
  CHECK(a.activity == b.activity);
  cfg.seed = 2;
  CHECK(make_synthetic(cfg).x.data != a.x.data);
  cfg.n_subjects = 0;
  CHECK_THROWS_AS(make_synthetic(cfg), Error);
}

TEST_CASE("synthetic subject effect: zero effect leaves only noise between subjects") {
  SyntheticConfig cfg;
  cfg.n_subjects = 2;
  cfg.noise_std = 0.0;
  cfg.subject_effect = 0.0;
  const auto ds = make_synthetic(cfg);
  // window j of activity a is identical across subjects
  const std::size_t per_subject = ds.size() / 2, row = ds.channels() * ds.window();
  for (std::size_t i = 0; i < per_subject; ++i) {
    REQUIRE(ds.activity[i] == ds.activity[i + per_subject]);
    CHECK(std::equal(ds.x.ptr() + i * row, ds.x.ptr() + i * row + row, ds.x.ptr() + (i + per_subject) * row));
  }
}

TEST_CASE("LOSO splits") {
  SyntheticConfig cfg;
  cfg.n_subjects = 4;
  cfg.windows_per_subject_per_activity = 2;
  const auto ds = make_synthetic(cfg);
  const auto splits = loso_splits(ds, 3);
  REQUIRE(splits.size() == 2);
  CHECK(splits[0].val_subject == 0);
  CHECK(splits[1].val_subject == 1);
  const auto s0 = loso_splits(ds, 0);
  CHECK(s0[0].val_subject == 1);
  CHECK(s0[1].val_subject == 2);

  cfg.n_subjects = 10;
  const auto ten = make_synthetic(cfg);
  const auto sweep = loso_sweep(ten);
  CHECK(sweep.size() == 20);
  for (const Split& s : sweep) {
    std::vector<int> seen(ten.size(), 0);
    for (const auto* part : {&s.train, &s.val, &s.test})
      for (std::size_t i : *part) ++seen[i];
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    for (std::size_t i : s.test) CHECK(ten.subject[i] == s.test_subject);
    for (std::size_t i : s.val) CHECK(ten.subject[i] == s.val_subject);
    for (std::size_t i : s.train) {
      CHECK(ten.subject[i] != s.test_subject);
      CHECK(ten.subject[i] != s.val_subject);
    }
  }
  cfg.n_subjects = 2;
  CHECK_THROWS_AS(loso_sweep(make_synthetic(cfg)), Error);
}

TEST_CASE("subset and concat") {
  SyntheticConfig cfg;
  cfg.n_subjects = 3;
  cfg.windows_per_subject_per_activity = 2;
  const auto ds = make_synthetic(cfg);
  const auto part = subset(ds, {0, 5, 7});
  CHECK(part.size() == 3);
  CHECK(part.activity[1] == ds.activity[5]);

  cfg.seed = 9;
  auto other = make_synthetic(cfg);
  other.source_names = {"b"};
  auto first = ds;
  first.source_names = {"a"};
  const auto merged = concat({first, other});
  merged.validate();
  CHECK(merged.size() == ds.size() + other.size());
  CHECK(merged.n_subjects() == 6);
  CHECK(merged.subject_source == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(merged.subject[ds.size()] == 3);
}

TEST_CASE("container round trip is lossless") {
  SyntheticConfig cfg;
  cfg.n_subjects = 3;
  cfg.windows_per_subject_per_activity = 3;
  auto ds = make_synthetic(cfg);
  ds.activity_names = {"a", "b", "c", "d"};
  ds.source_names = {"synthetic"};
  const fs::path dir = temp_dir("container");
  write_container(dir, ds);
  CHECK(fs::exists(dir / "dataset.bin"));
  CHECK(fs::exists(dir / "dataset.json"));
  const auto back = read_container(dir);
  CHECK(back.x.shape == ds.x.shape);
  CHECK(std::memcmp(back.x.ptr(), ds.x.ptr(), ds.x.numel() * sizeof(double)) == 0);
  CHECK(back.activity == ds.activity);
  CHECK(back.subject == ds.subject);
  CHECK(back.subject_ids == ds.subject_ids);
  CHECK(back.grouping.size() == ds.grouping.size());
  CHECK(back.activity_names == ds.activity_names);
  CHECK(back.n_activities == ds.n_activities);
  fs::remove_all(dir);
}

TEST_CASE("adapter registry and text loading") {
  const Adapter& pamap = adapter("pamap2");
  CHECK(pamap.channels() == 36);
  CHECK(pamap.activities.size() == 12);
  CHECK(adapter("mhealth").channels() == 23);
  CHECK(adapter("opportunity_locomotion").channels() == 113);
  CHECK(adapter("realdisp").channels() == 81);
  CHECK(adapter("opportunity_gestures").activities.size() == 18);
  CHECK_THROWS_AS(adapter("nope"), Error);
  for (const Adapter& a : adapters()) CHECK(a.common_channels.size() == 18);

  const Adapter& mh = adapter("mhealth");
  const fs::path dir = temp_dir("adapter");
  {
    std::ofstream os(dir / "subject1.log");
    for (int t = 0; t < 300; ++t) {
      for (int c = 0; c < 23; ++c) os << (c == 5 && t == 10 ? std::string("NaN") : std::to_string(0.01 * t + c)) << "\t";
      os << (t < 150 ? 1 : (t < 250 ? 0 : 4)) << "\n";
    }
  }
  const SensorRecording r = load_recording(mh, dir / "subject1.log", 1);
  CHECK(r.length() == 300);
  CHECK(r.channels() == 23);
  CHECK(r.streams.size() == mh.streams.size());
  CHECK(r.labels[0] == 0);  // first listed activity
  CHECK(r.labels[200] == kExcludedLabel);
  CHECK(r.labels[299] == 3);
  CHECK(std::isnan(r.streams[2].samples[10]));
  const auto ds = prepare({r}, mh.default_spec());
  CHECK(ds.window() == 200);
  CHECK(ds.size() >= 1);
  fs::remove_all(dir);
}

TEST_CASE("bundled Opportunity bounds cover every channel") {
  const ChannelBounds b = read_bounds_csv(default_opportunity_bounds());
  CHECK(b.lo.size() == 113);
  for (std::size_t i = 0; i < b.lo.size(); ++i) CHECK(b.lo[i] < b.hi[i]);
}

TEST_CASE("vocabularies") {
  CHECK(vocabulary("common4").size() == 4);
  CHECK(vocabulary("common13").size() == 13);
  const auto m = vocabulary_map(adapter("pamap2"), vocabulary("common4"));
  CHECK(m.size() == 4);
}

TEST_CASE("cross-dataset harmonisation") {
  const std::vector<std::string> names{"opportunity_locomotion", "pamap2", "mhealth"};
  std::vector<HarmonizeSource> sources;
  for (std::size_t d = 0; d < names.size(); ++d) {
    const Adapter& a = adapter(names[d]);
    HarmonizeSource src{a.name, {}, a.common_channels, vocabulary_map(a, vocabulary("common4"))};
    for (int subject = 0; subject < 2; ++subject) {
      std::vector<std::size_t> widths;
      for (const auto& s : a.streams) widths.push_back(s.columns.size());
      SensorRecording r = recording(subject, widths, static_cast<std::size_t>(a.sample_rate * 8), 40 + d * 2 + subject,
                                    a.activities.size(), a.sample_rate);
      // use only mapped labels so windows survive
      const int l0 = src.label_map.begin()->first, l1 = std::next(src.label_map.begin())->first;
      for (std::size_t t = 0; t < r.length(); ++t) r.labels[t] = t < r.length() / 2 ? l0 : l1;
      src.recordings.push_back(std::move(r));
    }
    sources.push_back(std::move(src));
  }
  HarmonizeOptions opt{vocabulary("common4"), 50.0, 100, 16};
  const auto ds = harmonize_cross_dataset(sources, opt);
  ds.validate();
  CHECK(ds.channels() == 18);
  CHECK(ds.window() == 100);
  CHECK(ds.grouping.size() == 3);
  CHECK(ds.n_activities == 4);
  CHECK(ds.n_subjects() == 6);
  CHECK(ds.source_names == names);
  CHECK(ds.subject_source == std::vector<int>{0, 0, 1, 1, 2, 2});
  // 8 s at 50 Hz = 400 samples -> (400 - 100) / 16 + 1 windows per recording
  CHECK(ds.size() == 6 * ((400 - 100) / 16 + 1));
}
