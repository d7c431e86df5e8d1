#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "tasked/evaluation.hpp"
#include "train_fixture.hpp"

using namespace tasked;
using namespace tasked::evaluation;

TEST_CASE("metrics match label-list counting on random matrices") {
  Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t classes = 2 + rng.index(6), n = 1 + rng.index(60);
    std::vector<int> truth(n), pred(n);
    // restrict to a subset of classes so some rows and columns are empty
    const std::size_t used = 1 + rng.index(classes);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.index(used));
      pred[i] = static_cast<int>(rng.index(classes));
    }
    const Metrics m = metrics(confusion(truth, pred, classes));
    const oracle::Scores o = oracle::scores(truth, pred, classes);
    CHECK(m.accuracy == o.accuracy);
    CHECK(m.macro_f1 == o.macro_f1);
    CHECK(m.weighted_f1 == o.weighted_f1);
    CHECK(m.f1 == o.f1);
    for (double v : {m.accuracy, m.macro_f1, m.weighted_f1}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("worked confusion matrix") {
  ConfusionMatrix cm(2);
  cm.counts = {2, 1, 0, 3};
  const Metrics m = metrics(cm);
  CHECK(m.accuracy == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(m.f1[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.f1[1] == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
  CHECK(std::abs(m.accuracy - 0.8333) < 1e-4);
  CHECK(std::abs(m.macro_f1 - 0.8286) < 1e-4);
  CHECK(m.weighted_f1 == doctest::Approx(0.5 * 0.8 + 0.5 * 6.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("metric edge cases") {
  ConfusionMatrix diag(3);
  diag.counts = {4, 0, 0, 0, 2, 0, 0, 0, 5};
  CHECK(metrics(diag).accuracy == 1.0);
  ConfusionMatrix off = diag;
  off.counts[1] = 1;
  CHECK(metrics(off).accuracy < 1.0);
  // equal support and equal F1 give identical weighted and macro scores
  ConfusionMatrix sym(2);
  sym.counts = {3, 1, 1, 3};
  CHECK(metrics(sym).weighted_f1 == doctest::Approx(metrics(sym).macro_f1));
  CHECK_THROWS_AS(metrics(ConfusionMatrix(3)), Error);
  ConfusionMatrix cm(2);
  CHECK_THROWS_AS(cm.add(2, 0), Error);
}

TEST_CASE("argmax rows") {
  const Tensor l({3, 3}, {0.1, 0.5, 0.2, 2.0, -1.0, 1.0, 0.0, 0.0, 3.0});
  CHECK(argmax_rows(l) == std::vector<int>{1, 0, 2});
}

TEST_CASE("LOSO plan: 20 disjoint exhaustive folds for 10 subjects") {
  data::SyntheticConfig sc;
  sc.n_subjects = 10;
  sc.windows_per_subject_per_activity = 1;
  const auto ds = data::make_synthetic(sc);
  const auto plan = loso_plan(ds);
  REQUIRE(plan.size() == 20);
  std::set<std::string> ids;
  for (const FoldPlan& f : plan) {
    ids.insert(f.id);
    std::vector<int> seen(ds.size(), 0);
    for (const auto* part : {&f.train, &f.val, &f.test})
      for (std::size_t i : *part) ++seen[i];
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    std::set<int> tr, va, te;
    for (std::size_t i : f.train) tr.insert(ds.subject[i]);
    for (std::size_t i : f.val) va.insert(ds.subject[i]);
    for (std::size_t i : f.test) te.insert(ds.subject[i]);
    CHECK(te == std::set<int>(f.test_subjects.begin(), f.test_subjects.end()));
    CHECK(va == std::set<int>(f.val_subjects.begin(), f.val_subjects.end()));
    CHECK(tr.size() == 8);
    for (int s : te) CHECK((tr.count(s) == 0 && va.count(s) == 0));
    for (int s : va) CHECK(tr.count(s) == 0);
  }
  CHECK(ids.size() == 20);
  CHECK(plan[0].test_subjects == std::vector<int>{0});
  CHECK(plan[0].val_subjects == std::vector<int>{1});
  CHECK(plan[1].val_subjects == std::vector<int>{2});
  CHECK(plan[19].test_subjects == std::vector<int>{9});
  CHECK(plan[19].val_subjects == std::vector<int>{1});
}

TEST_CASE("cross-dataset plan") {
  data::SyntheticConfig sc;
  sc.windows_per_subject_per_activity = 1;
  std::vector<data::WindowedDataset> parts;
  for (std::size_t k = 0; k < 3; ++k) {
    sc.n_subjects = 3 + k;
    sc.seed = k;
    auto d = data::make_synthetic(sc);
    d.source_names = {"d" + std::to_string(k)};
    parts.push_back(d);
  }
  const auto ds = data::concat(parts);
  const auto plan = cross_dataset_plan(ds);
  CHECK(plan.size() == 3 * 2);
  for (const FoldPlan& f : plan) {
    REQUIRE(f.test_subjects.size() == 3);
    std::set<int> sources;
    for (int s : f.test_subjects) sources.insert(ds.subject_source[static_cast<std::size_t>(s)]);
    CHECK(sources.size() == 3);
    CHECK(f.train.size() + f.val.size() + f.test.size() == ds.size());
  }
  // a single source degenerates to the LOSO plan
  const auto single = cross_dataset_plan(parts[0]);
  const auto loso = loso_plan(parts[0]);
  REQUIRE(single.size() == loso.size());
  for (std::size_t i = 0; i < single.size(); ++i) {
    CHECK(single[i].test == loso[i].test);
    CHECK(single[i].val == loso[i].val);
  }
}

TEST_CASE("aggregation is recomputable from per-fold values") {
  std::vector<FoldResult> folds;
  const double acc[] = {0.5, 0.7, 0.9, 0.6};
  for (int i = 0; i < 4; ++i) {
    FoldResult r;
    r.id = "f" + std::to_string(i);
    r.test_subjects = {i / 2};
    r.m.accuracy = acc[i];
    r.m.macro_f1 = acc[i] / 2;
    r.m.weighted_f1 = acc[i] / 3;
    folds.push_back(r);
  }
  FoldResult failed;
  failed.failed = true;
  folds.push_back(failed);
  const Aggregate a = aggregate(folds);
  CHECK(a.folds == 4);
  CHECK(a.failed == 1);
  const double mean = (0.5 + 0.7 + 0.9 + 0.6) / 4;
  double var = 0;
  for (double v : acc) var += (v - mean) * (v - mean);
  CHECK(a.accuracy.mean == doctest::Approx(mean).epsilon(1e-15));
  CHECK(a.accuracy.std == doctest::Approx(std::sqrt(var / 4)).epsilon(1e-15));
  // per subject: 0.6 and 0.75
  CHECK(a.subject_accuracy.mean == doctest::Approx(0.675));
  CHECK(a.subject_accuracy.std == doctest::Approx(0.075));
  const Aggregate one = aggregate({folds[0]});
  CHECK(one.accuracy.std == 0.0);
}

TEST_CASE("fold results round-trip through JSON with metrics recomputed from the matrix") {
  FoldResult r;
  r.id = "test3_val0";
  r.test_subjects = {3};
  r.val_subjects = {0};
  r.cm = ConfusionMatrix(2);
  r.cm.counts = {2, 1, 0, 3};
  r.m = metrics(r.cm);
  r.pretrain_epochs = 4;
  const FoldResult back = fold_result_from_json(to_json(r));
  CHECK(back.id == r.id);
  CHECK(back.cm.counts == r.cm.counts);
  CHECK(back.m.macro_f1 == r.m.macro_f1);
  CHECK(back.pretrain_epochs == 4);
}

TEST_CASE("run_plan keeps plan order, is worker-count independent and isolates failures") {
  const auto ds = fixture::three_subjects();
  training::TrainConfig cfg = fixture::quick_train();
  cfg.epochs = 1;
  cfg.patience = 1;
  auto plan = loso_plan(ds);
  plan.resize(3);
  RunOptions one, three;
  three.workers = 3;
  const auto a = run_plan(ds, plan, fixture::small_arch(), cfg, one);
  const auto b = run_plan(ds, plan, fixture::small_arch(), cfg, three);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].id == plan[i].id);
    CHECK(b[i].id == plan[i].id);
    CHECK_FALSE(a[i].failed);
    CHECK(a[i].cm.counts == b[i].cm.counts);
    CHECK(a[i].cm.total() == plan[i].test.size());
  }
  model::ModelConfig broken = fixture::small_arch();
  broken.heads = 3;
  const auto c = run_plan(ds, plan, broken, cfg, one);
  for (const auto& r : c) {
    CHECK(r.failed);
    CHECK_FALSE(r.error.empty());
  }
}
