#include "tasked/evaluation.hpp"

#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace tasked::evaluation {

void ConfusionMatrix::add(int truth, int pred) {
  if (truth < 0 || pred < 0 || static_cast<std::size_t>(truth) >= classes || static_cast<std::size_t>(pred) >= classes)
    throw Error("confusion matrix: label out of range");
  ++counts[static_cast<std::size_t>(truth) * classes + static_cast<std::size_t>(pred)];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes) {
  if (truth.size() != pred.size()) throw Error("confusion: label lists differ in length");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw Error("metrics: empty confusion matrix");
  const std::size_t n = cm.classes;
  Metrics m;
  m.f1.assign(n, 0.0);
  std::uint64_t trace = 0;
  for (std::size_t c = 0; c < n; ++c) {
    const auto tp = static_cast<double>(cm.at(c, c));
    trace += cm.at(c, c);
    double row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += static_cast<double>(cm.at(c, k));
      col += static_cast<double>(cm.at(k, c));
    }
    const double precision = col > 0 ? tp / col : 0.0;
    const double recall = row > 0 ? tp / row : 0.0;
    m.f1[c] = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    m.weighted_f1 += row / static_cast<double>(total) * m.f1[c];
    m.macro_f1 += m.f1[c];
  }
  m.macro_f1 /= static_cast<double>(n);
  m.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return m;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw Error("argmax_rows: expected a matrix");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = logits.ptr() + i * k;
    out[i] = static_cast<int>(std::max_element(r, r + k) - r);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (int v : ids) s += (s.empty() ? "" : "+") + std::to_string(v);
  return s;
}

FoldPlan make_fold(const data::WindowedDataset& ds, std::vector<int> test, std::vector<int> val, std::size_t variant) {
  FoldPlan f;
  f.test_subjects = std::move(test);
  f.val_subjects = std::move(val);
  f.variant = variant;
  const std::set<int> ts(f.test_subjects.begin(), f.test_subjects.end());
  const std::set<int> vs(f.val_subjects.begin(), f.val_subjects.end());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ts.count(ds.subject[i]))
      f.test.push_back(i);
    else if (vs.count(ds.subject[i]))
      f.val.push_back(i);
    else
      f.train.push_back(i);
  }
  f.id = "test" + join_ids(f.test_subjects) + "_val" + join_ids(f.val_subjects);
  return f;
}

}  // namespace

std::vector<FoldPlan> loso_plan(const data::WindowedDataset& ds) {
  std::vector<FoldPlan> plan;
  for (const data::Split& sp : data::loso_sweep(ds)) {
    FoldPlan f;
    f.test_subjects = {sp.test_subject};
    f.val_subjects = {sp.val_subject};
    f.variant = plan.size() % 2;
    f.train = sp.train;
    f.val = sp.val;
    f.test = sp.test;
    f.id = "test" + join_ids(f.test_subjects) + "_val" + join_ids(f.val_subjects);
    plan.push_back(std::move(f));
  }
  return plan;
}

std::vector<FoldPlan> cross_dataset_plan(const data::WindowedDataset& ds) {
  const std::set<int> present(ds.subject.begin(), ds.subject.end());
  std::map<int, std::vector<int>> by_source;
  for (int s : present) {
    const int src = ds.subject_source.empty() ? 0 : ds.subject_source.at(static_cast<std::size_t>(s));
    by_source[src].push_back(s);
  }
  std::size_t rounds = std::numeric_limits<std::size_t>::max();
  for (const auto& [src, subs] : by_source) {
    if (subs.size() < 3)
      throw Error("cross_dataset_plan: source " + std::to_string(src) + " has fewer than 3 subjects");
    rounds = std::min(rounds, subs.size());
  }
  std::vector<FoldPlan> plan;
  for (std::size_t r = 0; r < rounds; ++r)
    for (std::size_t variant = 0; variant < 2; ++variant) {
      std::vector<int> test, val;
      for (const auto& [src, subs] : by_source) {
        test.push_back(subs[r]);
        std::vector<int> others;
        for (int s : subs)
          if (s != subs[r]) others.push_back(s);
        val.push_back(others[variant]);
      }
      plan.push_back(make_fold(ds, test, val, variant));
    }
  return plan;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const FoldResult& r) {
  nlohmann::json cm = nlohmann::json::array();
  for (std::size_t t = 0; t < r.cm.classes; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < r.cm.classes; ++p) row.push_back(r.cm.at(t, p));
    cm.push_back(row);
  }
  nlohmann::json j = {{"id", r.id},
                      {"test_subjects", r.test_subjects},
                      {"val_subjects", r.val_subjects},
                      {"variant", r.variant},
                      {"failed", r.failed},
                      {"error", r.error},
                      {"pretrain_epochs", r.pretrain_epochs},
                      {"adversarial_epochs", r.adversarial_epochs},
                      {"confusion", cm}};
  if (!r.failed) {
    j["accuracy"] = r.m.accuracy;
    j["weighted_f1"] = r.m.weighted_f1;
    j["macro_f1"] = r.m.macro_f1;
    j["class_f1"] = r.m.f1;
  }
  return j;
}

FoldResult fold_result_from_json(const nlohmann::json& j) {
  FoldResult r;
  r.id = j.at("id");
  r.test_subjects = j.at("test_subjects").get<std::vector<int>>();
  r.val_subjects = j.at("val_subjects").get<std::vector<int>>();
  r.variant = j.at("variant");
  r.failed = j.at("failed");
  r.error = j.at("error");
  r.pretrain_epochs = j.at("pretrain_epochs");
  r.adversarial_epochs = j.at("adversarial_epochs");
  const auto& cm = j.at("confusion");
  r.cm = ConfusionMatrix(cm.size());
  for (std::size_t t = 0; t < cm.size(); ++t) {
    if (cm[t].size() != cm.size()) throw Error("fold " + r.id + ": confusion matrix is not square");
    for (std::size_t p = 0; p < cm.size(); ++p) r.cm.counts[t * cm.size() + p] = cm[t][p].get<std::uint64_t>();
  }
  // Metrics are recomputed from the stored matrix.
  if (!r.failed) r.m = metrics(r.cm);
  return r;
}

Stat mean_std(std::span<const double> values) {
  Stat s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  for (double v : values) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(values.size()));
  return s;
}

Aggregate aggregate(const std::vector<FoldResult>& folds) {
  Aggregate a;
  std::vector<double> acc, fw, fm;
  std::map<std::vector<int>, std::vector<const FoldResult*>> by_subject;
  for (const FoldResult& f : folds) {
    if (f.failed) {
      ++a.failed;
      continue;
    }
    ++a.folds;
    acc.push_back(f.m.accuracy);
    fw.push_back(f.m.weighted_f1);
    fm.push_back(f.m.macro_f1);
    by_subject[f.test_subjects].push_back(&f);
  }
  a.accuracy = mean_std(acc);
  a.weighted_f1 = mean_std(fw);
  a.macro_f1 = mean_std(fm);
  std::vector<double> sacc, sfw, sfm;
  for (const auto& [subj, list] : by_subject) {
    double x = 0, y = 0, z = 0;
    for (const FoldResult* f : list) {
      x += f->m.accuracy;
      y += f->m.weighted_f1;
      z += f->m.macro_f1;
    }
    const double n = static_cast<double>(list.size());
    sacc.push_back(x / n);
    sfw.push_back(y / n);
    sfm.push_back(z / n);
  }
  a.subject_accuracy = mean_std(sacc);
  a.subject_weighted_f1 = mean_std(sfw);
  a.subject_macro_f1 = mean_std(sfm);
  return a;
}

nlohmann::json to_json(const Aggregate& a) {
  auto stat = [](const Stat& s) { return nlohmann::json{{"mean", s.mean}, {"std", s.std}}; };
  return {{"folds", a.folds},
          {"failed", a.failed},
          {"across_folds",
           {{"accuracy", stat(a.accuracy)}, {"weighted_f1", stat(a.weighted_f1)}, {"macro_f1", stat(a.macro_f1)}}},
          {"across_subjects",
           {{"accuracy", stat(a.subject_accuracy)},
            {"weighted_f1", stat(a.subject_weighted_f1)},
            {"macro_f1", stat(a.subject_macro_f1)}}}};
}

// ---------------------------------------------------------------------------

FoldResult run_fold(const data::WindowedDataset& ds, const FoldPlan& plan, std::size_t fold_index,
                    const model::ModelConfig& arch, const training::TrainConfig& cfg, const RunOptions& opt) {
  FoldResult r;
  r.id = plan.id;
  r.test_subjects = plan.test_subjects;
  r.val_subjects = plan.val_subjects;
  r.variant = plan.variant;
  r.cm = ConfusionMatrix(ds.n_activities);
  try {
    training::TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, "fold", fold_index);
    training::TrainData td{&ds, plan.train, plan.val, {}};
    if (cfg.use_target_unlabeled) td.target = plan.test;
    const training::TrainHooks hooks = opt.hooks_for ? opt.hooks_for(plan) : training::TrainHooks{};
    training::TrainResult tr = training::train(td, arch, fold_cfg, hooks);
    r.pretrain_epochs = tr.pretrain_epochs;
    r.adversarial_epochs = tr.adversarial_epochs;
    const data::WindowedDataset test = data::subset(ds, plan.test);
    const std::vector<int> pred = argmax_rows(model::activity_logits(tr.model, test.x, cfg.eval_batch));
    r.cm = confusion(test.activity, pred, ds.n_activities);
    r.m = metrics(r.cm);
    if (opt.on_trained) opt.on_trained(plan, tr);
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
  }
  return r;
}

std::vector<FoldResult> run_plan(const data::WindowedDataset& ds, const std::vector<FoldPlan>& plan,
                                 const model::ModelConfig& arch, const training::TrainConfig& cfg,
                                 const RunOptions& opt) {
  std::vector<FoldResult> results(plan.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < plan.size(); i = next++) results[i] = run_fold(ds, plan[i], i, arch, cfg, opt);
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(opt.workers, plan.size()));
  if (n == 1) {
    worker();
    return results;
  }
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return results;
}

std::vector<FoldResult> run_loso(const data::WindowedDataset& ds, const model::ModelConfig& arch,
                                 const training::TrainConfig& cfg, const RunOptions& opt) {
  return run_plan(ds, loso_plan(ds), arch, cfg, opt);
}

std::vector<FoldResult> run_cross_dataset(const data::WindowedDataset& ds, const model::ModelConfig& arch,
                                          const training::TrainConfig& cfg, const RunOptions& opt) {
  return run_plan(ds, cross_dataset_plan(ds), arch, cfg, opt);
}

}  // namespace tasked::evaluation
