#pragma once

// Metrics, fold planning and LOSO / cross-dataset sweeps.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tasked/data.hpp"
#include "tasked/model.hpp"
#include "tasked/training.hpp"

#include "json.hpp"

namespace tasked::evaluation {

// Rows are true classes, columns predictions.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t n) : classes(n), counts(n * n, 0) {}
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
  void add(int truth, int pred);
  std::uint64_t total() const;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes);

struct Metrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> f1;  // per class
};

// Throws on an empty matrix. Classes with precision + recall = 0 have F1 = 0.
Metrics metrics(const ConfusionMatrix& cm);

std::vector<int> argmax_rows(const Tensor& logits);

struct FoldPlan {
  std::string id;
  std::vector<int> test_subjects;  // dataset subject indices, one per source dataset
  std::vector<int> val_subjects;
  std::size_t variant = 0;  // which validation subject (0 or 1)
  std::vector<std::size_t> train, val, test;
};

// Two folds per subject, test subjects ascending.
std::vector<FoldPlan> loso_plan(const data::WindowedDataset& ds);
// One held-out subject per source dataset per round; rounds = smallest subject
// count over the sources; two validation variants per round.
std::vector<FoldPlan> cross_dataset_plan(const data::WindowedDataset& ds);

struct FoldResult {
  std::string id;
  std::vector<int> test_subjects;
  std::vector<int> val_subjects;
  std::size_t variant = 0;
  ConfusionMatrix cm;
  Metrics m;
  bool failed = false;
  std::string error;
  std::size_t pretrain_epochs = 0;
  std::size_t adversarial_epochs = 0;
};

nlohmann::json to_json(const FoldResult& r);
FoldResult fold_result_from_json(const nlohmann::json& j);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct Aggregate {
  std::size_t folds = 0;
  std::size_t failed = 0;
  Stat accuracy, weighted_f1, macro_f1;                             // across folds
  Stat subject_accuracy, subject_weighted_f1, subject_macro_f1;  // across test subjects (variants averaged)
};

Stat mean_std(std::span<const double> values);
Aggregate aggregate(const std::vector<FoldResult>& folds);
nlohmann::json to_json(const Aggregate& a);

struct RunOptions {
  std::size_t workers = 1;
  // Called in the worker thread before a fold trains; may attach log hooks.
  std::function<training::TrainHooks(const FoldPlan&)> hooks_for;
  // Called in the worker thread after a fold trained successfully.
  std::function<void(const FoldPlan&, const training::TrainResult&)> on_trained;
};

FoldResult run_fold(const data::WindowedDataset& ds, const FoldPlan& plan, std::size_t fold_index,
                    const model::ModelConfig& arch, const training::TrainConfig& cfg, const RunOptions& opt = {});

// Runs every planned fold (in parallel up to opt.workers); results keep plan order.
std::vector<FoldResult> run_plan(const data::WindowedDataset& ds, const std::vector<FoldPlan>& plan,
                                 const model::ModelConfig& arch, const training::TrainConfig& cfg,
                                 const RunOptions& opt = {});

std::vector<FoldResult> run_loso(const data::WindowedDataset& ds, const model::ModelConfig& arch,
                                 const training::TrainConfig& cfg, const RunOptions& opt = {});
std::vector<FoldResult> run_cross_dataset(const data::WindowedDataset& ds, const model::ModelConfig& arch,
                                          const training::TrainConfig& cfg, const RunOptions& opt = {});

}  // namespace tasked::evaluation
