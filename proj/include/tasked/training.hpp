#pragma once

// Two-phase training: multi-task pre-training of E, C and D, then adversarial
// training of E against D with an MMD regulariser and self-distillation from a
// frozen copy of the pre-trained model.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tasked/data.hpp"
#include "tasked/losses.hpp"
#include "tasked/model.hpp"

#include "json.hpp"

namespace tasked::training {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 200;  // per phase
  std::size_t patience = 20;
  double lr_extractor = 1e-4;
  double lr_classifier = 1e-4;
  double lr_discriminator = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  OptimizerKind optimizer = OptimizerKind::adam;
  losses::LossHyper hyper;
  std::vector<double> kernel_factors = {0.25, 0.5, 1.0, 2.0, 4.0};
  bool use_target_unlabeled = false;
  bool run_adversarial = true;
  // Teacher logits from an eval-mode forward; false runs the teacher in train
  // mode without touching its BN statistics.
  bool teacher_eval_mode = true;
  std::size_t eval_batch = 256;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

// w_i = n / (n_a n_i), rescaled to mean 1 over the present classes' weights;
// absent classes get 0 with a warning.
losses::ClassWeights class_weights(std::span<const int> labels, std::size_t n_activities,
                                   std::vector<std::string>* warnings = nullptr);

enum class Phase { pretrain, adversarial };
const char* to_string(Phase p);

// Per-batch or per-epoch loss record.
struct LossBundle {
  Phase phase = Phase::pretrain;
  std::size_t epoch = 0;
  double activity = 0.0;    // L_act on the source batch
  double kd = 0.0;          // KD term (phase 2)
  double cls = 0.0;         // L_cls fed to the classifier optimiser
  double domain = 0.0;      // L_D fed to the discriminator optimiser
  double mmd = 0.0;         // L_MMD in the extractor objective
  double extractor = 0.0;   // scalar fed to the extractor optimiser
  double extractor_domain_term = 0.0;  // contribution of L_D inside that scalar
  double target_domain = 0.0;          // L_D on the source + target batch
  double target_extractor = 0.0;       // L_MMD - L_D on the source + target batch
  double val_macro_f1 = 0.0;
  double val_accuracy = 0.0;
  std::size_t batches = 0;
};

nlohmann::json to_json(const LossBundle& b);

struct Batch {
  Tensor x;                  // (n, channels, W)
  std::vector<int> activity;  // empty for target batches
  std::vector<int> subject;   // discriminator labels: 0..N-1 sources, N target
};

// One optimiser update of one network.
struct SubStep {
  Phase phase;
  model::Net net;
  std::string name;  // "C", "D", "E", "D_joint", "E_joint"
  double loss = 0.0;  // scalar whose gradient drove the update
};

using Observer = std::function<void(const SubStep&, const model::ModelParams& student)>;

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps);
  void step(model::ModelParams& p, const std::vector<std::size_t>& indices, const std::vector<Tensor>& grads);
  void reset();
  double lr() const { return lr_; }

 private:
  OptimizerKind kind_ = OptimizerKind::adam;
  double lr_ = 0.0, beta1_ = 0.9, beta2_ = 0.99, eps_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class Trainer {
 public:
  Trainer(model::ModelParams student, TrainConfig cfg, losses::ClassWeights weights);

  LossBundle pretrain_step(const Batch& batch);
  LossBundle adversarial_step(const Batch& source, const Batch* target = nullptr);

  // Freezes a copy of the given parameters as teacher, makes it the student and
  // resets optimiser moments.
  void begin_adversarial(const model::ModelParams& start);

  model::ModelParams& student() { return student_; }
  const model::ModelParams& student() const { return student_; }
  const model::ModelParams* teacher() const { return teacher_ ? &*teacher_ : nullptr; }
  Phase phase() const { return phase_; }
  void set_observer(Observer obs) { observer_ = std::move(obs); }
  std::vector<std::string>& warnings() { return warnings_; }

 private:
  void update(model::Net net, const std::string& name, ag::Tape& tape, const model::Binding& b, ag::Var loss);
  void check_finite(const std::string& what, double v) const;

  model::ModelParams student_;
  std::optional<model::ModelParams> teacher_;
  TrainConfig cfg_;
  losses::ClassWeights weights_;
  Optimizer opt_e_, opt_c_, opt_d_;
  Phase phase_ = Phase::pretrain;
  Rng rng_;
  Observer observer_;
  std::vector<std::string> warnings_;
};

// Subject-stratified batches: subjects are interleaved round-robin so every
// batch mixes subjects whenever more than one is present. A trailing batch of
// one window is merged into the previous batch.
std::vector<std::vector<std::size_t>> stratified_batches(std::span<const int> subject,
                                                          const std::vector<std::size_t>& indices,
                                                          std::size_t batch_size, Rng& rng);

struct TrainData {
  const data::WindowedDataset* ds = nullptr;
  std::vector<std::size_t> train, val;
  std::vector<std::size_t> target;  // unlabeled target windows, used when use_target_unlabeled
};

struct TrainResult {
  model::ModelParams model;    // best validation checkpoint of the last phase run
  model::ModelParams teacher;  // best pre-training checkpoint
  std::vector<LossBundle> history;
  std::size_t pretrain_epochs = 0;
  std::size_t adversarial_epochs = 0;
  double best_pretrain_f1 = 0.0;
  double best_adversarial_f1 = 0.0;
  std::vector<int> discriminator_subjects;  // dataset subject index of each discriminator class
  std::vector<std::string> warnings;
};

struct TrainHooks {
  std::function<void(const LossBundle&)> on_epoch;
  Observer on_substep;
};

// Fills the dataset-derived fields of arch (sensors, window, n_activities,
// n_subjects) and runs both phases.
TrainResult train(const TrainData& data, const model::ModelConfig& arch, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

model::ModelConfig model_config_for(const data::WindowedDataset& ds, const model::ModelConfig& arch,
                                    std::size_t n_train_subjects);

// Macro-F1 and accuracy of the activity head on the given windows.
std::pair<double, double> validation_scores(model::ModelParams& p, const data::WindowedDataset& ds,
                                            const std::vector<std::size_t>& indices, std::size_t batch);

}  // namespace tasked::training
