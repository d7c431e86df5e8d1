#include "tasked/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "tasked/evaluation.hpp"
#include "tasked/kernels.hpp"

namespace tasked::training {

using model::Net;

void TrainConfig::validate() const {
  if (batch_size < 2) throw Error("train.batch_size: must be at least 2");
  if (epochs == 0) throw Error("train.epochs: must be positive");
  if (patience > epochs) throw Error("train.patience: must not exceed train.epochs");
  if (!(lr_extractor >= 0) || !(lr_classifier >= 0) || !(lr_discriminator >= 0))
    throw Error("train.lr_*: learning rates must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw Error("train.beta1/beta2: must lie in [0, 1)");
  if (!(adam_eps > 0)) throw Error("train.adam_eps: must be positive");
  if (kernel_factors.empty()) throw Error("train.kernel_factors: must not be empty");
  for (double f : kernel_factors)
    if (!(f > 0)) throw Error("train.kernel_factors: factors must be positive");
  if (eval_batch == 0) throw Error("train.eval_batch: must be positive");
  hyper.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"patience", c.patience},
          {"lr_extractor", c.lr_extractor},
          {"lr_classifier", c.lr_classifier},
          {"lr_discriminator", c.lr_discriminator},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
          {"lambda_cls", c.hyper.lambda_cls},
          {"lambda_mmd", c.hyper.lambda_mmd},
          {"lambda_d", c.hyper.lambda_d},
          {"alpha", c.hyper.alpha},
          {"tau", c.hyper.tau},
          {"dice_eps", c.hyper.dice_eps},
          {"kernel_factors", c.kernel_factors},
          {"use_target_unlabeled", c.use_target_unlabeled},
          {"run_adversarial", c.run_adversarial},
          {"teacher_eval_mode", c.teacher_eval_mode},
          {"eval_batch", c.eval_batch},
          {"seed", c.seed}};
}

losses::ClassWeights class_weights(std::span<const int> labels, std::size_t n_activities,
                                   std::vector<std::string>* warnings) {
  if (labels.empty()) throw Error("class_weights: empty label set");
  std::vector<double> counts(n_activities, 0.0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_activities) throw Error("class_weights: label out of range");
    counts[static_cast<std::size_t>(l)] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  losses::ClassWeights w{std::vector<double>(n_activities, 0.0)};
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < n_activities; ++i) {
    if (counts[i] == 0) {
      if (warnings) warnings->push_back("class_weights: class " + std::to_string(i) + " absent, weight set to 0");
      continue;
    }
    w.w[i] = n / (static_cast<double>(n_activities) * counts[i]);
    sum += w.w[i];
    ++present;
  }
  if (present == 1 && warnings) warnings->push_back("class_weights: only one class present");
  const double mean = sum / static_cast<double>(present);
  for (double& v : w.w) v /= mean;
  return w;
}

const char* to_string(Phase p) { return p == Phase::pretrain ? "pretrain" : "adversarial"; }

nlohmann::json to_json(const LossBundle& b) {
  return {{"phase", to_string(b.phase)},
          {"epoch", b.epoch},
          {"activity", b.activity},
          {"kd", b.kd},
          {"cls", b.cls},
          {"domain", b.domain},
          {"mmd", b.mmd},
          {"extractor", b.extractor},
          {"extractor_domain_term", b.extractor_domain_term},
          {"target_domain", b.target_domain},
          {"target_extractor", b.target_extractor},
          {"val_macro_f1", b.val_macro_f1},
          {"val_accuracy", b.val_accuracy},
          {"batches", b.batches}};
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps)
    : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Optimizer::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

void Optimizer::step(model::ModelParams& p, const std::vector<std::size_t>& indices, const std::vector<Tensor>& grads) {
  if (grads.size() != indices.size()) throw Error("optimizer: gradient count mismatch");
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t k = 0; k < indices.size(); ++k) kernels::axpy(-lr_, grads[k].ptr(), p.params()[indices[k]].value.ptr(), grads[k].numel());
    return;
  }
  if (m_.empty()) {
    for (const Tensor& g : grads) {
      m_.emplace_back(g.shape);
      v_.emplace_back(g.shape);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    double* w = p.params()[indices[k]].value.ptr();
    const double* g = grads[k].ptr();
    double* m = m_[k].ptr();
    double* v = v_[k].ptr();
    for (std::size_t i = 0; i < grads[k].numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------

Trainer::Trainer(model::ModelParams student, TrainConfig cfg, losses::ClassWeights weights)
    : student_(std::move(student)),
      cfg_(std::move(cfg)),
      weights_(std::move(weights)),
      opt_e_(cfg_.optimizer, cfg_.lr_extractor, cfg_.beta1, cfg_.beta2, cfg_.adam_eps),
      opt_c_(cfg_.optimizer, cfg_.lr_classifier, cfg_.beta1, cfg_.beta2, cfg_.adam_eps),
      opt_d_(cfg_.optimizer, cfg_.lr_discriminator, cfg_.beta1, cfg_.beta2, cfg_.adam_eps),
      rng_(derive_seed(cfg_.seed, "trainer")) {
  cfg_.validate();
  if (weights_.w.size() != student_.config().n_activities)
    throw Error("trainer: class weight count does not match n_activities");
}

void Trainer::check_finite(const std::string& what, double v) const {
  if (!std::isfinite(v))
    throw NonFiniteLoss(std::string("non-finite ") + what + " loss in " + to_string(phase_) + " phase");
}

void Trainer::update(Net net, const std::string& name, ag::Tape& tape, const model::Binding& b, ag::Var loss) {
  const double value = tape.scalar(loss);
  check_finite(name, value);
  tape.backward(loss);
  const std::vector<std::size_t> idx = student_.select(net);
  std::vector<Tensor> grads;
  grads.reserve(idx.size());
  for (std::size_t i : idx) grads.push_back(tape.grad(b.vars[i]));
  Optimizer& opt = net == Net::extractor ? opt_e_ : net == Net::classifier ? opt_c_ : opt_d_;
  opt.step(student_, idx, grads);
  if (observer_) observer_(SubStep{phase_, net, name, value}, student_);
}

namespace {

void rebind(ag::Tape& t, const model::ModelParams& p, model::Binding& b, std::initializer_list<Net> nets) {
  for (Net n : nets)
    for (std::size_t i : p.select(n)) b.vars[i] = t.constant(p.params()[i].value);
}

void add_warning(std::vector<std::string>& w, const std::vector<std::string>& fresh) {
  for (const std::string& s : fresh)
    if (std::find(w.begin(), w.end(), s) == w.end()) w.push_back(s);
}

}  // namespace

LossBundle Trainer::pretrain_step(const Batch& batch) {
  if (phase_ != Phase::pretrain) throw Error("pretrain_step: trainer is in the adversarial phase");
  const model::ModelConfig& mc = student_.config();
  LossBundle out;
  out.phase = phase_;
  const Tensor y = losses::one_hot(batch.activity, mc.n_activities);
  model::ForwardOptions fwd{ag::Mode::train, &rng_, true, nullptr};
  model::ForwardOptions fwd_frozen_stats = fwd;
  fwd_frozen_stats.update_running_stats = false;

  ag::Tape te;
  model::Binding be = model::bind(te, student_, {Net::extractor});
  const ag::Var emb = model::extract_features(te, student_, be, batch.x, fwd);
  const Tensor& embv = te.value(emb);

  {
    ag::Tape tc;
    model::Binding bc = model::bind(tc, student_, {Net::classifier});
    ag::Var logits = model::classify_activity(tc, student_, bc, tc.constant(embv));
    ag::Var l = losses::op::activity_loss(tc, logits, y, weights_, cfg_.hyper.dice_eps);
    out.activity = out.cls = tc.scalar(l);
    update(Net::classifier, "C", tc, bc, l);
  }
  {
    ag::Tape td;
    model::Binding bd = model::bind(td, student_, {Net::discriminator});
    ag::Var logits = model::discriminate_subject(td, student_, bd, td.constant(embv), fwd);
    ag::Var l = losses::op::domain_loss(td, logits, batch.subject);
    out.domain = td.scalar(l);
    update(Net::discriminator, "D", td, bd, l);
  }
  // Multi-task extractor update: minimise L_act + L_D with the refreshed C and D.
  rebind(te, student_, be, {Net::classifier, Net::discriminator});
  ag::Var la = losses::op::activity_loss(te, model::classify_activity(te, student_, be, emb), y, weights_,
                                         cfg_.hyper.dice_eps);
  ag::Var ld = losses::op::domain_loss(te, model::discriminate_subject(te, student_, be, emb, fwd_frozen_stats),
                                       batch.subject);
  ag::Var total = ag::add(te, la, ld);
  out.extractor = te.scalar(total);
  out.extractor_domain_term = te.scalar(ld);
  update(Net::extractor, "E", te, be, total);
  return out;
}

void Trainer::begin_adversarial(const model::ModelParams& start) {
  student_ = start;
  teacher_ = start;
  opt_e_.reset();
  opt_c_.reset();
  opt_d_.reset();
  phase_ = Phase::adversarial;
}

LossBundle Trainer::adversarial_step(const Batch& source, const Batch* target) {
  if (phase_ != Phase::adversarial || !teacher_) throw Error("adversarial_step: no teacher; call begin_adversarial");
  if (target && !cfg_.use_target_unlabeled)
    throw Error("adversarial_step: target batch given while use_target_unlabeled is false");
  const model::ModelConfig& mc = student_.config();
  const losses::LossHyper& h = cfg_.hyper;
  LossBundle out;
  out.phase = phase_;
  const Tensor y = losses::one_hot(source.activity, mc.n_activities);
  model::ForwardOptions fwd{ag::Mode::train, &rng_, true, nullptr};
  model::ForwardOptions fwd_frozen_stats = fwd;
  fwd_frozen_stats.update_running_stats = false;

  Tensor teacher_logits;
  {
    ag::Tape tt;
    model::Binding bt = model::bind(tt, *teacher_, {});
    model::ForwardOptions tf = fwd_frozen_stats;
    if (cfg_.teacher_eval_mode) tf.mode = ag::Mode::eval;
    teacher_logits = tt.value(
        model::classify_activity(tt, *teacher_, bt, model::extract_features(tt, *teacher_, bt, source.x, tf)));
  }

  ag::Tape te;
  model::Binding be = model::bind(te, student_, {Net::extractor});
  const ag::Var emb = model::extract_features(te, student_, be, source.x, fwd);
  const Tensor& embv = te.value(emb);

  {
    ag::Tape td;
    model::Binding bd = model::bind(td, student_, {Net::discriminator});
    ag::Var logits = model::discriminate_subject(td, student_, bd, td.constant(embv), fwd);
    ag::Var l = losses::op::domain_loss(td, logits, source.subject);
    out.domain = td.scalar(l);
    update(Net::discriminator, "D", td, bd, l);
  }
  auto classification = [&](ag::Tape& t, ag::Var logits) {
    ag::Var la = losses::op::activity_loss(t, logits, y, weights_, h.dice_eps);
    ag::Var lk = losses::op::kd_loss(t, logits, teacher_logits, h.tau);
    return std::tuple{la, lk, ag::weighted_sum(t, {{la, 1.0 - h.alpha}, {lk, h.alpha}})};
  };
  {
    ag::Tape tc;
    model::Binding bc = model::bind(tc, student_, {Net::classifier});
    auto [la, lk, l] = classification(tc, model::classify_activity(tc, student_, bc, tc.constant(embv)));
    out.activity = tc.scalar(la);
    out.kd = tc.scalar(lk);
    out.cls = tc.scalar(l);
    update(Net::classifier, "C", tc, bc, l);
  }
  {
    rebind(te, student_, be, {Net::classifier, Net::discriminator});
    auto [la, lk, lcls] = classification(te, model::classify_activity(te, student_, be, emb));
    (void)la;
    (void)lk;
    ag::Var ld = losses::op::domain_loss(te, model::discriminate_subject(te, student_, be, emb, fwd_frozen_stats),
                                         source.subject);
    ag::Var flat = ag::mean_time(te, emb);
    const losses::KernelBank bank = losses::median_kernel_bank(te.value(flat), cfg_.kernel_factors);
    std::vector<std::string> w;
    ag::Var lm = losses::op::mmd_regularizer(te, flat, source.subject, bank, &w);
    add_warning(warnings_, w);
    ag::Var obj = ag::weighted_sum(te, {{lcls, h.lambda_cls}, {lm, h.lambda_mmd}, {ld, -h.lambda_d}});
    out.mmd = te.scalar(lm);
    out.extractor = te.scalar(obj);
    out.extractor_domain_term = -h.lambda_d * te.scalar(ld);
    update(Net::extractor, "E", te, be, obj);
  }

  if (cfg_.use_target_unlabeled && target) {
    const std::size_t ns = source.x.dim(0), nt = target->x.dim(0);
    const std::size_t row = source.x.numel() / ns;
    Tensor xcat({ns + nt, source.x.dim(1), source.x.dim(2)});
    std::copy_n(source.x.ptr(), ns * row, xcat.ptr());
    std::copy_n(target->x.ptr(), nt * row, xcat.ptr() + ns * row);
    std::vector<int> scat = source.subject;
    scat.insert(scat.end(), target->subject.begin(), target->subject.end());

    ag::Tape tj;
    model::Binding bj = model::bind(tj, student_, {Net::extractor});
    const ag::Var embj = model::extract_features(tj, student_, bj, xcat, fwd);
    {
      ag::Tape td;
      model::Binding bd = model::bind(td, student_, {Net::discriminator});
      ag::Var logits = model::discriminate_subject(td, student_, bd, td.constant(tj.value(embj)), fwd);
      ag::Var l = losses::op::domain_loss(td, logits, scat);
      out.target_domain = td.scalar(l);
      update(Net::discriminator, "D_joint", td, bd, l);
    }
    rebind(tj, student_, bj, {Net::discriminator});
    ag::Var ld = losses::op::domain_loss(
        tj, model::discriminate_subject(tj, student_, bj, embj, fwd_frozen_stats), scat);
    ag::Var flat = ag::mean_time(tj, embj);
    const losses::KernelBank bank = losses::median_kernel_bank(tj.value(flat), cfg_.kernel_factors);
    std::vector<std::string> w;
    ag::Var lm = losses::op::mmd_regularizer(tj, flat, scat, bank, &w);
    add_warning(warnings_, w);
    ag::Var obj = ag::weighted_sum(tj, {{lm, 1.0}, {ld, -1.0}});
    out.target_extractor = tj.scalar(obj);
    update(Net::extractor, "E_joint", tj, bj, obj);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> stratified_batches(std::span<const int> subject,
                                                          const std::vector<std::size_t>& indices,
                                                          std::size_t batch_size, Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_subject;
  for (std::size_t i : indices) by_subject[subject[i]].push_back(i);
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [s, v] : by_subject) {
    std::shuffle(v.begin(), v.end(), rng.engine());
    groups.push_back(std::move(v));
  }
  std::shuffle(groups.begin(), groups.end(), rng.engine());
  std::vector<std::size_t> order;
  order.reserve(indices.size());
  for (std::size_t k = 0; order.size() < indices.size(); ++k)
    for (const auto& g : groups)
      if (k < g.size()) order.push_back(g[k]);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

model::ModelConfig model_config_for(const data::WindowedDataset& ds, const model::ModelConfig& arch,
                                    std::size_t n_train_subjects) {
  model::ModelConfig mc = arch;
  mc.sensors = ds.grouping;
  mc.window = ds.window();
  mc.n_activities = ds.n_activities;
  mc.n_subjects = n_train_subjects;
  mc.validate();
  return mc;
}

std::pair<double, double> validation_scores(model::ModelParams& p, const data::WindowedDataset& ds,
                                            const std::vector<std::size_t>& indices, std::size_t batch) {
  const data::WindowedDataset sub = data::subset(ds, indices);
  const std::vector<int> pred = evaluation::argmax_rows(model::activity_logits(p, sub.x, batch));
  const evaluation::Metrics m = evaluation::metrics(evaluation::confusion(sub.activity, pred, ds.n_activities));
  return {m.macro_f1, m.accuracy};
}

namespace {

Batch gather(const data::WindowedDataset& ds, const std::vector<std::size_t>& idx, const std::map<int, int>& disc_label,
             bool with_activity) {
  const std::size_t nc = ds.channels(), w = ds.window();
  Batch b;
  b.x = Tensor({idx.size(), nc, w});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy_n(ds.x.ptr() + idx[k] * nc * w, nc * w, b.x.ptr() + k * nc * w);
    if (with_activity) b.activity.push_back(ds.activity[idx[k]]);
    auto it = disc_label.find(ds.subject[idx[k]]);
    b.subject.push_back(it == disc_label.end() ? static_cast<int>(disc_label.size()) : it->second);
  }
  return b;
}

LossBundle mean_bundle(const std::vector<LossBundle>& items, Phase phase, std::size_t epoch) {
  LossBundle m;
  m.phase = phase;
  m.epoch = epoch;
  m.batches = items.size();
  for (const LossBundle& b : items) {
    m.activity += b.activity;
    m.kd += b.kd;
    m.cls += b.cls;
    m.domain += b.domain;
    m.mmd += b.mmd;
    m.extractor += b.extractor;
    m.extractor_domain_term += b.extractor_domain_term;
    m.target_domain += b.target_domain;
    m.target_extractor += b.target_extractor;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, items.size()));
  for (double* v : {&m.activity, &m.kd, &m.cls, &m.domain, &m.mmd, &m.extractor, &m.extractor_domain_term,
                    &m.target_domain, &m.target_extractor})
    *v /= n;
  return m;
}

}  // namespace

TrainResult train(const TrainData& data, const model::ModelConfig& arch, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (!data.ds) throw Error("train: no dataset");
  const data::WindowedDataset& ds = *data.ds;
  if (data.train.empty() || data.val.empty()) throw Error("train: train and validation splits must be nonempty");
  if (cfg.use_target_unlabeled && cfg.run_adversarial && data.target.empty())
    throw Error("train: use_target_unlabeled requires target windows");

  TrainResult result;
  std::set<int> subjects;
  for (std::size_t i : data.train) subjects.insert(ds.subject[i]);
  std::map<int, int> disc_label;
  for (int s : subjects) {
    disc_label[s] = static_cast<int>(result.discriminator_subjects.size());
    result.discriminator_subjects.push_back(s);
  }
  const model::ModelConfig mc = model_config_for(ds, arch, subjects.size());

  std::vector<int> train_labels;
  for (std::size_t i : data.train) train_labels.push_back(ds.activity[i]);
  const losses::ClassWeights weights = class_weights(train_labels, ds.n_activities, &result.warnings);

  Trainer trainer(model::ModelParams::initialized(mc, derive_seed(cfg.seed, "init")), cfg, weights);
  if (hooks.on_substep) trainer.set_observer(hooks.on_substep);
  Rng batch_rng(derive_seed(cfg.seed, "batches"));
  Rng target_rng(derive_seed(cfg.seed, "target"));

  std::vector<std::size_t> target_order = data.target;
  std::size_t target_pos = target_order.size();
  const std::size_t target_batch =
      std::clamp<std::size_t>(cfg.batch_size / std::max<std::size_t>(1, subjects.size()), 2,
                              std::max<std::size_t>(2, data.target.size()));
  auto next_target = [&]() {
    std::vector<std::size_t> idx;
    while (idx.size() < std::min(target_batch, target_order.size())) {
      if (target_pos >= target_order.size()) {
        std::shuffle(target_order.begin(), target_order.end(), target_rng.engine());
        target_pos = 0;
      }
      idx.push_back(target_order[target_pos++]);
    }
    return gather(ds, idx, disc_label, false);
  };

  auto run_phase = [&](Phase phase, double& best_f1) {
    model::ModelParams best = trainer.student();
    best_f1 = -1.0;
    std::size_t since = 0, epochs_run = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::vector<LossBundle> items;
      for (const auto& idx : stratified_batches(ds.subject, data.train, cfg.batch_size, batch_rng)) {
        const Batch b = gather(ds, idx, disc_label, true);
        if (phase == Phase::pretrain) {
          items.push_back(trainer.pretrain_step(b));
        } else if (cfg.use_target_unlabeled) {
          const Batch t = next_target();
          items.push_back(trainer.adversarial_step(b, &t));
        } else {
          items.push_back(trainer.adversarial_step(b));
        }
      }
      LossBundle summary = mean_bundle(items, phase, epoch);
      std::tie(summary.val_macro_f1, summary.val_accuracy) =
          validation_scores(trainer.student(), ds, data.val, cfg.eval_batch);
      result.history.push_back(summary);
      if (hooks.on_epoch) hooks.on_epoch(summary);
      ++epochs_run;
      if (summary.val_macro_f1 > best_f1) {
        best_f1 = summary.val_macro_f1;
        best = trainer.student();
        since = 0;
      } else {
        ++since;
      }
      if (since >= cfg.patience) break;
    }
    return std::pair{best, epochs_run};
  };

  auto [best_pre, pre_epochs] = run_phase(Phase::pretrain, result.best_pretrain_f1);
  result.pretrain_epochs = pre_epochs;
  result.teacher = best_pre;
  if (cfg.run_adversarial) {
    trainer.begin_adversarial(best_pre);
    auto [best_adv, adv_epochs] = run_phase(Phase::adversarial, result.best_adversarial_f1);
    result.adversarial_epochs = adv_epochs;
    result.model = std::move(best_adv);
  } else {
    result.model = best_pre;
  }
  add_warning(result.warnings, trainer.warnings());
  return result;
}

}  // namespace tasked::training
