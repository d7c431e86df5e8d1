// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "tasked/evaluation.hpp"
#include "tasked/losses.hpp"
#include "tasked/model.hpp"
#include "tasked/probe.hpp"
#include "tasked/runner.hpp"
#include "tasked/training.hpp"

using namespace tasked;
using model::Net;
using testutil::gradcheck;
using testutil::random_tensor;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kGradRelErr = 1e-4;
constexpr double kMmdOracleTol = 1e-9;
constexpr double kMmdClosedFormTol = 1e-6;
constexpr double kRowSumTol = 1e-6;
constexpr double kKdZeroTol = 1e-9;
constexpr double kUniformTol = 1e-6;
constexpr double kWorkedExampleTol = 1e-4;
constexpr double kProbeDrop = 0.10;

// Collects failed conditions of one criterion.
struct Check {
  std::vector<std::string> failures;
  std::ostringstream info;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

model::ModelConfig config_for(std::size_t window, const std::vector<std::size_t>& sensor_channels, std::size_t n_a,
                              std::size_t n_subjects) {
  model::ModelConfig c;
  std::size_t first = 0;
  for (std::size_t s = 0; s < sensor_channels.size(); ++s) {
    c.sensors.push_back({"sensor" + std::to_string(s), first, sensor_channels[s]});
    first += sensor_channels[s];
  }
  c.window = window;
  c.n_activities = n_a;
  c.n_subjects = n_subjects;
  return c;
}

Tensor gather(const data::WindowedDataset& ds, const std::vector<std::size_t>& idx) {
  const std::size_t row = ds.channels() * ds.window();
  Tensor x({idx.size(), ds.channels(), ds.window()});
  for (std::size_t k = 0; k < idx.size(); ++k) std::copy_n(ds.x.ptr() + idx[k] * row, row, x.ptr() + k * row);
  return x;
}

training::Batch make_batch(const data::WindowedDataset& ds, const std::vector<std::size_t>& idx,
                           const std::function<int(int)>& label_of, bool with_activity) {
  training::Batch b;
  b.x = gather(ds, idx);
  for (std::size_t i : idx) {
    if (with_activity) b.activity.push_back(ds.activity[i]);
    b.subject.push_back(label_of(ds.subject[i]));
  }
  return b;
}

std::vector<std::size_t> where_subject(const data::WindowedDataset& ds, const std::function<bool(int)>& pred) {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (pred(ds.subject[i])) v.push_back(i);
  return v;
}

// mmd2 with its analytic gradient as a tape node, for finite-difference checks.
ag::Var mmd2_node(ag::Tape& t, ag::Var s, ag::Var u, const losses::KernelBank& bank) {
  const losses::MmdResult r = losses::mmd2_with_grad(t.value(s), t.value(u), bank);
  return t.record(Tensor({1}, {r.value}), {s, u}, [s, u, r](ag::Tape& tape, const Tensor& g) {
    if (Tensor* slot = tape.grad_slot(s))
      for (std::size_t i = 0; i < slot->numel(); ++i) (*slot)[i] += g[0] * r.grad_source[i];
    if (Tensor* slot = tape.grad_slot(u))
      for (std::size_t i = 0; i < slot->numel(); ++i) (*slot)[i] += g[0] * r.grad_target[i];
  });
}

// ---------------------------------------------------------------------------

void loss_gradients(Check& c) {
  Rng rng(101);
  const std::size_t n = 8;
  const Tensor logits = random_tensor(rng, {n, 5}), teacher = random_tensor(rng, {n, 5});
  const std::vector<int> y{0, 1, 2, 3, 4, 0, 2, 2}, subj{0, 1, 2, 0, 1, 2, 0, 1};
  const losses::ClassWeights w{{0.7, 1.3, 0.9, 1.1, 1.0}};
  const Tensor yh = losses::one_hot(y, 5);
  auto report = [&](const char* name, double err) {
    c.info << name << "=" << fmt(err) << " ";
    c.expect(err < kGradRelErr, std::string(name) + " rel err " + fmt(err));
  };
  report("activity", gradcheck({logits}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
           return losses::op::activity_loss(t, v[0], yh, w, 1e-6);
         }));
  report("kd", gradcheck({logits}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
           return losses::op::kd_loss(t, v[0], teacher, 4.0);
         }));
  report("domain", gradcheck({logits}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
           return losses::op::domain_loss(t, v[0], subj);
         }));
  const Tensor s = random_tensor(rng, {6, 4}), u = random_tensor(rng, {5, 4}, 1.5);
  const losses::KernelBank bank = losses::median_kernel_bank(s);
  report("mmd2", gradcheck({s, u}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
           return mmd2_node(t, v[0], v[1], bank);
         }));

  // Full extractor objective lambda_cls L_cls + lambda_mmd L_MMD - lambda_D L_D
  // through the whole network, checked on a subset of extractor parameters.
  model::ModelConfig mc = config_for(64, {2, 2}, 3, 2);
  mc.stem_channels = 8;
  mc.heads = 2;
  const model::ModelParams base = model::ModelParams::initialized(mc, 103);
  const Tensor x = random_tensor(rng, {6, 4, 64});
  const std::vector<int> act{0, 1, 2, 0, 1, 2}, dom{0, 0, 0, 1, 1, 1};
  const Tensor act_h = losses::one_hot(act, 3);
  const losses::LossHyper hyper;
  const model::ForwardOptions eval{ag::Mode::eval, nullptr, false, nullptr};
  Tensor teacher_logits, pooled;
  {
    model::ModelParams p = base;
    ag::Tape t;
    const model::Binding b = model::bind(t, p, {});
    const ag::Var e = model::extract_features(t, p, b, x, eval);
    teacher_logits = t.value(model::classify_activity(t, p, b, e));
    for (double& v : teacher_logits.data) v *= 0.5;
    pooled = t.value(ag::mean_time(t, e));
  }
  const losses::KernelBank fbank = losses::median_kernel_bank(pooled);
  const std::vector<std::string> names{"extractor.stem.0.weight", "extractor.block.0.value.weight",
                                       "extractor.block.2.norm1.beta"};
  std::vector<Tensor> inputs;
  for (const auto& nm : names) inputs.push_back(base.param(nm));
  report("extractor_objective",
         gradcheck(
             inputs,
             [&](ag::Tape& t, const std::vector<ag::Var>& v) {
               model::ModelParams p = base;
               model::Binding b = model::bind(t, p, {});
               for (std::size_t k = 0; k < names.size(); ++k) b.vars[p.index(names[k])] = v[k];
               const ag::Var e = model::extract_features(t, p, b, x, eval);
               const ag::Var logits = model::classify_activity(t, p, b, e);
               const ag::Var la = losses::op::activity_loss(t, logits, act_h, {{1, 1, 1}}, hyper.dice_eps);
               const ag::Var lk = losses::op::kd_loss(t, logits, teacher_logits, hyper.tau);
               const ag::Var lcls = ag::weighted_sum(t, {{la, 1.0 - hyper.alpha}, {lk, hyper.alpha}});
               const ag::Var ld = losses::op::domain_loss(t, model::discriminate_subject(t, p, b, e, eval), dom);
               const ag::Var lm = losses::op::mmd_regularizer(t, ag::mean_time(t, e), dom, fbank);
               return ag::weighted_sum(t, {{lcls, hyper.lambda_cls}, {lm, hyper.lambda_mmd}, {ld, -hyper.lambda_d}});
             },
             1e-7, 1e-3));
}

void mmd_oracle(Check& c) {
  Rng rng(202);
  double worst = 0.0, self = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t m = 1 + rng.index(32), n = 1 + rng.index(32), d = 1 + rng.index(8);
    const Tensor s = random_tensor(rng, {m, d}), t = random_tensor(rng, {n, d}, rng.uniform(0.5, 2.0));
    Tensor both({m + n, d});
    std::copy_n(s.ptr(), s.numel(), both.ptr());
    std::copy_n(t.ptr(), t.numel(), both.ptr() + s.numel());
    const losses::KernelBank bank = losses::median_kernel_bank(both);
    worst = std::max(worst, std::abs(losses::mmd2(s, t, bank) - oracle::mmd2(s, t, bank)));
    self = std::max(self, std::abs(losses::mmd2(s, s, bank)));
  }
  const losses::KernelBank single{{std::sqrt(0.5)}, {1.0}};  // 2 sigma^2 = 1
  const double closed = losses::mmd2(Tensor({1, 1}, {0.0}), Tensor({1, 1}, {1.0}), single);
  const double expected = 2.0 - 2.0 * std::exp(-1.0);
  c.info << "max|vec-brute|=" << fmt(worst) << " max|mmd2(X,X)|=" << fmt(self) << " closed=" << closed;
  c.expect(worst < kMmdOracleTol, "vectorised vs brute force " + fmt(worst));
  c.expect(self < kMmdOracleTol, "mmd2(X,X) " + fmt(self));
  c.expect(std::abs(closed - expected) < kMmdClosedFormTol, "closed form " + fmt(closed));
}

void shapes(Check& c) {
  struct Case {
    std::size_t window, sensors;
  };
  const std::size_t n_a = 6, n_subjects = 7;
  for (const Case k : {Case{64, 10}, Case{120, 9}, Case{200, 3}}) {
    const model::ModelConfig mc = config_for(k.window, std::vector<std::size_t>(k.sensors, 3), n_a, n_subjects);
    model::ModelParams p = model::ModelParams::initialized(mc, 5);
    Rng rng(6);
    const Tensor x = random_tensor(rng, {2, 3 * k.sensors, k.window});
    ag::Tape t;
    const model::Binding b = model::bind(t, p, {});
    const model::ForwardOptions opt;
    const ag::Var e = model::extract_features(t, p, b, x, opt);
    const std::string tag = "(" + std::to_string(k.window) + "," + std::to_string(k.sensors) + ")";
    c.expect(t.value(e).shape == Shape{256, 2, k.window / 8}, tag + " embedding");
    c.expect(model::embed(p, x).shape == Shape{2, 256 * (k.window / 8)}, tag + " flattened embedding");
    c.expect(t.value(model::classify_activity(t, p, b, e)).shape == Shape{2, n_a}, tag + " classifier");
    c.expect(t.value(model::discriminate_subject(t, p, b, e, opt)).shape == Shape{2, n_subjects + 1},
             tag + " discriminator");
  }
  model::ModelConfig mc = config_for(64, {3, 3, 3, 3}, 4, 3);
  mc.drop_connect = 0.4;
  model::ModelParams p = model::ModelParams::initialized(mc, 7);
  Rng rng(8);
  const Tensor x = random_tensor(rng, {3, 12, 64});
  std::vector<ag::AttentionTrace> traces;
  ag::Tape t;
  const model::Binding b = model::bind(t, p, {Net::extractor});
  model::extract_features(t, p, b, x, {ag::Mode::train, &rng, true, &traces});
  double worst = 0.0;
  std::size_t rows = 0;
  for (const auto& tr : traces)
    for (const auto* r : {&tr.softmax_rows, &tr.final_rows})
      for (std::size_t i = 0; i < r->size() / tr.sensors; ++i, ++rows) {
        double s = 0.0;
        for (std::size_t j = 0; j < tr.sensors; ++j) s += (*r)[i * tr.sensors + j];
        worst = std::max(worst, std::abs(s - 1.0));
      }
  c.info << "attention rows checked=" << rows << " max|sum-1|=" << fmt(worst);
  c.expect(traces.size() == 3 && rows > 0, "attention traces missing");
  c.expect(worst < kRowSumTol, "attention row sum " + fmt(worst));
}

void kd_degeneracy(Check& c) {
  Rng rng(404);
  const Tensor logits = random_tensor(rng, {8, 5}, 2.0), teacher = random_tensor(rng, {8, 5}, 2.0);
  const std::vector<int> y{0, 1, 2, 3, 4, 1, 1, 3};
  const Tensor yh = losses::one_hot(y, 5);
  const losses::ClassWeights w{{1.2, 0.8, 1.0, 1.1, 0.9}};
  losses::LossHyper h;
  h.alpha = 0.0;
  const losses::ValueGrad cls = losses::classification_loss(logits, yh, teacher, w, h);
  const losses::ValueGrad act = losses::activity_loss(logits, yh, w, h.dice_eps);
  c.expect(cls.value == act.value && cls.grad.data == act.grad.data, "alpha=0 is not exactly activity_loss");
  double kd_self = 0.0;
  for (double tau : {1.0, 4.0, 20.0}) kd_self = std::max(kd_self, std::abs(losses::kd_loss(logits, logits, tau).value));
  c.expect(kd_self < kKdZeroTol, "kd(teacher == student) " + fmt(kd_self));
  const Tensor u = losses::softened_probs(logits, 1e6);
  double dev = 0.0;
  for (double v : u.data) dev = std::max(dev, std::abs(v - 0.2));
  c.expect(dev < kUniformTol, "tau=1e6 deviation " + fmt(dev));
  c.info << "|cls-act|=" << std::abs(cls.value - act.value) << " kd_self=" << fmt(kd_self) << " uniform_dev=" << fmt(dev);
}

void training_protocol(Check& c) {
  data::SyntheticConfig sc;
  sc.n_subjects = 3;
  sc.n_activities = 3;
  sc.windows_per_subject_per_activity = 4;
  sc.seed = 505;
  const data::WindowedDataset ds = data::make_synthetic(sc);
  const auto source = where_subject(ds, [](int s) { return s < 2; });
  const auto target = where_subject(ds, [](int s) { return s == 2; });
  const training::Batch src = make_batch(ds, source, [](int s) { return s; }, true);
  const training::Batch tgt = make_batch(ds, target, [](int) { return 2; }, false);

  model::ModelConfig arch;
  arch.stem_channels = 8;
  arch.heads = 2;
  training::TrainConfig cfg;
  cfg.batch_size = 12;
  cfg.lr_extractor = cfg.lr_classifier = 1e-3;
  cfg.use_target_unlabeled = true;
  cfg.seed = 506;
  std::vector<int> labels;
  for (std::size_t i : source) labels.push_back(ds.activity[i]);
  training::Trainer tr(model::ModelParams::initialized(training::model_config_for(ds, arch, 2), 507), cfg,
                       training::class_weights(labels, ds.n_activities));

  using Hashes = std::map<Net, std::uint64_t>;
  auto hashes = [](const model::ModelParams& p) {
    return Hashes{{Net::extractor, p.hash(Net::extractor)},
                  {Net::classifier, p.hash(Net::classifier)},
                  {Net::discriminator, p.hash(Net::discriminator)}};
  };
  Hashes before = hashes(tr.student()), teacher_start;
  std::size_t substeps = 0, ownership_violations = 0, teacher_changes = 0;
  tr.set_observer([&](const training::SubStep& step, const model::ModelParams& p) {
    const Hashes after = hashes(p);
    for (Net n : {Net::extractor, Net::classifier, Net::discriminator})
      if ((n == step.net) != (after.at(n) != before.at(n))) ++ownership_violations;
    if (step.phase == training::Phase::adversarial && hashes(*tr.teacher()) != teacher_start) ++teacher_changes;
    before = after;
    ++substeps;
  });
  bool plus = true, minus = true;
  for (int i = 0; i < 3; ++i) plus = plus && tr.pretrain_step(src).extractor_domain_term > 0.0;
  const model::ModelParams start = tr.student();
  tr.begin_adversarial(start);
  teacher_start = hashes(start);
  before = hashes(tr.student());
  for (int i = 0; i < 3; ++i) minus = minus && tr.adversarial_step(src, &tgt).extractor_domain_term < 0.0;
  c.info << "substeps=" << substeps << " ownership_violations=" << ownership_violations
         << " teacher_changes=" << teacher_changes;
  c.expect(substeps == 3 * 3 + 3 * 5, "unexpected sub-step count " + std::to_string(substeps));
  c.expect(ownership_violations == 0, "ownership violated");
  c.expect(teacher_changes == 0 && hashes(*tr.teacher()) == teacher_start, "teacher changed");
  c.expect(plus, "step-1 domain term not positive");
  c.expect(minus, "step-2 domain term not negative");
}

// Subject-probe accuracy on time-pooled embeddings of the given windows:
// even positions train the probe, odd positions test it.
double subject_probe(model::ModelParams p, const data::WindowedDataset& ds, const std::vector<std::size_t>& idx) {
  std::map<int, int> local;
  for (std::size_t i : idx) local.emplace(ds.subject[i], static_cast<int>(local.size()));
  std::vector<std::size_t> a, b;
  std::vector<int> ya, yb;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    (k % 2 ? b : a).push_back(idx[k]);
    (k % 2 ? yb : ya).push_back(local.at(ds.subject[idx[k]]));
  }
  auto pooled = [&](const std::vector<std::size_t>& rows) {
    const Tensor e = model::embed(p, gather(ds, rows));
    const std::size_t d = e.dim(1), steps = d / 256;
    Tensor out({rows.size(), 256});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t ch = 0; ch < 256; ++ch) {
        double s = 0.0;
        for (std::size_t t = 0; t < steps; ++t) s += e.ptr()[i * d + ch * steps + t];
        out[i * 256 + ch] = s / static_cast<double>(steps);
      }
    return out;
  };
  return probe::probe_accuracy(pooled(a), ya, pooled(b), yb, local.size());
}

void generalization(Check& c) {
  data::SyntheticConfig sc;
  sc.n_subjects = 6;
  sc.n_activities = 3;
  sc.windows_per_subject_per_activity = 10;
  sc.subject_effect = 1.0;
  sc.noise_std = 0.3;
  sc.seed = 11;
  const data::WindowedDataset ds = data::make_synthetic(sc);
  model::ModelConfig arch;
  arch.stem_channels = 8;
  arch.heads = 2;
  training::TrainConfig full;
  full.batch_size = 32;
  full.epochs = full.patience = 30;
  full.lr_extractor = full.lr_classifier = 1e-3;
  full.use_target_unlabeled = true;
  full.seed = 7;
  training::TrainConfig ablation = full;
  ablation.hyper.lambda_mmd = ablation.hyper.lambda_d = ablation.hyper.alpha = 0.0;
  ablation.use_target_unlabeled = false;

  // One fold per held-out subject (first validation variant).
  const auto plan = evaluation::loso_plan(ds);
  double probe_before = 0.0, probe_after = 0.0, f1_full = 0.0, f1_ablation = 0.0;
  std::size_t folds = 0;
  for (std::size_t f = 0; f < plan.size(); f += 2, ++folds) {
    const evaluation::FoldPlan& fp = plan[f];
    const training::TrainResult a = training::train({&ds, fp.train, fp.val, fp.test}, arch, full);
    const training::TrainResult b = training::train({&ds, fp.train, fp.val, {}}, arch, ablation);
    probe_before += subject_probe(a.teacher, ds, fp.train);
    probe_after += subject_probe(a.model, ds, fp.train);
    model::ModelParams ma = a.model, mb = b.model;
    f1_full += training::validation_scores(ma, ds, fp.test, 64).first;
    f1_ablation += training::validation_scores(mb, ds, fp.test, 64).first;
  }
  const double k = static_cast<double>(folds);
  probe_before /= k;
  probe_after /= k;
  f1_full /= k;
  f1_ablation /= k;
  c.info << "folds=" << folds << " probe " << fmt(probe_before) << " -> " << fmt(probe_after) << " held-out macro-F1 full "
         << fmt(f1_full) << " vs ablation " << fmt(f1_ablation);
  c.expect(probe_before - probe_after >= kProbeDrop, "probe drop " + fmt(probe_before - probe_after));
  c.expect(f1_full >= f1_ablation, "full below ablation");
}

void metrics_oracle(Check& c) {
  Rng rng(707);
  std::size_t mismatches = 0, zero_classes = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t classes = 2 + rng.index(6), n = 1 + rng.index(60), used = 1 + rng.index(classes);
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.index(used));
      pred[i] = static_cast<int>(rng.index(classes));
    }
    const evaluation::Metrics m = evaluation::metrics(evaluation::confusion(truth, pred, classes));
    const oracle::Scores o = oracle::scores(truth, pred, classes);
    if (m.accuracy != o.accuracy || m.macro_f1 != o.macro_f1 || m.weighted_f1 != o.weighted_f1 || m.f1 != o.f1)
      ++mismatches;
    for (double f : o.f1) zero_classes += f == 0.0;
  }
  evaluation::ConfusionMatrix cm(2);
  cm.counts = {2, 1, 0, 3};
  const evaluation::Metrics w = evaluation::metrics(cm);
  c.info << "mismatches=" << mismatches << " zero-F1 classes=" << zero_classes << " example acc=" << fmt(w.accuracy)
         << " macro-F1=" << fmt(w.macro_f1);
  c.expect(mismatches == 0, std::to_string(mismatches) + " mismatching matrices");
  c.expect(zero_classes > 0, "no zero-denominator class exercised");
  c.expect(std::abs(w.accuracy - 0.8333) < kWorkedExampleTol, "example accuracy " + fmt(w.accuracy));
  c.expect(std::abs(w.macro_f1 - 0.8286) < kWorkedExampleTol, "example macro-F1 " + fmt(w.macro_f1));
}

void loso_plumbing(Check& c) {
  data::SyntheticConfig sc;
  sc.n_subjects = 10;
  sc.windows_per_subject_per_activity = 2;
  const data::WindowedDataset ds = data::make_synthetic(sc);
  const auto plan = evaluation::loso_plan(ds);
  std::size_t bad = 0;
  std::set<std::string> ids;
  std::set<int> tested;
  for (const auto& f : plan) {
    ids.insert(f.id);
    std::vector<int> seen(ds.size(), 0);
    for (const auto* part : {&f.train, &f.val, &f.test})
      for (std::size_t i : *part) ++seen[i];
    if (std::any_of(seen.begin(), seen.end(), [](int v) { return v != 1; })) ++bad;
    std::set<int> tr, va, te;
    for (std::size_t i : f.train) tr.insert(ds.subject[i]);
    for (std::size_t i : f.val) va.insert(ds.subject[i]);
    for (std::size_t i : f.test) te.insert(ds.subject[i]);
    if (te.size() != 1 || va.size() != 1 || tr.count(*te.begin()) || tr.count(*va.begin()) || va == te) ++bad;
    tested.insert(te.begin(), te.end());
  }
  c.info << "folds=" << plan.size() << " unique ids=" << ids.size() << " bad folds=" << bad;
  c.expect(plan.size() == 20 && ids.size() == 20, "fold count " + std::to_string(plan.size()));
  c.expect(bad == 0, std::to_string(bad) + " folds not disjoint/exhaustive");
  c.expect(tested.size() == 10, "not every subject tested");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism(Check& c) {
  const fs::path root = fs::temp_directory_path() / "tasked_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const nlohmann::json cfg = {
      {"mode", "loso"},
      {"seed", 99},
      {"data", {{"synthetic", {{"n_subjects", 4}, {"n_activities", 3}, {"windows_per_subject_per_activity", 4}}}}},
      {"model", {{"stem_channels", 8}, {"heads", 2}}},
      {"train", {{"batch_size", 16}, {"epochs", 3}, {"patience", 3}}}};
  std::ofstream(root / "config.json") << cfg.dump(2);
  std::vector<std::string> tables;
  for (const char* run : {"a", "b"}) {
    std::ostringstream log;
    const int rc = runner::run({root / "config.json", {}, std::nullopt, root / run}, log);
    c.expect(rc == 0, std::string("run ") + run + " failed: " + log.str());
    const auto results = nlohmann::json::parse(slurp(root / run / "results.json"));
    tables.push_back(results.at("aggregate").dump() + slurp(root / run / "report" / "summary.csv") +
                     slurp(root / run / "report" / "summary.md"));
  }
  c.info << "aggregate table bytes=" << tables[0].size();
  c.expect(tables[0] == tables[1], "aggregate tables differ");
  fs::remove_all(root);
}

}  // namespace

int main() {
  const std::pair<const char*, void (*)(Check&)> criteria[] = {
      {"loss gradient suite", loss_gradients},
      {"MMD oracle suite", mmd_oracle},
      {"architecture shapes and attention rows", shapes},
      {"self-distillation degeneracy", kd_degeneracy},
      {"training protocol: ownership, teacher freeze, domain sign", training_protocol},
      {"subject-probe drop and held-out macro-F1 vs ablation", generalization},
      {"metrics oracle and worked example", metrics_oracle},
      {"LOSO plumbing: 20 disjoint exhaustive folds", loso_plumbing},
      {"determinism of repeated LOSO runs", determinism},
  };
  int failed = 0, index = 0;
  for (const auto& [name, fn] : criteria) {
    ++index;
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = c.failures.empty();
    failed += !ok;
    std::printf("%s %d %s [%.1fs] %s\n", ok ? "PASS" : "FAIL", index, name, secs, c.info.str().c_str());
    for (const auto& f : c.failures) std::printf("     - %s\n", f.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
