#include "tasked/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "tasked/kernels.hpp"

namespace tasked::losses {
namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw Error(std::string(what) + ": expected a matrix, got " + shape_string(t.shape));
}

// Row-wise log-softmax of logits / tau.
Tensor log_softmax_rows(const Tensor& logits, double tau) {
  require_matrix(logits, "log_softmax");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.ptr() + i * c;
    double* o = out.ptr() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, z[j] / tau);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] / tau - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) o[j] = z[j] / tau - lse;
  }
  return out;
}

// Value and coefficient c with d k(a, b) / d a = -c * (a - b).
struct KernelDeriv {
  double value;
  double coeff;
};

KernelDeriv kernel_with_deriv(double sqd, const KernelBank& bank) {
  KernelDeriv kd{0.0, 0.0};
  for (std::size_t u = 0; u < bank.bandwidths.size(); ++u) {
    const double s2 = bank.bandwidths[u] * bank.bandwidths[u];
    const double ku = std::exp(-sqd / (2.0 * s2));
    kd.value += bank.weights[u] * ku;
    kd.coeff += bank.weights[u] * ku / s2;
  }
  return kd;
}

double kernel_from_sqdist(double sqd, const KernelBank& bank) {
  double k = 0.0;
  for (std::size_t u = 0; u < bank.bandwidths.size(); ++u)
    k += bank.weights[u] * std::exp(-sqd / (2.0 * bank.bandwidths[u] * bank.bandwidths[u]));
  return k;
}

// Accumulates coef * k(a_i, b_j) over all pairs and, if grads are given, the
// gradient of that sum w.r.t. the rows of a and b.
double kernel_block(const Tensor& a, const Tensor& b, double coef, const KernelBank& bank, Tensor* ga, Tensor* gb) {
  const std::size_t na = a.dim(0), nb = b.dim(0), d = a.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    const double* ai = a.ptr() + i * d;
    for (std::size_t j = 0; j < nb; ++j) {
      const double* bj = b.ptr() + j * d;
      const double sqd = kernels::sqdist(ai, bj, d);
      if (!ga && !gb) {
        total += kernel_from_sqdist(sqd, bank);
        continue;
      }
      const KernelDeriv kd = kernel_with_deriv(sqd, bank);
      total += kd.value;
      const double f = -coef * kd.coeff;
      if (f == 0.0) continue;
      if (ga) {
        double* g = ga->ptr() + i * d;
        kernels::axpy(f, ai, g, d);
        kernels::axpy(-f, bj, g, d);
      }
      if (gb) {
        double* g = gb->ptr() + j * d;
        kernels::axpy(f, bj, g, d);
        kernels::axpy(-f, ai, g, d);
      }
    }
  }
  return coef * total;
}

}  // namespace

void KernelBank::validate() const {
  if (bandwidths.empty() || bandwidths.size() != weights.size()) throw Error("kernel bank: bandwidths/weights size");
  double s = 0.0;
  for (std::size_t u = 0; u < weights.size(); ++u) {
    if (!(bandwidths[u] > 0.0)) throw Error("kernel bank: bandwidth must be positive");
    if (weights[u] < 0.0) throw Error("kernel bank: negative weight");
    s += weights[u];
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error("kernel bank: weights must sum to 1");
}

void LossHyper::validate() const {
  if (lambda_cls < 0 || lambda_mmd < 0 || lambda_d < 0) throw Error("loss.lambda_*: must be non-negative");
  if (alpha < 0 || alpha > 1) throw Error("loss.alpha: must lie in [0, 1]");
  if (!(tau > 0)) throw Error("loss.tau: must be positive");
  if (!(dice_eps > 0)) throw Error("loss.dice_eps: must be positive");
}

Tensor softened_probs(const Tensor& logits, double tau) {
  if (!(tau > 0)) throw Error("softened_probs: tau must be positive");
  Tensor p = log_softmax_rows(logits, tau);
  for (double& v : p.data) v = std::exp(v);
  return p;
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor y({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw Error("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    y[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return y;
}

namespace {
void check_one_hot(const Tensor& logits, const Tensor& y) {
  require_matrix(logits, "activity_loss");
  if (!logits.same_shape(y))
    throw Error("activity_loss: logits " + shape_string(logits.shape) + " vs targets " + shape_string(y.shape));
  const std::size_t n = y.dim(0), c = y.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = y[i * c + j];
      if (v != 0.0 && v != 1.0) throw Error("activity_loss: targets are not one-hot");
      s += v;
    }
    if (s != 1.0) throw Error("activity_loss: targets are not one-hot");
  }
}
}  // namespace

double dice_term(const Tensor& logits, const Tensor& y, double eps) {
  const Tensor p = softened_probs(logits, 1.0);
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    inter += p[i] * y[i];
    total += p[i] + y[i];
  }
  return 1.0 - (2.0 * inter + eps) / (total + eps);
}

ValueGrad activity_loss(const Tensor& logits, const Tensor& y, const ClassWeights& weights, double eps) {
  check_one_hot(logits, y);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (weights.w.size() != c)
    throw Error("activity_loss: " + std::to_string(weights.w.size()) + " class weights for " + std::to_string(c) +
                " classes");
  const Tensor logp = log_softmax_rows(logits, 1.0);
  Tensor p(logp.shape);
  for (std::size_t i = 0; i < p.numel(); ++i) p[i] = std::exp(logp[i]);

  const double inv_n = 1.0 / static_cast<double>(n);
  double ce = 0.0, inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      ce -= weights.w[j] * y[k] * logp[k];
      inter += p[k] * y[k];
      total += p[k] + y[k];
    }
  ce *= inv_n;
  const double denom = total + eps;
  const double dice = 1.0 - (2.0 * inter + eps) / denom;

  ValueGrad out{0.5 * ce + 0.5 * dice, Tensor(logits.shape)};
  std::vector<double> dp(c);
  for (std::size_t i = 0; i < n; ++i) {
    double row_w = 0.0;
    for (std::size_t j = 0; j < c; ++j) row_w += weights.w[j] * y[i * c + j];
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      dp[j] = -(2.0 * y[k] * denom - (2.0 * inter + eps)) / (denom * denom);
      dot += dp[j] * p[k];
    }
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      const double g_ce = inv_n * (row_w * p[k] - weights.w[j] * y[k]);
      const double g_dice = p[k] * (dp[j] - dot);
      out.grad[k] = 0.5 * g_ce + 0.5 * g_dice;
    }
  }
  return out;
}

ValueGrad kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double tau) {
  require_matrix(student_logits, "kd_loss");
  if (!student_logits.same_shape(teacher_logits)) throw Error("kd_loss: student/teacher shape mismatch");
  const std::size_t n = student_logits.dim(0), c = student_logits.dim(1);
  const Tensor logp = log_softmax_rows(student_logits, tau);
  const Tensor logq = log_softmax_rows(teacher_logits, tau);
  ValueGrad out{0.0, Tensor(student_logits.shape)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      const double q = std::exp(logq[k]);
      if (q > 0.0) out.value += q * (logq[k] - logp[k]);
      out.grad[k] = inv_n / tau * (std::exp(logp[k]) - q);
    }
  out.value *= inv_n;
  return out;
}

ValueGrad classification_loss(const Tensor& logits, const Tensor& y, const Tensor& teacher_logits,
                              const ClassWeights& weights, const LossHyper& hyper) {
  ValueGrad act = activity_loss(logits, y, weights, hyper.dice_eps);
  ValueGrad kd = kd_loss(logits, teacher_logits, hyper.tau);
  ValueGrad out{(1.0 - hyper.alpha) * act.value + hyper.alpha * kd.value, Tensor(logits.shape)};
  for (std::size_t i = 0; i < out.grad.numel(); ++i)
    out.grad[i] = (1.0 - hyper.alpha) * act.grad[i] + hyper.alpha * kd.grad[i];
  return out;
}

ValueGrad domain_loss(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "domain_loss");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw Error("domain_loss: label count does not match batch");
  const Tensor logp = log_softmax_rows(logits, 1.0);
  ValueGrad out{0.0, Tensor(logits.shape)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int s = labels[i];
    if (s < 0 || static_cast<std::size_t>(s) >= c)
      throw Error("domain_loss: subject label " + std::to_string(s) + " outside [0, " + std::to_string(c) + ")");
    out.value -= logp[i * c + static_cast<std::size_t>(s)];
    for (std::size_t j = 0; j < c; ++j)
      out.grad[i * c + j] = inv_n * (std::exp(logp[i * c + j]) - (static_cast<std::size_t>(s) == j ? 1.0 : 0.0));
  }
  out.value *= inv_n;
  return out;
}

double kernel_eval(std::span<const double> a, std::span<const double> b, const KernelBank& bank) {
  if (a.size() != b.size()) throw Error("kernel_eval: vectors differ in length");
  return kernel_from_sqdist(kernels::sqdist(a.data(), b.data(), a.size()), bank);
}

KernelBank median_kernel_bank(const Tensor& features, std::span<const double> factors) {
  static constexpr double kDefault[] = {0.25, 0.5, 1.0, 2.0, 4.0};
  if (factors.empty()) factors = kDefault;
  require_matrix(features, "median_kernel_bank");
  const std::size_t n = features.dim(0), d = features.dim(1);
  std::vector<double> dists;
  dists.reserve(n * (n - (n > 0)) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dists.push_back(std::sqrt(kernels::sqdist(features.ptr() + i * d, features.ptr() + j * d, d)));
  double median = 0.0;
  if (!dists.empty()) {
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    median = *mid;
  }
  if (!(median > 1e-12) || !std::isfinite(median)) median = 1.0;
  KernelBank bank;
  for (double f : factors) {
    bank.bandwidths.push_back(f * median);
    bank.weights.push_back(1.0 / static_cast<double>(factors.size()));
  }
  return bank;
}

double mmd2(const Tensor& source, const Tensor& target, const KernelBank& bank) {
  require_matrix(source, "mmd2");
  require_matrix(target, "mmd2");
  if (source.dim(0) == 0 || target.dim(0) == 0) throw Error("mmd2: empty sample set");
  if (source.dim(1) != target.dim(1)) throw Error("mmd2: feature dimensions differ");
  const double m = static_cast<double>(source.dim(0));
  const double n = static_cast<double>(target.dim(0));
  return kernel_block(source, source, 1.0 / (m * m), bank, nullptr, nullptr) +
         kernel_block(target, target, 1.0 / (n * n), bank, nullptr, nullptr) -
         kernel_block(source, target, 2.0 / (m * n), bank, nullptr, nullptr);
}

MmdResult mmd2_with_grad(const Tensor& source, const Tensor& target, const KernelBank& bank) {
  mmd2(source, target, bank);  // shape validation
  const double m = static_cast<double>(source.dim(0));
  const double n = static_cast<double>(target.dim(0));
  MmdResult r{0.0, Tensor(source.shape), Tensor(target.shape)};
  // Passing the same gradient buffer for both operands covers both argument slots.
  r.value += kernel_block(source, source, 1.0 / (m * m), bank, &r.grad_source, &r.grad_source);
  r.value += kernel_block(target, target, 1.0 / (n * n), bank, &r.grad_target, &r.grad_target);
  r.value += kernel_block(source, target, -2.0 / (m * n), bank, &r.grad_source, &r.grad_target);
  return r;
}

ValueGrad mmd_regularizer(const Tensor& features, std::span<const int> groups, const KernelBank& bank,
                          std::vector<std::string>* warnings) {
  require_matrix(features, "mmd_regularizer");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (groups.size() != n) throw Error("mmd_regularizer: group labels do not match rows");
  bank.validate();
  std::map<int, std::size_t> counts;
  for (int g : groups) ++counts[g];
  ValueGrad out{0.0, Tensor(features.shape)};
  const std::size_t k = counts.size();
  if (k < 2) {
    if (warnings) warnings->push_back("mmd_regularizer: fewer than two subject groups in batch, term set to 0");
    return out;
  }
  const double kk = static_cast<double>(k);
  // L = sum_pq C_pq k(x_p, x_q), C_pq = 2/K^2 * (K [g_p == g_q] - 1) / (n_gp n_gq).
  for (std::size_t p = 0; p < n; ++p) {
    const double* xp = features.ptr() + p * d;
    const double np = static_cast<double>(counts[groups[p]]);
    for (std::size_t q = p; q < n; ++q) {
      const double* xq = features.ptr() + q * d;
      const double nq = static_cast<double>(counts[groups[q]]);
      const double c = 2.0 / (kk * kk) * ((groups[p] == groups[q] ? kk : 0.0) - 1.0) / (np * nq);
      if (p == q) {
        out.value += c;  // k(x, x) = 1
        continue;
      }
      const KernelDeriv kd = kernel_with_deriv(kernels::sqdist(xp, xq, d), bank);
      out.value += 2.0 * c * kd.value;
      const double f = -2.0 * c * kd.coeff;
      double* gp = out.grad.ptr() + p * d;
      double* gq = out.grad.ptr() + q * d;
      kernels::axpy(f, xp, gp, d);
      kernels::axpy(-f, xq, gp, d);
      kernels::axpy(f, xq, gq, d);
      kernels::axpy(-f, xp, gq, d);
    }
  }
  return out;
}

Objectives objective(const ComponentLosses& parts, const LossHyper& hyper) {
  return Objectives{hyper.lambda_cls * parts.cls + hyper.lambda_mmd * parts.mmd - hyper.lambda_d * parts.domain,
                    parts.cls, parts.domain};
}

// ---------------------------------------------------------------------------

namespace op {
namespace {
ag::Var wrap(ag::Tape& t, ag::Var input, ValueGrad vg) {
  return t.record(Tensor({1}, vg.value), {input}, [input, g = std::move(vg.grad)](ag::Tape& tp, const Tensor& up) {
    if (Tensor* gi = tp.grad_slot(input)) kernels::axpy(up[0], g.ptr(), gi->ptr(), g.numel());
  });
}
}  // namespace

ag::Var activity_loss(ag::Tape& t, ag::Var logits, const Tensor& y, const ClassWeights& w, double eps) {
  return wrap(t, logits, losses::activity_loss(t.value(logits), y, w, eps));
}

ag::Var kd_loss(ag::Tape& t, ag::Var logits, const Tensor& teacher_logits, double tau) {
  return wrap(t, logits, losses::kd_loss(t.value(logits), teacher_logits, tau));
}

ag::Var domain_loss(ag::Tape& t, ag::Var logits, std::span<const int> labels) {
  return wrap(t, logits, losses::domain_loss(t.value(logits), labels));
}

ag::Var mmd_regularizer(ag::Tape& t, ag::Var features, std::span<const int> groups, const KernelBank& bank,
                        std::vector<std::string>* warnings) {
  return wrap(t, features, losses::mmd_regularizer(t.value(features), groups, bank, warnings));
}
}  // namespace op

}  // namespace tasked::losses
