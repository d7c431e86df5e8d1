#pragma once

// Objective components for the three networks. Each loss is a pure function
// returning its value and the gradient with respect to its differentiable
// input; the tape wrappers at the bottom reuse those gradients.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tasked/autograd.hpp"
#include "tasked/tensor.hpp"

namespace tasked::losses {

struct ClassWeights {
  std::vector<double> w;
};

struct KernelBank {
  std::vector<double> bandwidths;  // sigma_u
  std::vector<double> weights;     // beta_u, on the simplex

  void validate() const;
};

struct LossHyper {
  double lambda_cls = 10.0;
  double lambda_mmd = 5.0;
  double lambda_d = 1.0;
  double alpha = 0.6;
  double tau = 20.0;
  double dice_eps = 1e-6;

  void validate() const;
};

struct ValueGrad {
  double value = 0.0;
  Tensor grad;
};

// Row-wise softmax of logits / tau.
Tensor softened_probs(const Tensor& logits, double tau = 1.0);

Tensor one_hot(std::span<const int> labels, std::size_t classes);

// 1/2 weighted cross-entropy (batch mean) + 1/2 global dice loss on softmax
// probabilities. y must be one-hot with the same shape as logits.
ValueGrad activity_loss(const Tensor& logits, const Tensor& y, const ClassWeights& weights, double eps);
// The dice half alone, for range checks.
double dice_term(const Tensor& logits, const Tensor& y, double eps);

// Batch-mean KL(p_teacher || p_student) at temperature tau; gradient w.r.t. the
// student logits only.
ValueGrad kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double tau);

// (1 - alpha) * activity + alpha * kd.
ValueGrad classification_loss(const Tensor& logits, const Tensor& y, const Tensor& teacher_logits,
                              const ClassWeights& weights, const LossHyper& hyper);

// Mean multi-class cross-entropy over subject labels.
ValueGrad domain_loss(const Tensor& logits, std::span<const int> labels);

double kernel_eval(std::span<const double> a, std::span<const double> b, const KernelBank& bank);

// Five Gaussian bandwidths at factors 1/4 .. 4 of the median pairwise distance
// between rows of features, uniform weights.
KernelBank median_kernel_bank(const Tensor& features, std::span<const double> factors = {});

struct MmdResult {
  double value = 0.0;
  Tensor grad_source;
  Tensor grad_target;
};
// Biased MMD^2 between the rows of source (M x d) and target (N x d).
double mmd2(const Tensor& source, const Tensor& target, const KernelBank& bank);
MmdResult mmd2_with_grad(const Tensor& source, const Tensor& target, const KernelBank& bank);

// (1/K^2) * sum over ordered group pairs of mmd2, K = number of distinct groups
// present. Returns 0 and appends a warning when fewer than two groups exist.
ValueGrad mmd_regularizer(const Tensor& features, std::span<const int> groups, const KernelBank& bank,
                          std::vector<std::string>* warnings = nullptr);

struct ComponentLosses {
  double cls = 0.0;
  double mmd = 0.0;
  double domain = 0.0;
};

struct Objectives {
  double extractor = 0.0;
  double classifier = 0.0;
  double discriminator = 0.0;
};

// Extractor minimises lambda_cls*L_cls + lambda_mmd*L_mmd - lambda_d*L_D,
// classifier minimises L_cls and discriminator minimises L_D.
Objectives objective(const ComponentLosses& parts, const LossHyper& hyper);

// Tape wrappers.
namespace op {
ag::Var activity_loss(ag::Tape& t, ag::Var logits, const Tensor& y, const ClassWeights& w, double eps);
ag::Var kd_loss(ag::Tape& t, ag::Var logits, const Tensor& teacher_logits, double tau);
ag::Var domain_loss(ag::Tape& t, ag::Var logits, std::span<const int> labels);
ag::Var mmd_regularizer(ag::Tape& t, ag::Var features, std::span<const int> groups, const KernelBank& bank,
                        std::vector<std::string>* warnings = nullptr);
}  // namespace op

}  // namespace tasked::losses
