#include "tasked/probe.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "tasked/kernels.hpp"

namespace tasked::probe {

double probe_accuracy(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                      std::span<const int> test_y, std::size_t classes, const ProbeConfig& cfg) {
  if (train_x.rank() != 2 || test_x.rank() != 2 || train_x.dim(1) != test_x.dim(1))
    throw Error("probe: feature matrices must share a column count");
  if (train_x.dim(0) != train_y.size() || test_x.dim(0) != test_y.size() || train_y.empty() || test_y.empty())
    throw Error("probe: label counts do not match rows");
  const std::size_t n = train_x.dim(0), d = train_x.dim(1), m = test_x.dim(0);

  std::vector<double> mean(d, 0.0), scale(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += train_x[i * d + j];
  for (double& v : mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) scale[j] += std::pow(train_x[i * d + j] - mean[j], 2);
  for (double& v : scale) v = std::sqrt(v / static_cast<double>(n)) > 1e-12 ? 1.0 / std::sqrt(v / static_cast<double>(n)) : 0.0;
  auto standardise = [&](const Tensor& x) {
    Tensor z(x.shape);
    for (std::size_t i = 0; i < x.dim(0); ++i)
      for (std::size_t j = 0; j < d; ++j) z[i * d + j] = (x[i * d + j] - mean[j]) * scale[j];
    return z;
  };
  const Tensor a = standardise(train_x), b = standardise(test_x);

  // Full-batch gradient descent with Adam moments; weights (classes, d + 1).
  const std::size_t w_cols = d + 1;
  std::vector<double> w(classes * w_cols, 0.0), mom(w.size(), 0.0), var(w.size(), 0.0), grad(w.size());
  std::vector<double> logits(classes);
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = a.ptr() + i * d;
      for (std::size_t c = 0; c < classes; ++c) logits[c] = kernels::dot(w.data() + c * w_cols, xi, d) + w[c * w_cols + d];
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0;
      for (double& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t c = 0; c < classes; ++c) {
        const double g = (logits[c] / z - (train_y[i] == static_cast<int>(c) ? 1.0 : 0.0)) / static_cast<double>(n);
        kernels::axpy(g, xi, grad.data() + c * w_cols, d);
        grad[c * w_cols + d] += g;
      }
    }
    const double c1 = 1.0 - std::pow(0.9, static_cast<double>(it)), c2 = 1.0 - std::pow(0.999, static_cast<double>(it));
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = grad[k] + cfg.l2 * w[k];
      mom[k] = 0.9 * mom[k] + 0.1 * g;
      var[k] = 0.999 * var[k] + 0.001 * g * g;
      w[k] -= cfg.learning_rate * (mom[k] / c1) / (std::sqrt(var[k] / c2) + 1e-8);
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = b.ptr() + i * d;
    for (std::size_t c = 0; c < classes; ++c) logits[c] = kernels::dot(w.data() + c * w_cols, xi, d) + w[c * w_cols + d];
    if (static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin()) == test_y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(m);
}

}  // namespace tasked::probe
