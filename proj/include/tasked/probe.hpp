#pragma once

// Linear softmax probe used to measure how much subject identity remains
// linearly decodable from embeddings.

#include <cstdint>
#include <span>

#include "tasked/tensor.hpp"

namespace tasked::probe {

struct ProbeConfig {
  std::size_t iterations = 300;
  double learning_rate = 0.05;
  double l2 = 1e-3;
};

// Fits multinomial logistic regression on standardised train features and
// returns accuracy on the test rows.
double probe_accuracy(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                      std::span<const int> test_y, std::size_t classes, const ProbeConfig& cfg = {});

}  // namespace tasked::probe
