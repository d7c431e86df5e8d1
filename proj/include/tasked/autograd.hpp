#pragma once

// Reverse-mode differentiation over coarse tensor operations. A Tape lives for
// one forward/backward pass; every op records its value and a closure that
// pushes the output gradient to its inputs.

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "tasked/rng.hpp"
#include "tasked/tensor.hpp"

namespace tasked::ag {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // requires_grad is inherited from the inputs; bw is dropped when none need it.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward bw);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward bw);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient accumulated for v by the last backward(); zero-shaped like value if unreached.
  Tensor grad(Var v) const;
  // Accumulation slot used by backward closures; nullptr when v needs no gradient.
  Tensor* grad_slot(Var v);

  void backward(Var scalar_root);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

enum class Mode { train, eval };

// Elementwise / structural ops.
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
// sum_i w_i * x_i over scalars
Var weighted_sum(Tape& t, std::initializer_list<std::pair<Var, double>> terms);
Var relu(Tape& t, Var x);
Var leaky_relu(Tape& t, Var x, double slope);
Var dropout(Tape& t, Var x, double rate, Mode mode, Rng& rng);
Var add_constant(Tape& t, Var x, const Tensor& c);

// x: (Cin, B, T), w: (Cout, Cin, K), bias: (Cout) or invalid Var -> (Cout, B, Tout)
Var conv1d(Tape& t, Var x, Var w, Var bias, std::size_t stride, std::size_t pad);
// x: (n, in), w: (out, in), bias: (out) -> (n, out)
Var linear(Tape& t, Var x, Var w, Var bias);

struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
  bool update_running = true;
};
// Normalises over every axis except the first (channels).
Var batch_norm(Tape& t, Var x, Var gamma, Var beta, BatchNormState state, Mode mode);

// parts[s]: (C, n, T) -> (C, n, S, T)
Var stack_sensors(Tape& t, const std::vector<Var>& parts);
// (C, n, S, T) -> (C, n, T)
Var mean_sensors(Tape& t, Var x);
// (C, B, T) -> (B, C)
Var mean_time(Tape& t, Var x);
// (C, B, T) -> (B, C*T), row layout c*T + t
Var flatten_rows(Tape& t, Var x);

// Attention matrices observed during one forward pass, row-major S x S blocks.
struct AttentionTrace {
  std::size_t sensors = 0;
  std::vector<double> softmax_rows;
  std::vector<double> final_rows;
};

// q, k, v: (C, n, S, T). Attention is across the sensor axis independently for
// every (sample, time step, head). In train mode entries of each attention
// matrix are dropped with probability drop_connect and rows renormalised.
Var spatial_attention(Tape& t, Var q, Var k, Var v, std::size_t heads, double drop_connect, Mode mode, Rng& rng,
                      AttentionTrace* trace = nullptr);

}  // namespace tasked::ag
