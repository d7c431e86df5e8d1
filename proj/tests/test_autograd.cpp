#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "tasked/autograd.hpp"

using namespace tasked;
using testutil::contract;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {
constexpr double kTol = 1e-6;
constexpr double kFloor = 1e-3;  // entries with tiny gradients are judged on absolute error
}

TEST_CASE("elementwise ops") {
  Rng rng(1);
  const Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {3, 4}), w = random_tensor(rng, {3, 4});
  const Tensor c = random_tensor(rng, {3, 4});
  CHECK(gradcheck({a, b}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
          return contract(t, ag::add(t, ag::scale(t, v[0], -1.7), ag::relu(t, v[1])), w);
        }, 1e-5, kFloor) < kTol);
  CHECK(gradcheck({a}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
          return contract(t, ag::add_constant(t, ag::leaky_relu(t, v[0], 0.2), c), w);
        }, 1e-5, kFloor) < kTol);
  CHECK(gradcheck({a}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
          Rng r(9);
          return contract(t, ag::dropout(t, v[0], 0.3, ag::Mode::train, r), w);
        }, 1e-5, kFloor) < kTol);
  CHECK(gradcheck({a, b}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
          const ag::Var x = contract(t, v[0], w), y = contract(t, v[1], c);
          return ag::weighted_sum(t, {{x, 0.3}, {y, -2.0}});
        }, 1e-5, kFloor) < kTol);
}

TEST_CASE("dropout is the identity in eval mode and scales survivors in train mode") {
  Rng rng(2);
  const Tensor a = random_tensor(rng, {200});
  ag::Tape t;
  const ag::Var x = t.constant(a);
  CHECK(t.value(ag::dropout(t, x, 0.5, ag::Mode::eval, rng)).data == a.data);
  const Tensor& d = t.value(ag::dropout(t, x, 0.5, ag::Mode::train, rng));
  std::size_t kept = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (d[i] != 0.0) {
      ++kept;
      CHECK(d[i] == doctest::Approx(2.0 * a[i]));
    }
  }
  CHECK(kept > 60);
  CHECK(kept < 140);
}

TEST_CASE("conv1d matches a direct loop and differentiates") {
  Rng rng(3);
  const std::size_t cin = 3, cout = 4, b = 2, len = 9, k = 5;
  const Tensor x = random_tensor(rng, {cin, b, len}), w = random_tensor(rng, {cout, cin, k}),
               bias = random_tensor(rng, {cout});
  for (std::size_t stride : {1u, 2u}) {
    const std::size_t pad = 2, out_len = (len + 2 * pad - k) / stride + 1;
    ag::Tape t;
    const Tensor& y = t.value(ag::conv1d(t, t.constant(x), t.constant(w), t.constant(bias), stride, pad));
    REQUIRE(y.shape == Shape{cout, b, out_len});
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t p = 0; p < out_len; ++p) {
          double s = bias[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t j = 0; j < k; ++j) {
              const long pos = static_cast<long>(p * stride + j) - static_cast<long>(pad);
              if (pos >= 0 && pos < static_cast<long>(len)) s += w[(o * cin + c) * k + j] * x[(c * b + n) * len + pos];
            }
          CHECK(y[(o * b + n) * out_len + p] == doctest::Approx(s).epsilon(1e-12));
        }
    const Tensor r = random_tensor(rng, {cout, b, out_len});
    CHECK(gradcheck({x, w, bias}, [&](ag::Tape& tp, const std::vector<ag::Var>& v) {
            return contract(tp, ag::conv1d(tp, v[0], v[1], v[2], stride, pad), r);
          }, 1e-5, kFloor) < kTol);
    CHECK(gradcheck({x, w}, [&](ag::Tape& tp, const std::vector<ag::Var>& v) {
            return contract(tp, ag::conv1d(tp, v[0], v[1], ag::Var{}, stride, pad), r);
          }, 1e-5, kFloor) < kTol);
  }
}

TEST_CASE("linear and reductions") {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {5, 6}), w = random_tensor(rng, {3, 6}), b = random_tensor(rng, {3});
  const Tensor r = random_tensor(rng, {5, 3});
  CHECK(gradcheck({x, w, b}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
          return contract(t, ag::linear(t, v[0], v[1], v[2]), r);
        }, 1e-5, kFloor) < kTol);

  const Tensor e = random_tensor(rng, {4, 3, 2, 5});  // (C, n, S, T)
  const Tensor r1 = random_tensor(rng, {4, 3, 5}), r2 = random_tensor(rng, {3, 4}), r3 = random_tensor(rng, {3, 20});
  CHECK(gradcheck({e}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
          return contract(t, ag::mean_sensors(t, v[0]), r1);
        }, 1e-5, kFloor) < kTol);
  const Tensor c = random_tensor(rng, {4, 3, 5});
  CHECK(gradcheck({c}, [&](ag::Tape& t, const std::vector<ag::Var>& v) { return contract(t, ag::mean_time(t, v[0]), r2); },
                  1e-5, kFloor) < kTol);
  CHECK(gradcheck({c}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
          return contract(t, ag::flatten_rows(t, v[0]), r3);
        }, 1e-5, kFloor) < kTol);

  ag::Tape t;
  const Tensor& f = t.value(ag::flatten_rows(t, t.constant(c)));
  // row n, column ch*T + k
  CHECK(f[1 * 20 + 2 * 5 + 3] == c[(2 * 3 + 1) * 5 + 3]);
}

TEST_CASE("stack_sensors layout and gradient") {
  Rng rng(5);
  const Tensor a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 3, 4});
  ag::Tape t;
  const Tensor& s = t.value(ag::stack_sensors(t, {t.constant(a), t.constant(b)}));
  REQUIRE(s.shape == Shape{2, 3, 2, 4});
  CHECK(s[((1 * 3 + 2) * 2 + 1) * 4 + 3] == b[(1 * 3 + 2) * 4 + 3]);
  CHECK(s[((1 * 3 + 2) * 2 + 0) * 4 + 3] == a[(1 * 3 + 2) * 4 + 3]);
  const Tensor r = random_tensor(rng, {2, 3, 2, 4});
  CHECK(gradcheck({a, b}, [&](ag::Tape& tp, const std::vector<ag::Var>& v) {
          return contract(tp, ag::stack_sensors(tp, {v[0], v[1]}), r);
        }, 1e-5, kFloor) < kTol);
}

TEST_CASE("batch_norm in train and eval mode") {
  Rng rng(6);
  const Tensor x = random_tensor(rng, {3, 4, 5}, 2.0), g = random_tensor(rng, {3}), b = random_tensor(rng, {3});
  const Tensor r = random_tensor(rng, {3, 4, 5});
  for (ag::Mode mode : {ag::Mode::train, ag::Mode::eval}) {
    CHECK(gradcheck({x, g, b}, [&](ag::Tape& t, const std::vector<ag::Var>& v) {
            Tensor rm({3}, 0.3), rv({3}, 1.7);
            ag::BatchNormState st{&rm, &rv, 0.1, 1e-5, false};
            return contract(t, ag::batch_norm(t, v[0], v[1], v[2], st, mode), r);
          }, 1e-5, kFloor) < kTol);
  }
  // train mode normalises each channel to zero mean and unit variance
  Tensor rm({3}, 0.0), rv({3}, 1.0);
  ag::Tape t;
  const Tensor& y = t.value(ag::batch_norm(t, t.constant(x), t.constant(Tensor({3}, 1.0)), t.constant(Tensor({3}, 0.0)),
                                           {&rm, &rv, 0.1, 0.0, true}, ag::Mode::train));
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0, xm = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      m += y[c * 20 + i];
      xm += x[c * 20 + i];
    }
    m /= 20;
    xm /= 20;
    for (std::size_t i = 0; i < 20; ++i) v += (y[c * 20 + i] - m) * (y[c * 20 + i] - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 20 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rm[c] == doctest::Approx(0.1 * xm));
  }
}

TEST_CASE("spatial attention rows and gradients") {
  Rng rng(7);
  const std::size_t C = 8, n = 2, S = 5, T = 3, heads = 2;
  const Tensor q = random_tensor(rng, {C, n, S, T}), k = random_tensor(rng, {C, n, S, T}),
               v = random_tensor(rng, {C, n, S, T}), r = random_tensor(rng, {C, n, S, T});
  for (ag::Mode mode : {ag::Mode::eval, ag::Mode::train}) {
    CHECK(gradcheck({q, k, v}, [&](ag::Tape& t, const std::vector<ag::Var>& vs) {
            Rng dr(21);
            return contract(t, ag::spatial_attention(t, vs[0], vs[1], vs[2], heads, 0.3, mode, dr), r);
          }, 1e-5, kFloor) < kTol);
  }
  ag::Tape t;
  ag::AttentionTrace trace;
  Rng dr(4);
  ag::spatial_attention(t, t.constant(q), t.constant(k), t.constant(v), heads, 0.5, ag::Mode::train, dr, &trace);
  REQUIRE(trace.sensors == S);
  REQUIRE(trace.softmax_rows.size() == n * T * heads * S * S);
  bool some_dropped = false;
  for (const auto* rows : {&trace.softmax_rows, &trace.final_rows})
    for (std::size_t row = 0; row < rows->size() / S; ++row) {
      double s = 0;
      for (std::size_t j = 0; j < S; ++j) {
        CHECK((*rows)[row * S + j] >= 0.0);
        s += (*rows)[row * S + j];
        some_dropped |= (rows == &trace.final_rows && (*rows)[row * S + j] == 0.0);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  CHECK(some_dropped);
}

TEST_CASE("gradients accumulate across reuse and constants receive none") {
  ag::Tape t;
  const ag::Var x = t.variable(Tensor({2}, {1.0, 2.0}));
  const ag::Var c = t.constant(Tensor({2}, {3.0, 4.0}));
  const ag::Var y = ag::add(t, ag::add(t, x, x), c);
  CHECK_FALSE(t.requires_grad(c));
  t.backward(contract(t, y, Tensor({2}, {1.0, -1.0})));
  CHECK(t.grad(x).data == std::vector<double>{2.0, -2.0});
  CHECK(t.grad(c).data == std::vector<double>{0.0, 0.0});
}
