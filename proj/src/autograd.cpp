#include "tasked/autograd.hpp"

#include <cmath>
#include <utility>

#include "tasked/kernels.hpp"

namespace tasked::ag {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward bw) {
  bool rg = false;
  for (Var v : inputs)
    if (v.valid() && nodes_.at(v.id).requires_grad) rg = true;
  nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(bw) : Backward{}});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward bw) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(bw));
}

double Tape::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.numel() != 1) throw Error("scalar() on tensor of shape " + shape_string(t.shape));
  return t[0];
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.numel() == n.value.numel()) return n.grad;
  return Tensor(n.value.shape);
}

Tensor* Tape::grad_slot(Var v) {
  if (!v.valid()) return nullptr;
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.numel() != n.value.numel()) n.grad = Tensor(n.value.shape);
  return &n.grad;
}

void Tape::backward(Var root) {
  if (value(root).numel() != 1) throw Error("backward() needs a scalar root");
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = Tensor(nodes_[root.id].value.shape, 1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.numel() == 0) continue;
    // Closures only touch strictly earlier nodes, so this reference stays valid.
    n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (!va.same_shape(vb)) throw Error("add: shape mismatch " + shape_string(va.shape) + " vs " + shape_string(vb.shape));
  Tensor out = va;
  kernels::axpy(1.0, vb.ptr(), out.ptr(), out.numel());
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) kernels::axpy(1.0, g.ptr(), ga->ptr(), g.numel());
    if (Tensor* gb = tp.grad_slot(b)) kernels::axpy(1.0, g.ptr(), gb->ptr(), g.numel());
  });
}

Var scale(Tape& t, Var a, double s) {
  Tensor out = t.value(a);
  for (double& x : out.data) x *= s;
  return t.record(std::move(out), {a}, [a, s](Tape& tp, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) kernels::axpy(s, g.ptr(), ga->ptr(), g.numel());
  });
}

Var weighted_sum(Tape& t, std::initializer_list<std::pair<Var, double>> terms) {
  std::vector<std::pair<Var, double>> items(terms);
  std::vector<Var> inputs;
  double total = 0.0;
  for (auto& [v, w] : items) {
    total += w * t.scalar(v);
    inputs.push_back(v);
  }
  return t.record(Tensor({1}, total), inputs, [items](Tape& tp, const Tensor& g) {
    for (auto& [v, w] : items)
      if (Tensor* gv = tp.grad_slot(v)) (*gv)[0] += w * g[0];
  });
}

Var relu(Tape& t, Var x) { return leaky_relu(t, x, 0.0); }

Var leaky_relu(Tape& t, Var x, double slope) {
  Tensor out = t.value(x);
  for (double& v : out.data)
    if (v < 0.0) v *= slope;
  return t.record(std::move(out), {x}, [x, slope](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad_slot(x);
    if (!gx) return;
    const Tensor& in = tp.value(x);
    for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += in[i] < 0.0 ? slope * g[i] : g[i];
  });
}

Var dropout(Tape& t, Var x, double rate, Mode mode, Rng& rng) {
  if (mode == Mode::eval || rate <= 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(t.value(x).shape);
  for (double& m : mask.data) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  Tensor out = t.value(x);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return t.record(std::move(out), {x}, [x, mask = std::move(mask)](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad_slot(x);
    if (!gx) return;
    for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * mask[i];
  });
}

Var add_constant(Tape& t, Var x, const Tensor& c) {
  const Tensor& in = t.value(x);
  if (in.numel() % c.numel() != 0) throw Error("add_constant: incompatible sizes");
  Tensor out = in;
  // c broadcasts over leading axes; it is tiled over the trailing block.
  const std::size_t block = c.numel();
  for (std::size_t off = 0; off < out.numel(); off += block) kernels::axpy(1.0, c.ptr(), out.ptr() + off, block);
  return t.record(std::move(out), {x}, [x](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_slot(x)) kernels::axpy(1.0, g.ptr(), gx->ptr(), g.numel());
  });
}

// ---------------------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t cin, batch, len, cout, kernel, stride, pad, out_len;
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t ncols = g.batch * g.out_len;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t kk = 0; kk < g.kernel; ++kk) {
      double* row = cols + (ci * g.kernel + kk) * ncols;
      for (std::size_t b = 0; b < g.batch; ++b) {
        const double* xin = x + (ci * g.batch + b) * g.len;
        double* dst = row + b * g.out_len;
        for (std::size_t to = 0; to < g.out_len; ++to) {
          const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * g.stride + kk) - static_cast<std::ptrdiff_t>(g.pad);
          dst[to] = (ti >= 0 && ti < static_cast<std::ptrdiff_t>(g.len)) ? xin[ti] : 0.0;
        }
      }
    }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t ncols = g.batch * g.out_len;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t kk = 0; kk < g.kernel; ++kk) {
      const double* row = cols + (ci * g.kernel + kk) * ncols;
      for (std::size_t b = 0; b < g.batch; ++b) {
        double* xin = dx + (ci * g.batch + b) * g.len;
        const double* src = row + b * g.out_len;
        for (std::size_t to = 0; to < g.out_len; ++to) {
          const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * g.stride + kk) - static_cast<std::ptrdiff_t>(g.pad);
          if (ti >= 0 && ti < static_cast<std::ptrdiff_t>(g.len)) xin[ti] += src[to];
        }
      }
    }
}

}  // namespace

Var conv1d(Tape& t, Var x, Var w, Var bias, std::size_t stride, std::size_t pad) {
  const Tensor& xin = t.value(x);
  const Tensor& wt = t.value(w);
  if (xin.rank() < 3) throw Error("conv1d: input must be (C, ..., T), got " + shape_string(xin.shape));
  if (wt.rank() != 3) throw Error("conv1d: weight must be (Cout, Cin, K)");
  ConvGeometry g{};
  g.cin = xin.dim(0);
  g.len = xin.shape.back();
  g.batch = xin.numel() / (g.cin * g.len);
  g.cout = wt.dim(0);
  g.kernel = wt.dim(2);
  g.stride = stride;
  g.pad = pad;
  if (wt.dim(1) != g.cin)
    throw Error("conv1d: weight expects " + std::to_string(wt.dim(1)) + " input channels, got " +
                std::to_string(g.cin));
  if (g.len + 2 * pad < g.kernel) throw Error("conv1d: input shorter than kernel");
  g.out_len = (g.len + 2 * pad - g.kernel) / stride + 1;
  const std::size_t ckk = g.cin * g.kernel;
  const std::size_t ncols = g.batch * g.out_len;

  const bool pointwise = g.kernel == 1 && stride == 1 && pad == 0;
  std::vector<double> cols;
  if (!pointwise) {
    cols.resize(ckk * ncols);
    im2col(xin.ptr(), g, cols.data());
  }
  const double* colp = pointwise ? xin.ptr() : cols.data();

  Shape out_shape = xin.shape;
  out_shape.front() = g.cout;
  out_shape.back() = g.out_len;
  Tensor out(out_shape);
  kernels::gemm(g.cout, ncols, ckk, wt.ptr(), ckk, colp, ncols, out.ptr(), ncols, false);
  if (bias.valid()) {
    const Tensor& bt = t.value(bias);
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* row = out.ptr() + co * ncols;
      const double bv = bt[co];
      for (std::size_t j = 0; j < ncols; ++j) row[j] += bv;
    }
  }

  return t.record(std::move(out), {x, w, bias},
                  [x, w, bias, g, pointwise, cols = std::move(cols)](Tape& tp, const Tensor& gout) {
                    const std::size_t ckk = g.cin * g.kernel;
                    const std::size_t ncols = g.batch * g.out_len;
                    if (Tensor* gb = tp.grad_slot(bias))
                      for (std::size_t co = 0; co < g.cout; ++co)
                        (*gb)[co] += kernels::sum(gout.ptr() + co * ncols, ncols);
                    if (Tensor* gw = tp.grad_slot(w)) {
                      const double* colp = pointwise ? tp.value(x).ptr() : cols.data();
                      std::vector<double> colt(ncols * ckk);
                      transpose(colp, ckk, ncols, colt.data());
                      kernels::gemm(g.cout, ckk, ncols, gout.ptr(), ncols, colt.data(), ckk, gw->ptr(), ckk, true);
                    }
                    if (Tensor* gx = tp.grad_slot(x)) {
                      const Tensor& wt = tp.value(w);
                      std::vector<double> wtt(ckk * g.cout);
                      transpose(wt.ptr(), g.cout, ckk, wtt.data());
                      if (pointwise) {
                        kernels::gemm(ckk, ncols, g.cout, wtt.data(), g.cout, gout.ptr(), ncols, gx->ptr(), ncols,
                                      true);
                      } else {
                        std::vector<double> dcols(ckk * ncols);
                        kernels::gemm(ckk, ncols, g.cout, wtt.data(), g.cout, gout.ptr(), ncols, dcols.data(), ncols,
                                      false);
                        col2im_add(dcols.data(), g, gx->ptr());
                      }
                    }
                  });
}

Var linear(Tape& t, Var x, Var w, Var bias) {
  const Tensor& xin = t.value(x);
  const Tensor& wt = t.value(w);
  if (xin.rank() != 2 || wt.rank() != 2 || wt.dim(1) != xin.dim(1))
    throw Error("linear: expected x (n, in) and w (out, in), got " + shape_string(xin.shape) + " and " +
                shape_string(wt.shape));
  const std::size_t n = xin.dim(0), in = xin.dim(1), outd = wt.dim(0);
  std::vector<double> wtt(in * outd);
  transpose(wt.ptr(), outd, in, wtt.data());
  Tensor out({n, outd});
  kernels::gemm(n, outd, in, xin.ptr(), in, wtt.data(), outd, out.ptr(), outd, false);
  if (bias.valid()) {
    const Tensor& bt = t.value(bias);
    for (std::size_t i = 0; i < n; ++i) kernels::axpy(1.0, bt.ptr(), out.ptr() + i * outd, outd);
  }
  return t.record(std::move(out), {x, w, bias}, [x, w, bias, n, in, outd](Tape& tp, const Tensor& g) {
    if (Tensor* gb = tp.grad_slot(bias))
      for (std::size_t i = 0; i < n; ++i) kernels::axpy(1.0, g.ptr() + i * outd, gb->ptr(), outd);
    if (Tensor* gw = tp.grad_slot(w)) {
      std::vector<double> gt(outd * n);
      transpose(g.ptr(), n, outd, gt.data());
      kernels::gemm(outd, in, n, gt.data(), n, tp.value(x).ptr(), in, gw->ptr(), in, true);
    }
    if (Tensor* gx = tp.grad_slot(x))
      kernels::gemm(n, in, outd, g.ptr(), outd, tp.value(w).ptr(), in, gx->ptr(), in, true);
  });
}

Var batch_norm(Tape& t, Var x, Var gamma, Var beta, BatchNormState state, Mode mode) {
  const Tensor& in = t.value(x);
  const std::size_t channels = in.dim(0);
  const std::size_t per = in.numel() / channels;
  const Tensor& gm = t.value(gamma);
  const Tensor& bt = t.value(beta);
  Tensor out(in.shape);
  std::vector<double> xhat(in.numel());
  std::vector<double> inv_std(channels);
  const bool batch_stats = mode == Mode::train;
  if (batch_stats && per < 2) throw Error("batch_norm: need more than one value per channel in train mode");

  for (std::size_t c = 0; c < channels; ++c) {
    const double* xc = in.ptr() + c * per;
    double mean, var;
    if (batch_stats) {
      mean = kernels::sum(xc, per) / static_cast<double>(per);
      double ss = 0.0;
      for (std::size_t i = 0; i < per; ++i) ss += (xc[i] - mean) * (xc[i] - mean);
      var = ss / static_cast<double>(per);
      if (state.update_running && state.running_mean && state.running_var) {
        const double unbiased = ss / static_cast<double>(per - 1);
        (*state.running_mean)[c] = (1.0 - state.momentum) * (*state.running_mean)[c] + state.momentum * mean;
        (*state.running_var)[c] = (1.0 - state.momentum) * (*state.running_var)[c] + state.momentum * unbiased;
      }
    } else {
      mean = state.running_mean ? (*state.running_mean)[c] : 0.0;
      var = state.running_var ? (*state.running_var)[c] : 1.0;
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    inv_std[c] = is;
    double* oc = out.ptr() + c * per;
    double* hc = xhat.data() + c * per;
    for (std::size_t i = 0; i < per; ++i) {
      hc[i] = (xc[i] - mean) * is;
      oc[i] = gm[c] * hc[i] + bt[c];
    }
  }

  return t.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, channels, per, batch_stats, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)](Tape& tp, const Tensor& g) {
                    Tensor* gx = tp.grad_slot(x);
                    Tensor* gg = tp.grad_slot(gamma);
                    Tensor* gbeta = tp.grad_slot(beta);
                    const Tensor& gm = tp.value(gamma);
                    for (std::size_t c = 0; c < channels; ++c) {
                      const double* gc = g.ptr() + c * per;
                      const double* hc = xhat.data() + c * per;
                      const double sum_g = kernels::sum(gc, per);
                      const double sum_gh = kernels::dot(gc, hc, per);
                      if (gg) (*gg)[c] += sum_gh;
                      if (gbeta) (*gbeta)[c] += sum_g;
                      if (!gx) continue;
                      double* dx = gx->ptr() + c * per;
                      const double k = gm[c] * inv_std[c];
                      if (batch_stats) {
                        const double inv_n = 1.0 / static_cast<double>(per);
                        for (std::size_t i = 0; i < per; ++i)
                          dx[i] += k * (gc[i] - inv_n * sum_g - hc[i] * inv_n * sum_gh);
                      } else {
                        kernels::axpy(k, gc, dx, per);
                      }
                    }
                  });
}

Var stack_sensors(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("stack_sensors: no sensors");
  const Tensor& p0 = t.value(parts[0]);
  const std::size_t c = p0.dim(0), n = p0.dim(1), len = p0.dim(2), s = parts.size();
  Tensor out({c, n, s, len});
  for (std::size_t si = 0; si < s; ++si) {
    const Tensor& p = t.value(parts[si]);
    if (p.shape != p0.shape) throw Error("stack_sensors: sensor " + std::to_string(si) + " has mismatched shape");
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(p.ptr() + (ci * n + i) * len, len, out.ptr() + ((ci * n + i) * s + si) * len);
  }
  return t.record(std::move(out), parts, [parts, c, n, s, len](Tape& tp, const Tensor& g) {
    for (std::size_t si = 0; si < s; ++si) {
      Tensor* gp = tp.grad_slot(parts[si]);
      if (!gp) continue;
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < n; ++i)
          kernels::axpy(1.0, g.ptr() + ((ci * n + i) * s + si) * len, gp->ptr() + (ci * n + i) * len, len);
    }
  });
}

Var mean_sensors(Tape& t, Var x) {
  const Tensor& in = t.value(x);
  if (in.rank() != 4) throw Error("mean_sensors: expected (C, n, S, T)");
  const std::size_t c = in.dim(0), n = in.dim(1), s = in.dim(2), len = in.dim(3);
  Tensor out({c, n, len});
  const double inv = 1.0 / static_cast<double>(s);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < n; ++i) {
      double* dst = out.ptr() + (ci * n + i) * len;
      for (std::size_t si = 0; si < s; ++si)
        kernels::axpy(inv, in.ptr() + ((ci * n + i) * s + si) * len, dst, len);
    }
  return t.record(std::move(out), {x}, [x, c, n, s, len, inv](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad_slot(x);
    if (!gx) return;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t si = 0; si < s; ++si)
          kernels::axpy(inv, g.ptr() + (ci * n + i) * len, gx->ptr() + ((ci * n + i) * s + si) * len, len);
  });
}

Var mean_time(Tape& t, Var x) {
  const Tensor& in = t.value(x);
  if (in.rank() != 3) throw Error("mean_time: expected (C, B, T)");
  const std::size_t c = in.dim(0), b = in.dim(1), len = in.dim(2);
  Tensor out({b, c});
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t bi = 0; bi < b; ++bi)
      out[bi * c + ci] = kernels::sum(in.ptr() + (ci * b + bi) * len, len) / static_cast<double>(len);
  return t.record(std::move(out), {x}, [x, c, b, len](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad_slot(x);
    if (!gx) return;
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t bi = 0; bi < b; ++bi) {
        const double v = g[bi * c + ci] * inv;
        double* dst = gx->ptr() + (ci * b + bi) * len;
        for (std::size_t ti = 0; ti < len; ++ti) dst[ti] += v;
      }
  });
}

Var flatten_rows(Tape& t, Var x) {
  const Tensor& in = t.value(x);
  if (in.rank() != 3) throw Error("flatten_rows: expected (C, B, T)");
  const std::size_t c = in.dim(0), b = in.dim(1), len = in.dim(2);
  Tensor out({b, c * len});
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t bi = 0; bi < b; ++bi)
      std::copy_n(in.ptr() + (ci * b + bi) * len, len, out.ptr() + bi * c * len + ci * len);
  return t.record(std::move(out), {x}, [x, c, b, len](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad_slot(x);
    if (!gx) return;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t bi = 0; bi < b; ++bi)
        kernels::axpy(1.0, g.ptr() + bi * c * len + ci * len, gx->ptr() + (ci * b + bi) * len, len);
  });
}

// ---------------------------------------------------------------------------

Var spatial_attention(Tape& t, Var q, Var k, Var v, std::size_t heads, double drop_connect, Mode mode, Rng& rng,
                      AttentionTrace* trace) {
  const Tensor& qt = t.value(q);
  const Tensor& kt = t.value(k);
  const Tensor& vt = t.value(v);
  if (qt.rank() != 4 || !qt.same_shape(kt) || !qt.same_shape(vt))
    throw Error("spatial_attention: q, k, v must share shape (C, n, S, T)");
  const std::size_t c = qt.dim(0), n = qt.dim(1), s = qt.dim(2), len = qt.dim(3);
  if (heads == 0 || c % heads != 0)
    throw Error("spatial_attention: " + std::to_string(c) + " channels not divisible into " + std::to_string(heads) +
                " heads");
  const std::size_t hd = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool use_mask = mode == Mode::train && drop_connect > 0.0;
  // Element (c, i, s, t) lives at ((c * n + i) * S + s) * T + t.
  const std::size_t cstride = n * s * len;
  auto at = [&](std::size_t ch, std::size_t i, std::size_t si, std::size_t ti) {
    return ch * cstride + (i * s + si) * len + ti;
  };

  const std::size_t groups = n * len * heads;
  std::vector<double> soft(groups * s * s);
  std::vector<double> fin(groups * s * s);
  std::vector<double> mask(use_mask ? groups * s * s : 0);
  std::vector<unsigned char> degenerate(use_mask ? groups * s : 0);
  Tensor out(qt.shape);

  std::vector<double> qb(s * hd), kb(s * hd), vb(s * hd);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ti = 0; ti < len; ++ti)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t gidx = (i * len + ti) * heads + h;
        for (std::size_t si = 0; si < s; ++si)
          for (std::size_t d = 0; d < hd; ++d) {
            const std::size_t off = at(h * hd + d, i, si, ti);
            qb[si * hd + d] = qt[off];
            kb[si * hd + d] = kt[off];
            vb[si * hd + d] = vt[off];
          }
        double* a = soft.data() + gidx * s * s;
        double* af = fin.data() + gidx * s * s;
        for (std::size_t r = 0; r < s; ++r) {
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t cidx = 0; cidx < s; ++cidx) {
            a[r * s + cidx] = scale * kernels::dot(qb.data() + r * hd, kb.data() + cidx * hd, hd);
            mx = std::max(mx, a[r * s + cidx]);
          }
          double z = 0.0;
          for (std::size_t cidx = 0; cidx < s; ++cidx) {
            a[r * s + cidx] = std::exp(a[r * s + cidx] - mx);
            z += a[r * s + cidx];
          }
          for (std::size_t cidx = 0; cidx < s; ++cidx) a[r * s + cidx] /= z;
          if (!use_mask) {
            std::copy_n(a + r * s, s, af + r * s);
            continue;
          }
          double* m = mask.data() + gidx * s * s + r * s;
          double kept = 0.0;
          for (std::size_t cidx = 0; cidx < s; ++cidx) {
            m[cidx] = rng.bernoulli(drop_connect) ? 0.0 : 1.0;
            kept += a[r * s + cidx] * m[cidx];
          }
          if (kept > 0.0) {
            for (std::size_t cidx = 0; cidx < s; ++cidx) af[r * s + cidx] = a[r * s + cidx] * m[cidx] / kept;
          } else {
            degenerate[gidx * s + r] = 1;
            for (std::size_t cidx = 0; cidx < s; ++cidx) af[r * s + cidx] = 1.0 / static_cast<double>(s);
          }
        }
        for (std::size_t r = 0; r < s; ++r)
          for (std::size_t d = 0; d < hd; ++d) {
            double acc = 0.0;
            for (std::size_t cidx = 0; cidx < s; ++cidx) acc += af[r * s + cidx] * vb[cidx * hd + d];
            out[at(h * hd + d, i, r, ti)] = acc;
          }
      }

  if (trace) {
    trace->sensors = s;
    trace->softmax_rows.insert(trace->softmax_rows.end(), soft.begin(), soft.end());
    trace->final_rows.insert(trace->final_rows.end(), fin.begin(), fin.end());
  }

  return t.record(
      std::move(out), {q, k, v},
      [q, k, v, c, n, s, len, heads, hd, scale, use_mask, cstride, soft = std::move(soft), fin = std::move(fin),
       mask = std::move(mask), degenerate = std::move(degenerate)](Tape& tp, const Tensor& g) {
        (void)c;
        Tensor* gq = tp.grad_slot(q);
        Tensor* gk = tp.grad_slot(k);
        Tensor* gv = tp.grad_slot(v);
        const Tensor& qt = tp.value(q);
        const Tensor& kt = tp.value(k);
        const Tensor& vt = tp.value(v);
        auto at = [&](std::size_t ch, std::size_t i, std::size_t si, std::size_t ti) {
          return ch * cstride + (i * s + si) * len + ti;
        };
        std::vector<double> qb(s * hd), kb(s * hd), vb(s * hd), gb(s * hd);
        std::vector<double> dfin(s * s), dsoft(s * s), dqb(s * hd), dkb(s * hd), dvb(s * hd);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ti = 0; ti < len; ++ti)
            for (std::size_t h = 0; h < heads; ++h) {
              const std::size_t gidx = (i * len + ti) * heads + h;
              for (std::size_t si = 0; si < s; ++si)
                for (std::size_t d = 0; d < hd; ++d) {
                  const std::size_t off = at(h * hd + d, i, si, ti);
                  qb[si * hd + d] = qt[off];
                  kb[si * hd + d] = kt[off];
                  vb[si * hd + d] = vt[off];
                  gb[si * hd + d] = g[off];
                }
              const double* a = soft.data() + gidx * s * s;
              const double* af = fin.data() + gidx * s * s;
              std::fill(dvb.begin(), dvb.end(), 0.0);
              for (std::size_t r = 0; r < s; ++r)
                for (std::size_t cidx = 0; cidx < s; ++cidx) {
                  dfin[r * s + cidx] = kernels::dot(gb.data() + r * hd, vb.data() + cidx * hd, hd);
                  kernels::axpy(af[r * s + cidx], gb.data() + r * hd, dvb.data() + cidx * hd, hd);
                }
              for (std::size_t r = 0; r < s; ++r) {
                double* ds = dsoft.data() + r * s;
                if (use_mask) {
                  const double* m = mask.data() + gidx * s * s + r * s;
                  if (degenerate[gidx * s + r]) {
                    std::fill(ds, ds + s, 0.0);
                  } else {
                    double kept = 0.0, dot_fa = 0.0;
                    for (std::size_t cidx = 0; cidx < s; ++cidx) {
                      kept += a[r * s + cidx] * m[cidx];
                      dot_fa += dfin[r * s + cidx] * af[r * s + cidx];
                    }
                    for (std::size_t cidx = 0; cidx < s; ++cidx)
                      ds[cidx] = m[cidx] * (dfin[r * s + cidx] - dot_fa) / kept;
                  }
                } else {
                  std::copy_n(dfin.data() + r * s, s, ds);
                }
                double dot_sa = 0.0;
                for (std::size_t cidx = 0; cidx < s; ++cidx) dot_sa += ds[cidx] * a[r * s + cidx];
                for (std::size_t cidx = 0; cidx < s; ++cidx) ds[cidx] = a[r * s + cidx] * (ds[cidx] - dot_sa) * scale;
              }
              std::fill(dqb.begin(), dqb.end(), 0.0);
              std::fill(dkb.begin(), dkb.end(), 0.0);
              for (std::size_t r = 0; r < s; ++r)
                for (std::size_t cidx = 0; cidx < s; ++cidx) {
                  const double d = dsoft[r * s + cidx];
                  kernels::axpy(d, kb.data() + cidx * hd, dqb.data() + r * hd, hd);
                  kernels::axpy(d, qb.data() + r * hd, dkb.data() + cidx * hd, hd);
                }
              for (std::size_t si = 0; si < s; ++si)
                for (std::size_t d = 0; d < hd; ++d) {
                  const std::size_t off = at(h * hd + d, i, si, ti);
                  if (gq) (*gq)[off] += dqb[si * hd + d];
                  if (gk) (*gk)[off] += dkb[si * hd + d];
                  if (gv) (*gv)[off] += dvb[si * hd + d];
                }
            }
      });
}

}  // namespace tasked::ag
