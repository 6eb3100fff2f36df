// Copyright 2026 The SAP Fine-Tuning Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sap/numerics/graph.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "kernels.h"
#include "sap/errors.h"

namespace sap::numerics {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_string(a) + " and " + shape_string(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " + shape_string(s));
  }
}

template <typename Real>
void add_into(std::vector<Real>& dst, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += static_cast<Real>(src[i]);
}

// Softmax probabilities of one row, computed in double.
template <typename Real>
void softmax_row(const Real* x, std::size_t n, std::size_t stride, double* out) {
  double mx = -INFINITY;
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, double(x[j * stride]));
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(double(x[j * stride]) - mx);
    sum += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
}

void check_labels(std::span<const std::int32_t> labels, std::size_t batch,
                  std::size_t classes) {
  if (labels.size() != batch) {
    throw LabelError("expected " + std::to_string(batch) + " labels, got " +
                     std::to_string(labels.size()));
  }
  for (std::int32_t y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw LabelError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

// tanh through exp; libm tanh does not vectorize and dominated block time.
inline double fast_tanh(double u) {
  u = std::clamp(u, -20.0, 20.0);
  return 1.0 - 2.0 / (std::exp(2.0 * u) + 1.0);
}

}  // namespace

template <typename Real>
Var BasicGraph<Real>::push(TensorT value, bool needs_grad, Backward backward,
                           const char* op) {
  value.check_finite(op);
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename Real>
std::vector<Real>& BasicGraph<Real>::grad_buffer(Var v) {
  Node& n = nodes_[v.index];
  if (n.grad.empty()) n.grad.assign(n.value.size(), Real(0));
  return n.grad;
}

template <typename Real>
BasicTensor<Real> BasicGraph<Real>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return TensorT(n.value.shape());
  return TensorT(n.value.shape(), n.grad);
}

// ---------------------------------------------------------------- leaves

template <typename Real>
Var BasicGraph<Real>::constant(TensorT value) {
  return push(std::move(value), false, nullptr, "constant");
}

template <typename Real>
Var BasicGraph<Real>::parameter(Tensor& param) {
  TensorT value = param.template cast<Real>();
  Var v = push(std::move(value), param.requires_grad(), nullptr, "parameter");
  if (param.requires_grad()) nodes_[v.index].bound = &param;
  return v;
}

template <typename Real>
Var BasicGraph<Real>::variable(TensorT value) {
  return push(std::move(value), true, nullptr, "variable");
}

// ---------------------------------------------------------------- algebra

template <typename Real>
Var BasicGraph<Real>::matmul(Var a, Var b, bool transpose_b) {
  const Shape sa = node(a).value.shape();
  const Shape sb = node(b).value.shape();
  require_rank("matmul", sa, 2);
  require_rank("matmul", sb, 2);
  const std::size_t m = sa[0], k = sa[1];
  const std::size_t n = transpose_b ? sb[0] : sb[1];
  if ((transpose_b ? sb[1] : sb[0]) != k) shape_error("matmul", sa, sb);
  std::vector<double> out(m * n);
  const Real* pa = node(a).value.data().data();
  const Real* pb = node(b).value.data().data();
  if (transpose_b) {
    kernels::gemm_nt(pa, pb, out.data(), m, k, n);
  } else {
    kernels::gemm_nn(pa, pb, out.data(), m, k, n);
  }
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(TensorT({m, n}, std::vector<Real>(out.begin(), out.end())), ng,
              [a, b, m, k, n, transpose_b](BasicGraph& g, std::uint32_t self) {
                const Real* go = g.nodes_[self].grad.data();
                const Real* va = g.nodes_[a.index].value.data().data();
                const Real* vb = g.nodes_[b.index].value.data().data();
                if (g.nodes_[a.index].needs_grad) {
                  std::vector<double> da(m * k);
                  if (transpose_b) {
                    kernels::gemm_nn(go, vb, da.data(), m, n, k);
                  } else {
                    kernels::gemm_nt(go, vb, da.data(), m, n, k);
                  }
                  add_into(g.grad_buffer(a), da.data(), da.size());
                }
                if (g.nodes_[b.index].needs_grad) {
                  std::vector<double> db(k * n);
                  if (transpose_b) {
                    kernels::gemm_tn(go, va, db.data(), n, m, k);
                  } else {
                    kernels::gemm_tn(va, go, db.data(), k, m, n);
                  }
                  add_into(g.grad_buffer(b), db.data(), db.size());
                }
              },
              "matmul");
}

template <typename Real>
Var BasicGraph<Real>::batched_matmul(Var a, Var b, bool transpose_b) {
  const Shape sa = node(a).value.shape();
  const Shape sb = node(b).value.shape();
  require_rank("batched_matmul", sa, 3);
  require_rank("batched_matmul", sb, 3);
  const std::size_t B = sa[0], m = sa[1], k = sa[2];
  const std::size_t n = transpose_b ? sb[1] : sb[2];
  if (sb[0] != B || (transpose_b ? sb[2] : sb[1]) != k) {
    shape_error("batched_matmul", sa, sb);
  }
  std::vector<double> out(B * m * n);
  const Real* pa = node(a).value.data().data();
  const Real* pb = node(b).value.data().data();
  for (std::size_t i = 0; i < B; ++i) {
    if (transpose_b) {
      kernels::gemm_nt(pa + i * m * k, pb + i * n * k, out.data() + i * m * n, m, k, n);
    } else {
      kernels::gemm_nn(pa + i * m * k, pb + i * k * n, out.data() + i * m * n, m, k, n);
    }
  }
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(
      TensorT({B, m, n}, std::vector<Real>(out.begin(), out.end())), ng,
      [a, b, B, m, k, n, transpose_b](BasicGraph& g, std::uint32_t self) {
        const Real* go = g.nodes_[self].grad.data();
        const Real* va = g.nodes_[a.index].value.data().data();
        const Real* vb = g.nodes_[b.index].value.data().data();
        if (g.nodes_[a.index].needs_grad) {
          std::vector<double> da(B * m * k);
          for (std::size_t i = 0; i < B; ++i) {
            if (transpose_b) {
              kernels::gemm_nn(go + i * m * n, vb + i * n * k, da.data() + i * m * k, m, n, k);
            } else {
              kernels::gemm_nt(go + i * m * n, vb + i * k * n, da.data() + i * m * k, m, n, k);
            }
          }
          add_into(g.grad_buffer(a), da.data(), da.size());
        }
        if (g.nodes_[b.index].needs_grad) {
          std::vector<double> db(B * k * n);
          for (std::size_t i = 0; i < B; ++i) {
            if (transpose_b) {
              kernels::gemm_tn(go + i * m * n, va + i * m * k, db.data() + i * n * k, n, m, k);
            } else {
              kernels::gemm_tn(va + i * m * k, go + i * m * n, db.data() + i * k * n, k, m, n);
            }
          }
          add_into(g.grad_buffer(b), db.data(), db.size());
        }
      },
      "batched_matmul");
}

template <typename Real>
Var BasicGraph<Real>::add(Var a, Var b) {
  const TensorT& va = node(a).value;
  const TensorT& vb = node(b).value;
  if (va.shape() != vb.shape()) shape_error("add", va.shape(), vb.shape());
  TensorT out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(out), ng,
              [a, b](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                for (Var v : {a, b}) {
                  if (!g.nodes_[v.index].needs_grad) continue;
                  auto& d = g.grad_buffer(v);
                  for (std::size_t i = 0; i < go.size(); ++i) d[i] += go[i];
                }
              },
              "add");
}

template <typename Real>
Var BasicGraph<Real>::add_bias(Var x, Var bias) {
  const TensorT& vx = node(x).value;
  const TensorT& vb = node(bias).value;
  const Shape& sx = vx.shape();
  const Shape& sb = vb.shape();
  if (sb.size() > sx.size() || sb.empty() ||
      !std::equal(sb.begin(), sb.end(), sx.end() - sb.size())) {
    shape_error("add_bias", sx, sb);
  }
  const std::size_t inner = vb.size();
  const std::size_t outer = vx.size() / inner;
  TensorT out(sx);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      out[o * inner + i] = vx[o * inner + i] + vb[i];
    }
  }
  const bool ng = node(x).needs_grad || node(bias).needs_grad;
  return push(std::move(out), ng,
              [x, bias, inner, outer](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                if (g.nodes_[x.index].needs_grad) {
                  auto& d = g.grad_buffer(x);
                  for (std::size_t i = 0; i < go.size(); ++i) d[i] += go[i];
                }
                if (g.nodes_[bias.index].needs_grad) {
                  std::vector<double> acc(inner, 0.0);
                  for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t i = 0; i < inner; ++i) acc[i] += go[o * inner + i];
                  }
                  add_into(g.grad_buffer(bias), acc.data(), inner);
                }
              },
              "add_bias");
}

template <typename Real>
Var BasicGraph<Real>::scale(Var x, double factor) {
  const TensorT& vx = node(x).value;
  TensorT out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<Real>(double(vx[i]) * factor);
  }
  return push(std::move(out), node(x).needs_grad,
              [x, factor](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                auto& d = g.grad_buffer(x);
                for (std::size_t i = 0; i < go.size(); ++i) {
                  d[i] += static_cast<Real>(double(go[i]) * factor);
                }
              },
              "scale");
}

template <typename Real>
Var BasicGraph<Real>::reshape(Var x, Shape shape) {
  TensorT out = node(x).value.reshaped(std::move(shape));
  return push(std::move(out), node(x).needs_grad,
              [x](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                auto& d = g.grad_buffer(x);
                for (std::size_t i = 0; i < go.size(); ++i) d[i] += go[i];
              },
              "reshape");
}

// ------------------------------------------------------------ elementwise

template <typename Real>
Var BasicGraph<Real>::gelu(Var x) {
  const TensorT& vx = node(x).value;
  TensorT out(vx.shape());
  // tanh values are kept for the backward pass.
  auto th = std::make_shared<std::vector<double>>(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = vx[i];
    const double t = fast_tanh(kGeluC * (v + kGeluA * v * v * v));
    (*th)[i] = t;
    out[i] = static_cast<Real>(0.5 * v * (1.0 + t));
  }
  return push(std::move(out), node(x).needs_grad,
              [x, th](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                const TensorT& vx = g.nodes_[x.index].value;
                auto& d = g.grad_buffer(x);
                for (std::size_t i = 0; i < go.size(); ++i) {
                  const double v = vx[i];
                  const double t = (*th)[i];
                  const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                  d[i] += static_cast<Real>(double(go[i]) * (0.5 * (1.0 + t) + 0.5 * v * dt));
                }
              },
              "gelu");
}

template <typename Real>
Var BasicGraph<Real>::tanh(Var x) {
  const TensorT& vx = node(x).value;
  TensorT out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<Real>(std::tanh(double(vx[i])));
  }
  return push(std::move(out), node(x).needs_grad,
              [x](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                const TensorT& vy = g.nodes_[self].value;
                auto& d = g.grad_buffer(x);
                for (std::size_t i = 0; i < go.size(); ++i) {
                  const double y = vy[i];
                  d[i] += static_cast<Real>(double(go[i]) * (1.0 - y * y));
                }
              },
              "tanh");
}

// ---------------------------------------------------------------- softmax

template <typename Real>
Var BasicGraph<Real>::softmax(Var x, std::size_t axis) {
  const TensorT& vx = node(x).value;
  const Shape& s = vx.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " invalid for " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  TensorT out(s);
  std::vector<double> row(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      softmax_row(vx.data().data() + base, len, inner, row.data());
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] = static_cast<Real>(row[j]);
    }
  }
  return push(std::move(out), node(x).needs_grad,
              [x, outer, inner, len](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                const TensorT& vy = g.nodes_[self].value;
                auto& d = g.grad_buffer(x);
                for (std::size_t o = 0; o < outer; ++o) {
                  for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < len; ++j) {
                      dot += double(go[base + j * inner]) * double(vy[base + j * inner]);
                    }
                    for (std::size_t j = 0; j < len; ++j) {
                      const std::size_t idx = base + j * inner;
                      d[idx] += static_cast<Real>(double(vy[idx]) * (double(go[idx]) - dot));
                    }
                  }
                }
              },
              "softmax");
}

template <typename Real>
Var BasicGraph<Real>::masked_softmax(Var scores,
                                     std::span<const std::uint8_t> key_mask,
                                     std::size_t heads) {
  const TensorT& vx = node(scores).value;
  const Shape& s = vx.shape();
  require_rank("masked_softmax", s, 3);
  const std::size_t B = s[0], m = s[1], n = s[2];
  if (heads == 0 || B % heads != 0 || key_mask.size() != (B / heads) * n) {
    throw DimensionError("masked_softmax: mask size " +
                         std::to_string(key_mask.size()) + " does not fit " +
                         shape_string(s));
  }
  auto mask = std::make_shared<std::vector<std::uint8_t>>(key_mask.begin(), key_mask.end());
  TensorT out(s);
  for (std::size_t bh = 0; bh < B; ++bh) {
    const std::uint8_t* km = mask->data() + (bh / heads) * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real* row = vx.data().data() + (bh * m + i) * n;
      Real* orow = out.data().data() + (bh * m + i) * n;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        if (km[j]) mx = std::max(mx, double(row[j]));
      }
      if (mx == -INFINITY) continue;  // no visible key: all zeros
      double sum = 0.0;
      std::vector<double> e(n, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        if (km[j]) {
          e[j] = std::exp(double(row[j]) - mx);
          sum += e[j];
        }
      }
      for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<Real>(e[j] / sum);
    }
  }
  return push(std::move(out), node(scores).needs_grad,
              [scores, B, m, n](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                const TensorT& vy = g.nodes_[self].value;
                auto& d = g.grad_buffer(scores);
                for (std::size_t r = 0; r < B * m; ++r) {
                  const std::size_t base = r * n;
                  double dot = 0.0;
                  for (std::size_t j = 0; j < n; ++j) {
                    dot += double(go[base + j]) * double(vy[base + j]);
                  }
                  for (std::size_t j = 0; j < n; ++j) {
                    const double y = vy[base + j];
                    if (y != 0.0) d[base + j] += static_cast<Real>(y * (double(go[base + j]) - dot));
                  }
                }
              },
              "masked_softmax");
}

// ------------------------------------------------------------- layer norm

template <typename Real>
Var BasicGraph<Real>::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const TensorT& vx = node(x).value;
  const TensorT& vg = node(gamma).value;
  const TensorT& vb = node(beta).value;
  if (vx.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t D = vx.shape().back();
  if (vg.size() != D || vb.size() != D) shape_error("layer_norm", vx.shape(), vg.shape());
  const std::size_t rows = vx.size() / D;
  auto xhat = std::make_shared<std::vector<double>>(vx.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  TensorT out(vx.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = vx.data().data() + r * D;
    double mean = 0.0;
    for (std::size_t j = 0; j < D; ++j) mean += xr[j];
    mean /= double(D);
    double var = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      const double c = double(xr[j]) - mean;
      var += c * c;
    }
    var /= double(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < D; ++j) {
      const double h = (double(xr[j]) - mean) * is;
      (*xhat)[r * D + j] = h;
      out[r * D + j] = static_cast<Real>(h * double(vg[j]) + double(vb[j]));
    }
  }
  const bool ng = node(x).needs_grad || node(gamma).needs_grad || node(beta).needs_grad;
  return push(std::move(out), ng,
              [x, gamma, beta, D, rows, xhat, inv_std](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                const TensorT& vg = g.nodes_[gamma.index].value;
                if (g.nodes_[x.index].needs_grad) {
                  auto& d = g.grad_buffer(x);
                  std::vector<double> dh(D);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < D; ++j) {
                      dh[j] = double(go[r * D + j]) * double(vg[j]);
                      mean_dh += dh[j];
                      mean_dh_h += dh[j] * (*xhat)[r * D + j];
                    }
                    mean_dh /= double(D);
                    mean_dh_h /= double(D);
                    for (std::size_t j = 0; j < D; ++j) {
                      d[r * D + j] += static_cast<Real>(
                          (*inv_std)[r] * (dh[j] - mean_dh - (*xhat)[r * D + j] * mean_dh_h));
                    }
                  }
                }
                if (g.nodes_[gamma.index].needs_grad) {
                  std::vector<double> acc(D, 0.0);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < D; ++j) {
                      acc[j] += double(go[r * D + j]) * (*xhat)[r * D + j];
                    }
                  }
                  add_into(g.grad_buffer(gamma), acc.data(), D);
                }
                if (g.nodes_[beta.index].needs_grad) {
                  std::vector<double> acc(D, 0.0);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < D; ++j) acc[j] += go[r * D + j];
                  }
                  add_into(g.grad_buffer(beta), acc.data(), D);
                }
              },
              "layer_norm");
}

// ------------------------------------------------------------ reshuffles

template <typename Real>
Var BasicGraph<Real>::split_heads(Var x, std::size_t heads) {
  const TensorT& vx = node(x).value;
  require_rank("split_heads", vx.shape(), 3);
  const std::size_t b = vx.dim(0), n = vx.dim(1), d = vx.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("split_heads: " + std::to_string(d) +
                         " not divisible by " + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  TensorT out({b * heads, n, dh});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dh; ++j)
          out[((bi * heads + h) * n + t) * dh + j] = vx[(bi * n + t) * d + h * dh + j];
  return push(std::move(out), node(x).needs_grad,
              [x, b, n, d, heads, dh](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                auto& dx = g.grad_buffer(x);
                for (std::size_t bi = 0; bi < b; ++bi)
                  for (std::size_t t = 0; t < n; ++t)
                    for (std::size_t h = 0; h < heads; ++h)
                      for (std::size_t j = 0; j < dh; ++j)
                        dx[(bi * n + t) * d + h * dh + j] += go[((bi * heads + h) * n + t) * dh + j];
              },
              "split_heads");
}

template <typename Real>
Var BasicGraph<Real>::merge_heads(Var x, std::size_t heads) {
  const TensorT& vx = node(x).value;
  require_rank("merge_heads", vx.shape(), 3);
  if (heads == 0 || vx.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: batch not divisible by heads");
  }
  const std::size_t b = vx.dim(0) / heads, n = vx.dim(1), dh = vx.dim(2);
  const std::size_t d = dh * heads;
  TensorT out({b, n, d});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dh; ++j)
          out[(bi * n + t) * d + h * dh + j] = vx[((bi * heads + h) * n + t) * dh + j];
  return push(std::move(out), node(x).needs_grad,
              [x, b, n, d, heads, dh](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                auto& dx = g.grad_buffer(x);
                for (std::size_t bi = 0; bi < b; ++bi)
                  for (std::size_t t = 0; t < n; ++t)
                    for (std::size_t h = 0; h < heads; ++h)
                      for (std::size_t j = 0; j < dh; ++j)
                        dx[((bi * heads + h) * n + t) * dh + j] += go[(bi * n + t) * d + h * dh + j];
              },
              "merge_heads");
}

template <typename Real>
Var BasicGraph<Real>::embedding(Var table, std::span<const std::int32_t> ids,
                                std::size_t batch, std::size_t seq,
                                std::span<const std::int32_t> grad_ids) {
  const TensorT& vt = node(table).value;
  require_rank("embedding", vt.shape(), 2);
  const std::size_t V = vt.dim(0), d = vt.dim(1);
  if (ids.size() != batch * seq) {
    throw DimensionError("embedding: " + std::to_string(ids.size()) +
                         " ids for batch " + std::to_string(batch) + "x" +
                         std::to_string(seq));
  }
  if (!grad_ids.empty() && grad_ids.size() != ids.size()) {
    throw DimensionError("embedding: gradient id count mismatch");
  }
  for (auto ids_span : {ids, grad_ids}) {
    for (std::int32_t id : ids_span) {
      if (id < 0 || static_cast<std::size_t>(id) >= V) {
        throw DimensionError("embedding: id " + std::to_string(id) +
                             " outside table of " + std::to_string(V) + " rows");
      }
    }
  }
  TensorT out({batch, seq, d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(vt.data().data() + std::size_t(ids[i]) * d, d, out.data().data() + i * d);
  }
  auto routes = std::make_shared<std::vector<std::int32_t>>(
      grad_ids.empty() ? std::vector<std::int32_t>(ids.begin(), ids.end())
                       : std::vector<std::int32_t>(grad_ids.begin(), grad_ids.end()));
  return push(std::move(out), node(table).needs_grad,
              [table, d, routes](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                auto& dt = g.grad_buffer(table);
                for (std::size_t i = 0; i < routes->size(); ++i) {
                  const std::size_t row = std::size_t((*routes)[i]) * d;
                  for (std::size_t j = 0; j < d; ++j) dt[row + j] += go[i * d + j];
                }
              },
              "embedding");
}

template <typename Real>
Var BasicGraph<Real>::select_position(Var x, std::size_t position) {
  const TensorT& vx = node(x).value;
  require_rank("select_position", vx.shape(), 3);
  const std::size_t b = vx.dim(0), n = vx.dim(1), d = vx.dim(2);
  if (position >= n) throw DimensionError("select_position: out of range");
  TensorT out({b, d});
  for (std::size_t bi = 0; bi < b; ++bi) {
    std::copy_n(vx.data().data() + (bi * n + position) * d, d, out.data().data() + bi * d);
  }
  return push(std::move(out), node(x).needs_grad,
              [x, b, n, d, position](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                auto& dx = g.grad_buffer(x);
                for (std::size_t bi = 0; bi < b; ++bi)
                  for (std::size_t j = 0; j < d; ++j)
                    dx[(bi * n + position) * d + j] += go[bi * d + j];
              },
              "select_position");
}

template <typename Real>
Var BasicGraph<Real>::gather_positions(Var x, std::span<const std::size_t> flat_positions) {
  const TensorT& vx = node(x).value;
  require_rank("gather_positions", vx.shape(), 3);
  const std::size_t rows = vx.dim(0) * vx.dim(1), d = vx.dim(2);
  auto pos = std::make_shared<std::vector<std::size_t>>(flat_positions.begin(),
                                                        flat_positions.end());
  TensorT out({pos->size(), d});
  for (std::size_t i = 0; i < pos->size(); ++i) {
    if ((*pos)[i] >= rows) throw DimensionError("gather_positions: out of range");
    std::copy_n(vx.data().data() + (*pos)[i] * d, d, out.data().data() + i * d);
  }
  return push(std::move(out), node(x).needs_grad,
              [x, d, pos](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                auto& dx = g.grad_buffer(x);
                for (std::size_t i = 0; i < pos->size(); ++i)
                  for (std::size_t j = 0; j < d; ++j) dx[(*pos)[i] * d + j] += go[i * d + j];
              },
              "gather_positions");
}

template <typename Real>
Var BasicGraph<Real>::mean_pool(Var x, std::span<const std::uint8_t> mask) {
  const TensorT& vx = node(x).value;
  require_rank("mean_pool", vx.shape(), 3);
  const std::size_t b = vx.dim(0), n = vx.dim(1), d = vx.dim(2);
  if (mask.size() != b * n) throw DimensionError("mean_pool: mask size mismatch");
  auto weights = std::make_shared<std::vector<double>>(b * n, 0.0);
  for (std::size_t bi = 0; bi < b; ++bi) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < n; ++t) count += mask[bi * n + t] ? 1 : 0;
    for (std::size_t t = 0; t < n; ++t) {
      if (mask[bi * n + t]) (*weights)[bi * n + t] = 1.0 / double(count);
    }
  }
  TensorT out({b, d});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double w = (*weights)[bi * n + t];
        if (w != 0.0) s += w * double(vx[(bi * n + t) * d + j]);
      }
      out[bi * d + j] = static_cast<Real>(s);
    }
  }
  return push(std::move(out), node(x).needs_grad,
              [x, b, n, d, weights](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                auto& dx = g.grad_buffer(x);
                for (std::size_t bi = 0; bi < b; ++bi)
                  for (std::size_t t = 0; t < n; ++t) {
                    const double w = (*weights)[bi * n + t];
                    if (w == 0.0) continue;
                    for (std::size_t j = 0; j < d; ++j)
                      dx[(bi * n + t) * d + j] += static_cast<Real>(w * double(go[bi * d + j]));
                  }
              },
              "mean_pool");
}

template <typename Real>
Var BasicGraph<Real>::truncate_sequence(Var x, std::size_t length) {
  const TensorT& vx = node(x).value;
  require_rank("truncate_sequence", vx.shape(), 3);
  const std::size_t b = vx.dim(0), n = vx.dim(1), d = vx.dim(2);
  if (length > n) throw DimensionError("truncate_sequence: length exceeds sequence");
  TensorT out({b, length, d});
  for (std::size_t bi = 0; bi < b; ++bi) {
    std::copy_n(vx.data().data() + bi * n * d, length * d, out.data().data() + bi * length * d);
  }
  return push(std::move(out), node(x).needs_grad,
              [x, b, n, d, length](BasicGraph& g, std::uint32_t self) {
                const auto& go = g.nodes_[self].grad;
                auto& dx = g.grad_buffer(x);
                for (std::size_t bi = 0; bi < b; ++bi)
                  for (std::size_t i = 0; i < length * d; ++i)
                    dx[bi * n * d + i] += go[bi * length * d + i];
              },
              "truncate_sequence");
}

// ----------------------------------------------------------------- losses

template <typename Real>
Var BasicGraph<Real>::cross_entropy(Var logits, std::span<const std::int32_t> labels) {
  const TensorT& vl = node(logits).value;
  require_rank("cross_entropy", vl.shape(), 2);
  const std::size_t b = vl.dim(0), C = vl.dim(1);
  check_labels(labels, b, C);
  auto probs = std::make_shared<std::vector<double>>(b * C);
  auto lab = std::make_shared<std::vector<std::int32_t>>(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    softmax_row(vl.data().data() + i * C, C, 1, probs->data() + i * C);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < C; ++j) mx = std::max(mx, double(vl[i * C + j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < C; ++j) sum += std::exp(double(vl[i * C + j]) - mx);
    loss += (mx + std::log(sum)) - double(vl[i * C + std::size_t((*lab)[i])]);
  }
  loss /= double(b);
  return push(TensorT({1}, {static_cast<Real>(loss)}), node(logits).needs_grad,
              [logits, b, C, probs, lab](BasicGraph& g, std::uint32_t self) {
                const double go = g.nodes_[self].grad[0];
                auto& d = g.grad_buffer(logits);
                for (std::size_t i = 0; i < b; ++i)
                  for (std::size_t j = 0; j < C; ++j) {
                    const double onehot = (std::size_t((*lab)[i]) == j) ? 1.0 : 0.0;
                    d[i * C + j] += static_cast<Real>(go * ((*probs)[i * C + j] - onehot) / double(b));
                  }
              },
              "cross_entropy");
}

template <typename Real>
Var BasicGraph<Real>::masked_squared_error(Var x, const TensorT& target,
                                           std::span<const std::uint8_t> mask) {
  const TensorT& vx = node(x).value;
  if (vx.shape() != target.shape()) shape_error("masked_squared_error", vx.shape(), target.shape());
  require_rank("masked_squared_error", vx.shape(), 3);
  const std::size_t rows = vx.dim(0) * vx.dim(1), d = vx.dim(2);
  if (mask.size() != rows) throw DimensionError("masked_squared_error: mask size mismatch");
  auto diff = std::make_shared<std::vector<double>>(vx.size(), 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    for (std::size_t j = 0; j < d; ++j) {
      const double e = double(vx[r * d + j]) - double(target[r * d + j]);
      (*diff)[r * d + j] = e;
      loss += e * e;
    }
  }
  return push(TensorT({1}, {static_cast<Real>(loss)}), node(x).needs_grad,
              [x, diff](BasicGraph& g, std::uint32_t self) {
                const double go = g.nodes_[self].grad[0];
                auto& dx = g.grad_buffer(x);
                for (std::size_t i = 0; i < diff->size(); ++i) {
                  dx[i] += static_cast<Real>(2.0 * go * (*diff)[i]);
                }
              },
              "masked_squared_error");
}

template <typename Real>
Var BasicGraph<Real>::weighted_sum(Var x, const TensorT& weights) {
  const TensorT& vx = node(x).value;
  if (vx.size() != weights.size()) shape_error("weighted_sum", vx.shape(), weights.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < vx.size(); ++i) s += double(vx[i]) * double(weights[i]);
  auto w = std::make_shared<TensorT>(weights);
  return push(TensorT({1}, {static_cast<Real>(s)}), node(x).needs_grad,
              [x, w](BasicGraph& g, std::uint32_t self) {
                const double go = g.nodes_[self].grad[0];
                auto& dx = g.grad_buffer(x);
                for (std::size_t i = 0; i < w->size(); ++i) {
                  dx[i] += static_cast<Real>(go * double((*w)[i]));
                }
              },
              "weighted_sum");
}

// --------------------------------------------------------------- backward

template <typename Real>
void BasicGraph<Real>::backward(Var root) {
  const TensorT& v = node(root).value;
  backward(root, TensorT::full(v.shape(), Real(1)));
}

template <typename Real>
void BasicGraph<Real>::backward(Var root, const TensorT& seed) {
  if (root.index >= nodes_.size()) throw DimensionError("backward: unknown node");
  if (seed.shape() != node(root).value.shape()) {
    shape_error("backward seed", seed.shape(), node(root).value.shape());
  }
  seed.check_finite("backward seed");
  for (Node& n : nodes_) n.grad.clear();
  if (!nodes_[root.index].needs_grad) return;
  nodes_[root.index].grad.assign(seed.data().begin(), seed.data().end());
  for (std::int64_t i = root.index; i >= 0; --i) {
    Node& n = nodes_[std::size_t(i)];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, static_cast<std::uint32_t>(i));
    if (n.bound) {
      auto dst = n.bound->grad();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += static_cast<float>(n.grad[j]);
    }
  }
}

template class BasicGraph<float>;
template class BasicGraph<double>;

LossAndGrad cross_entropy_with_grad(const Tensor& logits,
                                    std::span<const std::int32_t> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be 2-D");
  logits.check_finite("cross_entropy logits");
  const std::size_t b = logits.dim(0), C = logits.dim(1);
  check_labels(labels, b, C);
  LossAndGrad out;
  out.grad = Tensor({b, C});
  std::vector<double> p(C);
  for (std::size_t i = 0; i < b; ++i) {
    softmax_row(logits.data().data() + i * C, C, 1, p.data());
    double mx = -INFINITY;
    for (std::size_t j = 0; j < C; ++j) mx = std::max(mx, double(logits[i * C + j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < C; ++j) sum += std::exp(double(logits[i * C + j]) - mx);
    out.loss += (mx + std::log(sum)) - double(logits[i * C + std::size_t(labels[i])]);
    for (std::size_t j = 0; j < C; ++j) {
      const double onehot = (std::size_t(labels[i]) == j) ? 1.0 : 0.0;
      out.grad[i * C + j] = static_cast<float>((p[j] - onehot) / double(b));
    }
  }
  out.loss /= double(b);
  return out;
}

}  // namespace sap::numerics
