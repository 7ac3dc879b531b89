// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mdmoe/kernels.hpp"

namespace mdmoe {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
Var Graph<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var Graph<T>::parameter(Parameter<T>& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, record_});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Tensor<T>& Graph<T>::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
Var Graph<T>::emit(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return emit(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

template <class T>
Var Graph<T>::emit(Tensor<T> value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (record_) {
    for (Var in : inputs) needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, nullptr, needs});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
void Graph<T>::backward(Var root) {
  if (!record_) throw std::logic_error("backward() on a graph built with record=false");
  if (value(root).size() != 1) {
    throw ShapeError("backward() needs a single-valued root, got " + shape_string(shape(root)));
  }
  grad(root)[0] = T(1);
  for (std::int64_t id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, Var{static_cast<std::uint32_t>(id)});
    if (n.param != nullptr) {
      auto& dst = n.param->grad;
      if (dst.shape() != n.grad.shape()) dst = Tensor<T>(n.grad.shape());
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
  }
}

template <class T>
void softmax_inplace(std::span<T> row) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : row) mx = std::max(mx, v);
  T total = 0;
  for (T& v : row) {
    v = std::exp(v - mx);
    total += v;
  }
  const T inv = T(1) / total;
  for (T& v : row) v *= inv;
}

template <class T>
T logsumexp_of(std::span<const T> row) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : row) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  T total = 0;
  for (T v : row) total += std::exp(v - mx);
  return mx + std::log(total);
}

namespace ops {
namespace {

// The message is only built when the check fails.
#define MDMOE_REQUIRE(ok, what)          \
  do {                                   \
    if (!(ok)) throw ShapeError(what);   \
  } while (0)

template <class T>
void require_same_shape(const Graph<T>& g, Var a, Var b, const char* op) {
  MDMOE_REQUIRE(g.shape(a) == g.shape(b), std::string(op) + ": shape mismatch " +
                                        shape_string(g.shape(a)) + " vs " +
                                        shape_string(g.shape(b)));
}

template <class T>
void require_matrix(const Graph<T>& g, Var a, const char* op) {
  MDMOE_REQUIRE(g.shape(a).size() == 2, std::string(op) + ": expected a 2-D operand, got " +
                                      shape_string(g.shape(a)));
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  MDMOE_REQUIRE(axis < s.size(), std::string(op) + ": axis " + std::to_string(axis) +
                               " out of range for " + shape_string(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
  require_matrix(g, a, "matmul");
  require_matrix(g, b, "matmul");
  const std::size_t m = g.shape(a)[0], k = g.shape(a)[1], n = g.shape(b)[1];
  MDMOE_REQUIRE(g.shape(b)[0] == k, "matmul: inner extents differ " + shape_string(g.shape(a)) + " x " +
                                  shape_string(g.shape(b)));
  Tensor<T> out({m, n});
  kernels::gemm_nn(m, n, k, g.value(a).data(), g.value(b).data(), out.data());
  return g.emit(std::move(out), {a, b}, [a, b, m, n, k](Graph<T>& g, Var self) {
    const T* dc = g.grad(self).data();
    if (g.requires_grad(a)) kernels::gemm_nt(m, k, n, dc, g.value(b).data(), g.grad(a).data());
    if (g.requires_grad(b)) kernels::gemm_tn(k, n, m, g.value(a).data(), dc, g.grad(b).data());
  });
}

template <class T>
Var matmul_nt(Graph<T>& g, Var a, Var b) {
  require_matrix(g, a, "matmul_nt");
  require_matrix(g, b, "matmul_nt");
  const std::size_t m = g.shape(a)[0], k = g.shape(a)[1], n = g.shape(b)[0];
  MDMOE_REQUIRE(g.shape(b)[1] == k, "matmul_nt: inner extents differ " + shape_string(g.shape(a)) +
                                  " x " + shape_string(g.shape(b)) + "^T");
  Tensor<T> out({m, n});
  kernels::gemm_nt(m, n, k, g.value(a).data(), g.value(b).data(), out.data());
  return g.emit(std::move(out), {a, b}, [a, b, m, n, k](Graph<T>& g, Var self) {
    const T* dc = g.grad(self).data();
    if (g.requires_grad(a)) kernels::gemm_nn(m, k, n, dc, g.value(b).data(), g.grad(a).data());
    if (g.requires_grad(b)) kernels::gemm_tn(n, k, m, dc, g.value(a).data(), g.grad(b).data());
  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  require_same_shape(g, a, b, "add");
  Tensor<T> out = g.value(a);
  const auto& bv = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.emit(std::move(out), {a, b}, [a, b](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    for (Var in : {a, b}) {
      if (!g.requires_grad(in)) continue;
      auto& gi = g.grad(in);
      for (std::size_t i = 0; i < d.size(); ++i) gi[i] += d[i];
    }
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  require_same_shape(g, a, b, "mul");
  Tensor<T> out = g.value(a);
  const auto& bv = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.emit(std::move(out), {a, b}, [a, b](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    if (g.requires_grad(a)) {
      auto& ga = g.grad(a);
      const auto& bv = g.value(b);
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto& gb = g.grad(b);
      const auto& av = g.value(a);
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i] * av[i];
    }
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, T c) {
  Tensor<T> out = g.value(a);
  for (T& v : out.values()) v *= c;
  return g.emit(std::move(out), {a}, [a, c](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) ga[i] += c * d[i];
  });
}

template <class T>
Var square(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (T& v : out.values()) v *= v;
  return g.emit(std::move(out), {a}, [a](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    const auto& av = g.value(a);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) ga[i] += T(2) * av[i] * d[i];
  });
}

template <class T>
Var silu(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (T& v : out.values()) v = v / (T(1) + std::exp(-v));
  return g.emit(std::move(out), {a}, [a](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    const auto& av = g.value(a);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T x = av[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      ga[i] += d[i] * s * (T(1) + x * (T(1) - s));
    }
  });
}

template <class T>
Var sum(Graph<T>& g, Var a) {
  T total = 0;
  for (T v : g.value(a).values()) total += v;
  return g.emit(Tensor<T>({1}, {total}), {a}, [a](Graph<T>& g, Var self) {
    const T d = g.grad(self)[0];
    for (T& v : g.grad(a).values()) v += d;
  });
}

template <class T>
Var mean(Graph<T>& g, Var a) {
  const T n = static_cast<T>(g.value(a).size());
  return scale(g, sum(g, a), T(1) / n);
}

template <class T>
Var softmax(Graph<T>& g, Var x, std::size_t axis) {
  const AxisSplit s = split_axis(g.shape(x), axis, "softmax");
  Tensor<T> out = g.value(x);
  std::vector<T> line(s.n);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      T* base = out.data() + o * s.n * s.inner + i;
      for (std::size_t j = 0; j < s.n; ++j) line[j] = base[j * s.inner];
      softmax_inplace(std::span<T>(line));
      for (std::size_t j = 0; j < s.n; ++j) base[j * s.inner] = line[j];
    }
  }
  return g.emit(std::move(out), {x}, [x, s](Graph<T>& g, Var self) {
    const auto& y = g.value(self);
    const auto& d = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        T dotp = 0;
        for (std::size_t j = 0; j < s.n; ++j) dotp += y[base + j * s.inner] * d[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += y[idx] * (d[idx] - dotp);
        }
      }
    }
  });
}

template <class T>
Var logsumexp(Graph<T>& g, Var x, std::size_t axis) {
  const AxisSplit s = split_axis(g.shape(x), axis, "logsumexp");
  Shape out_shape;
  for (std::size_t i = 0; i < g.shape(x).size(); ++i) {
    if (i != axis) out_shape.push_back(g.shape(x)[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);
  const auto& xv = g.value(x);
  std::vector<T> line(s.n);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const T* base = xv.data() + o * s.n * s.inner + i;
      for (std::size_t j = 0; j < s.n; ++j) line[j] = base[j * s.inner];
      out[o * s.inner + i] = logsumexp_of(std::span<const T>(line));
    }
  }
  return g.emit(std::move(out), {x}, [x, s](Graph<T>& g, Var self) {
    const auto& xv = g.value(x);
    const auto& lse = g.value(self);
    const auto& d = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t oi = o * s.inner + i;
        const std::size_t base = o * s.n * s.inner + i;
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += d[oi] * std::exp(xv[idx] - lse[oi]);
        }
      }
    }
  });
}

template <class T>
Var rms_norm(Graph<T>& g, Var x, Var gain, T eps) {
  const std::size_t width = g.value(gain).size();
  const auto& xv = g.value(x);
  MDMOE_REQUIRE(width > 0 && xv.size() % width == 0,
          "rms_norm: width " + std::to_string(width) + " does not divide " +
              shape_string(g.shape(x)));
  const std::size_t groups = xv.size() / width;
  Tensor<T> out(g.shape(x));
  std::vector<T> inv_rms(groups);
  const auto& gv = g.value(gain);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* xr = xv.data() + gi * width;
    T ss = 0;
    for (std::size_t j = 0; j < width; ++j) ss += xr[j] * xr[j];
    const T inv = T(1) / std::sqrt(ss / static_cast<T>(width) + eps);
    inv_rms[gi] = inv;
    for (std::size_t j = 0; j < width; ++j) out[gi * width + j] = xr[j] * inv * gv[j];
  }
  return g.emit(std::move(out), {x, gain},
                [x, gain, width, groups, inv_rms = std::move(inv_rms)](Graph<T>& g, Var self) {
                  const auto& xv = g.value(x);
                  const auto& gv = g.value(gain);
                  const auto& d = g.grad(self);
                  const bool want_x = g.requires_grad(x);
                  const bool want_gain = g.requires_grad(gain);
                  std::vector<T> dn(width);
                  for (std::size_t gi = 0; gi < groups; ++gi) {
                    const std::size_t off = gi * width;
                    const T inv = inv_rms[gi];
                    if (want_gain) {
                      auto& gg = g.grad(gain);
                      for (std::size_t j = 0; j < width; ++j) gg[j] += d[off + j] * xv[off + j] * inv;
                    }
                    if (want_x) {
                      T proj = 0;
                      for (std::size_t j = 0; j < width; ++j) {
                        dn[j] = d[off + j] * gv[j];
                        proj += dn[j] * xv[off + j] * inv;
                      }
                      proj /= static_cast<T>(width);
                      auto& gx = g.grad(x);
                      for (std::size_t j = 0; j < width; ++j) {
                        gx[off + j] += (dn[j] - xv[off + j] * inv * proj) * inv;
                      }
                    }
                  }
                });
}

template <class T>
Var rope(Graph<T>& g, Var x, std::span<const std::int64_t> positions, std::size_t head_dim,
         double base) {
  require_matrix(g, x, "rope");
  MDMOE_REQUIRE(head_dim % 2 == 0, "rope: head dimension must be even, got " + std::to_string(head_dim));
  const std::size_t rows = g.shape(x)[0], cols = g.shape(x)[1];
  MDMOE_REQUIRE(cols % head_dim == 0, "rope: head dimension does not divide row width");
  MDMOE_REQUIRE(positions.size() == rows, "rope: one position per row required");
  const std::size_t half = head_dim / 2;
  // Angles as cos/sin tables [rows, half], shared by every head.
  std::vector<T> cosv(rows * half), sinv(rows * half);
  for (std::size_t j = 0; j < half; ++j) {
    const double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
    for (std::size_t r = 0; r < rows; ++r) {
      const double angle = static_cast<double>(positions[r]) * freq;
      cosv[r * half + j] = static_cast<T>(std::cos(angle));
      sinv[r * half + j] = static_cast<T>(std::sin(angle));
    }
  }
  const auto& xv = g.value(x);
  Tensor<T> out(g.shape(x));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c0 = 0; c0 < cols; c0 += head_dim) {
      for (std::size_t j = 0; j < half; ++j) {
        const std::size_t i0 = r * cols + c0 + 2 * j;
        const T c = cosv[r * half + j], s = sinv[r * half + j];
        out[i0] = xv[i0] * c - xv[i0 + 1] * s;
        out[i0 + 1] = xv[i0] * s + xv[i0 + 1] * c;
      }
    }
  }
  return g.emit(std::move(out), {x},
                [x, rows, cols, head_dim, half, cosv = std::move(cosv),
                 sinv = std::move(sinv)](Graph<T>& g, Var self) {
                  const auto& d = g.grad(self);
                  auto& gx = g.grad(x);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c0 = 0; c0 < cols; c0 += head_dim) {
                      for (std::size_t j = 0; j < half; ++j) {
                        const std::size_t i0 = r * cols + c0 + 2 * j;
                        const T c = cosv[r * half + j], s = sinv[r * half + j];
                        gx[i0] += d[i0] * c + d[i0 + 1] * s;
                        gx[i0 + 1] += -d[i0] * s + d[i0 + 1] * c;
                      }
                    }
                  }
                });
}

template <class T>
Var slice_cols(Graph<T>& g, Var x, std::size_t begin, std::size_t end) {
  require_matrix(g, x, "slice_cols");
  const std::size_t rows = g.shape(x)[0], cols = g.shape(x)[1];
  MDMOE_REQUIRE(begin < end && end <= cols, "slice_cols: bad column range");
  const std::size_t w = end - begin;
  Tensor<T> out({rows, w});
  const auto& xv = g.value(x);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data() + r * cols + begin, w, out.data() + r * w);
  }
  return g.emit(std::move(out), {x}, [x, rows, cols, begin, w](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) gx[r * cols + begin + j] += d[r * w + j];
    }
  });
}

template <class T>
Var concat_cols(Graph<T>& g, std::span<const Var> parts) {
  MDMOE_REQUIRE(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = g.shape(parts[0])[0];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    require_matrix(g, p, "concat_cols");
    MDMOE_REQUIRE(g.shape(p)[0] == rows, "concat_cols: row counts differ");
    widths.push_back(g.shape(p)[1]);
    total += widths.back();
  }
  Tensor<T> out({rows, total});
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& pv = g.value(parts[pi]);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * widths[pi], widths[pi], out.data() + r * total + off);
    }
    off += widths[pi];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.emit(std::move(out), parts,
                [inputs, widths, rows, total](Graph<T>& g, Var self) {
                  const auto& d = g.grad(self);
                  std::size_t off = 0;
                  for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
                    if (g.requires_grad(inputs[pi])) {
                      auto& gp = g.grad(inputs[pi]);
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < widths[pi]; ++j) {
                          gp[r * widths[pi] + j] += d[r * total + off + j];
                        }
                      }
                    }
                    off += widths[pi];
                  }
                });
}

template <class T>
Var slice_rows(Graph<T>& g, Var x, std::size_t begin, std::size_t end) {
  require_matrix(g, x, "slice_rows");
  const std::size_t rows = g.shape(x)[0], cols = g.shape(x)[1];
  MDMOE_REQUIRE(begin < end && end <= rows, "slice_rows: bad row range");
  const auto& xv = g.value(x);
  Tensor<T> out({end - begin, cols},
                std::vector<T>(xv.data() + begin * cols, xv.data() + end * cols));
  return g.emit(std::move(out), {x}, [x, begin, cols](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < d.size(); ++i) gx[begin * cols + i] += d[i];
  });
}

template <class T>
Var concat_rows(Graph<T>& g, std::span<const Var> parts) {
  MDMOE_REQUIRE(!parts.empty(), "concat_rows: no inputs");
  const std::size_t cols = g.shape(parts[0]).size() == 2 ? g.shape(parts[0])[1] : 0;
  std::size_t rows = 0;
  for (Var p : parts) {
    require_matrix(g, p, "concat_rows");
    MDMOE_REQUIRE(g.shape(p)[1] == cols, "concat_rows: column counts differ");
    rows += g.shape(p)[0];
  }
  std::vector<T> values;
  values.reserve(rows * cols);
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    offsets.push_back(values.size());
    const auto& pv = g.value(p);
    values.insert(values.end(), pv.values().begin(), pv.values().end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.emit(Tensor<T>({rows, cols}, std::move(values)), parts,
                [inputs, offsets](Graph<T>& g, Var self) {
                  const auto& d = g.grad(self);
                  for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
                    if (!g.requires_grad(inputs[pi])) continue;
                    auto& gp = g.grad(inputs[pi]);
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += d[offsets[pi] + i];
                  }
                });
}

template <class T>
Var gather_rows(Graph<T>& g, Var x, std::span<const std::size_t> rows) {
  const auto& xv = g.value(x);
  const std::size_t cols = xv.cols();
  MDMOE_REQUIRE(!rows.empty(), "gather_rows: empty index list");
  for (std::size_t r : rows) {
    MDMOE_REQUIRE(r < xv.rows(), "gather_rows: row index " + std::to_string(r) + " out of range");
  }
  Tensor<T> out({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(xv.data() + rows[i] * cols, cols, out.data() + i * cols);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return g.emit(std::move(out), {x}, [x, cols, idx = std::move(idx)](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      kernels::axpy(cols, T(1), d.data() + i * cols, gx.data() + idx[i] * cols);
    }
  });
}

template <class T>
Var index_add_rows(Graph<T>& g, Var base, std::span<const std::size_t> rows, Var src) {
  const auto& bv = g.value(base);
  const auto& sv = g.value(src);
  const std::size_t cols = bv.cols();
  MDMOE_REQUIRE(sv.rows() == rows.size() && sv.cols() == cols, "index_add_rows: source shape mismatch");
  for (std::size_t r : rows) MDMOE_REQUIRE(r < bv.rows(), "index_add_rows: row index out of range");
  Tensor<T> out = bv;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    kernels::axpy(cols, T(1), sv.data() + i * cols, out.data() + rows[i] * cols);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return g.emit(std::move(out), {base, src},
                [base, src, cols, idx = std::move(idx)](Graph<T>& g, Var self) {
                  const auto& d = g.grad(self);
                  if (g.requires_grad(base)) {
                    auto& gb = g.grad(base);
                    for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i];
                  }
                  if (g.requires_grad(src)) {
                    auto& gs = g.grad(src);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      kernels::axpy(cols, T(1), d.data() + idx[i] * cols, gs.data() + i * cols);
                    }
                  }
                });
}

template <class T>
Var gather_elements(Graph<T>& g, Var x, std::span<const std::size_t> rows,
                    std::span<const std::size_t> cols) {
  MDMOE_REQUIRE(rows.size() == cols.size() && !rows.empty(), "gather_elements: index lists differ");
  const auto& xv = g.value(x);
  const std::size_t width = xv.cols();
  Tensor<T> out({rows.size()});
  std::vector<std::size_t> flat(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    MDMOE_REQUIRE(rows[i] < xv.rows() && cols[i] < width, "gather_elements: index out of range");
    flat[i] = rows[i] * width + cols[i];
    out[i] = xv[flat[i]];
  }
  return g.emit(std::move(out), {x}, [x, flat = std::move(flat)](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < flat.size(); ++i) gx[flat[i]] += d[i];
  });
}

template <class T>
Var scale_rows(Graph<T>& g, Var x, Var w) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  MDMOE_REQUIRE(wv.size() == xv.rows(), "scale_rows: one weight per row required");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] *= wv[r];
  }
  return g.emit(std::move(out), {x, w}, [x, w, rows, cols](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    if (g.requires_grad(x)) {
      const auto& wv = g.value(w);
      auto& gx = g.grad(x);
      for (std::size_t r = 0; r < rows; ++r) kernels::axpy(cols, wv[r], d.data() + r * cols, gx.data() + r * cols);
    }
    if (g.requires_grad(w)) {
      const auto& xv = g.value(x);
      auto& gw = g.grad(w);
      for (std::size_t r = 0; r < rows; ++r) {
        gw[r] += kernels::dot(cols, d.data() + r * cols, xv.data() + r * cols);
      }
    }
  });
}

template <class T>
Var mean_rows(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<T> out({cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) out[j] += xv[r * cols + j];
  }
  const T inv = T(1) / static_cast<T>(rows);
  for (T& v : out.values()) v *= inv;
  return g.emit(std::move(out), {x}, [x, rows, cols, inv](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += d[j] * inv;
    }
  });
}

template <class T>
Var weighted_sum(Graph<T>& g, Var x, std::span<const T> weights) {
  const auto& xv = g.value(x);
  MDMOE_REQUIRE(weights.size() == xv.size(), "weighted_sum: weight count mismatch");
  T total = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) total += xv[i] * weights[i];
  std::vector<T> w(weights.begin(), weights.end());
  return g.emit(Tensor<T>({1}, {total}), {x}, [x, w = std::move(w)](Graph<T>& g, Var self) {
    const T d = g.grad(self)[0];
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < w.size(); ++i) gx[i] += d * w[i];
  });
}

template <class T>
Var cross_entropy(Graph<T>& g, Var logits, std::span<const std::int32_t> targets,
                  std::span<const T> weights) {
  require_matrix(g, logits, "cross_entropy");
  const std::size_t rows = g.shape(logits)[0], width = g.shape(logits)[1];
  MDMOE_REQUIRE(targets.size() == rows && weights.size() == rows,
          "cross_entropy: one target and weight per row required");
  const auto& lv = g.value(logits);
  T total = 0;
  std::vector<T> lse(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == T(0)) continue;
    MDMOE_REQUIRE(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < width,
            "cross_entropy: target id out of range");
    lse[r] = logsumexp_of(lv.row(r));
    total += weights[r] * (lse[r] - lv.at(r, static_cast<std::size_t>(targets[r])));
  }
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  std::vector<T> w(weights.begin(), weights.end());
  return g.emit(Tensor<T>({1}, {total}), {logits},
                [logits, rows, width, tg = std::move(tg), w = std::move(w),
                 lse = std::move(lse)](Graph<T>& g, Var self) {
                  const T d = g.grad(self)[0];
                  const auto& lv = g.value(logits);
                  auto& gl = g.grad(logits);
                  for (std::size_t r = 0; r < rows; ++r) {
                    if (w[r] == T(0)) continue;
                    const T c = d * w[r];
                    for (std::size_t j = 0; j < width; ++j) {
                      gl[r * width + j] += c * std::exp(lv[r * width + j] - lse[r]);
                    }
                    gl[r * width + static_cast<std::size_t>(tg[r])] -= c;
                  }
                });
}

#define MDMOE_INSTANTIATE_OPS(T)                                                               \
  template Var matmul<T>(Graph<T>&, Var, Var);                                                 \
  template Var matmul_nt<T>(Graph<T>&, Var, Var);                                              \
  template Var add<T>(Graph<T>&, Var, Var);                                                    \
  template Var mul<T>(Graph<T>&, Var, Var);                                                    \
  template Var scale<T>(Graph<T>&, Var, T);                                                    \
  template Var square<T>(Graph<T>&, Var);                                                      \
  template Var silu<T>(Graph<T>&, Var);                                                        \
  template Var sum<T>(Graph<T>&, Var);                                                         \
  template Var mean<T>(Graph<T>&, Var);                                                        \
  template Var softmax<T>(Graph<T>&, Var, std::size_t);                                        \
  template Var logsumexp<T>(Graph<T>&, Var, std::size_t);                                      \
  template Var rms_norm<T>(Graph<T>&, Var, Var, T);                                            \
  template Var rope<T>(Graph<T>&, Var, std::span<const std::int64_t>, std::size_t, double);    \
  template Var slice_cols<T>(Graph<T>&, Var, std::size_t, std::size_t);                        \
  template Var concat_cols<T>(Graph<T>&, std::span<const Var>);                                \
  template Var slice_rows<T>(Graph<T>&, Var, std::size_t, std::size_t);                        \
  template Var concat_rows<T>(Graph<T>&, std::span<const Var>);                                \
  template Var gather_rows<T>(Graph<T>&, Var, std::span<const std::size_t>);                   \
  template Var index_add_rows<T>(Graph<T>&, Var, std::span<const std::size_t>, Var);           \
  template Var gather_elements<T>(Graph<T>&, Var, std::span<const std::size_t>,                \
                                  std::span<const std::size_t>);                               \
  template Var scale_rows<T>(Graph<T>&, Var, Var);                                             \
  template Var mean_rows<T>(Graph<T>&, Var);                                                   \
  template Var weighted_sum<T>(Graph<T>&, Var, std::span<const T>);                            \
  template Var cross_entropy<T>(Graph<T>&, Var, std::span<const std::int32_t>, std::span<const T>);
MDMOE_INSTANTIATE_OPS(float)
MDMOE_INSTANTIATE_OPS(double)
#undef MDMOE_INSTANTIATE_OPS

}  // namespace ops

template class Graph<float>;
template class Graph<double>;
template void softmax_inplace<float>(std::span<float>);
template void softmax_inplace<double>(std::span<double>);
template float logsumexp_of<float>(std::span<const float>);
template double logsumexp_of<double>(std::span<const double>);

}  // namespace mdmoe
