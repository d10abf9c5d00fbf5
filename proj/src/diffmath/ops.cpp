#include "posedistill/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace posedistill::diff {

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) {
    s.outer *= shape[i];
  }
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) {
    s.inner *= shape[i];
  }
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) {
      out.push_back(shape[i]);
    }
  }
  return out;
}

void require_same_shape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// dst += s * src over n contiguous elements
inline void axpy(double* __restrict dst, const double* __restrict src, double s, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    dst[j] += s * src[j];
  }
}

void accumulate(Tape& t, std::size_t id, const Tensor& g) {
  auto dst = t.grad(id).data();
  const auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] += src[i];
  }
}

template <typename Forward, typename Derivative>
Var unary(Var a, const char* op, Forward f, Derivative d) {
  Tape& t = a.tape();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = f(x[i]);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(y), {ia},
                  [ia, d](Tape& tp, std::size_t self) {
                    const Tensor& xv = tp.value(ia);
                    const Tensor& yv = tp.value(self);
                    const Tensor& g = tp.grad(self);
                    auto gx = tp.grad(ia).data();
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      gx[i] += g[i] * d(xv[i], yv[i]);
                    }
                  },
                  op);
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] += bv[i];
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(y), {ia, ib},
                         [ia, ib](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) accumulate(t, ia, g);
                           if (t.requires_grad(ib)) accumulate(t, ib, g);
                         },
                         "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] -= bv[i];
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(y), {ia, ib},
                         [ia, ib](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) accumulate(t, ia, g);
                           if (t.requires_grad(ib)) {
                             auto gb = t.grad(ib).data();
                             for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                           }
                         },
                         "sub");
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor y = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] *= bv[i];
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(y), {ia, ib},
                         [ia, ib](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           const Tensor& av = t.value(ia);
                           const Tensor& bv2 = t.value(ib);
                           if (t.requires_grad(ia)) {
                             auto ga = t.grad(ia).data();
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv2[i];
                           }
                           if (t.requires_grad(ib)) {
                             auto gb = t.grad(ib).data();
                             for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
                           }
                         },
                         "mul");
}

Var add_bias(Var x, Var bias) {
  const Shape& xs = x.shape();
  if (bias.value().rank() != 1 || xs.empty() || xs.back() != bias.value().size()) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                     shape_string(xs));
  }
  const std::size_t f = xs.back();
  const std::size_t rows = x.value().size() / f;
  Tensor y = x.value();
  const auto bv = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = y.data().data() + r * f;
    for (std::size_t j = 0; j < f; ++j) row[j] += bv[j];
  }
  const std::size_t ix = x.id();
  const std::size_t ib = bias.id();
  return x.tape().record(std::move(y), {ix, ib},
                         [ix, ib, rows, f](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ix)) accumulate(t, ix, g);
                           if (t.requires_grad(ib)) {
                             auto gb = t.grad(ib).data();
                             for (std::size_t r = 0; r < rows; ++r) {
                               axpy(gb.data(), g.data().data() + r * f, 1.0, f);
                             }
                           }
                         },
                         "add_bias");
}

Var scale(Var a, double s) {
  return unary(
      a, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_string(av.shape()) + " by " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0);
  const std::size_t k = av.dim(1);
  const std::size_t n = bv.dim(1);
  Tensor y(Shape{m, n}, 0.0);
  const double* ap = av.data().data();
  const double* bp = bv.data().data();
  double* yp = y.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ap[i * k + p];
      if (s != 0.0) {
        axpy(yp + i * n, bp + p * n, s, n);
      }
    }
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(
      std::move(y), {ia, ib},
      [ia, ib, m, k, n](Tape& t, std::size_t self) {
        const double* g = t.grad(self).data().data();
        const double* a_val = t.value(ia).data().data();
        const double* b_val = t.value(ib).data().data();
        if (t.requires_grad(ia)) {
          // ga = g * b^T, computed row-wise against a transposed copy of b
          std::vector<double> bt(n * k);
          for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b_val[p * n + j];
          }
          double* ga = t.grad(ia).data().data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const double s = g[i * n + j];
              if (s != 0.0) axpy(ga + i * k, bt.data() + j * k, s, k);
            }
          }
        }
        if (t.requires_grad(ib)) {
          double* gb = t.grad(ib).data().data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double s = a_val[i * k + p];
              if (s != 0.0) axpy(gb + p * n, g + i * n, s, n);
            }
          }
        }
      },
      "matmul");
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) {
    throw ShapeError("transpose: expected rank 2, got " + shape_string(av.shape()));
  }
  const std::size_t r = av.dim(0);
  const std::size_t c = av.dim(1);
  Tensor y(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = av[i * c + j];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia},
                         [ia, r, c](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           auto ga = t.grad(ia).data();
                           for (std::size_t i = 0; i < r; ++i) {
                             for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                           }
                         },
                         "transpose");
}

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  Tensor y = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia},
                         [ia](Tape& t, std::size_t self) {
                           auto ga = t.grad(ia).data();
                           const auto g = t.grad(self).data();
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                         },
                         "reshape");
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) {
    throw ShapeError("concat: no inputs");
  }
  const Shape& first = parts[0].shape();
  const AxisSplit base = split_axis(first, axis, "concat");
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) {
      throw ShapeError("concat: rank mismatch");
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat: shape " + shape_string(s) + " incompatible with " +
                         shape_string(first));
      }
    }
    widths.push_back(s[axis] * base.inner);
    ids.push_back(p.id());
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const std::size_t row = total * base.inner;
  Tensor y(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].value().data();
    for (std::size_t o = 0; o < base.outer; ++o) {
      std::copy_n(src.data() + o * widths[k], widths[k], y.data().data() + o * row + offset);
    }
    offset += widths[k];
  }
  const std::size_t outer = base.outer;
  return parts[0].tape().record(
      std::move(y), ids,
      [ids, widths, outer, row](Tape& t, std::size_t self) {
        const double* g = t.grad(self).data().data();
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            double* gk = t.grad(ids[k]).data().data();
            for (std::size_t o = 0; o < outer; ++o) {
              axpy(gk + o * widths[k], g + o * row + off, 1.0, widths[k]);
            }
          }
          off += widths[k];
        }
      },
      "concat");
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  const AxisSplit sp = split_axis(s, axis, "slice");
  if (begin >= end || end > sp.n) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for axis of size " + std::to_string(sp.n));
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t width = (end - begin) * sp.inner;
  const std::size_t row = sp.n * sp.inner;
  const std::size_t off = begin * sp.inner;
  Tensor y(out_shape);
  const double* src = a.value().data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src + o * row + off, width, y.data().data() + o * width);
  }
  const std::size_t ia = a.id();
  const std::size_t outer = sp.outer;
  return a.tape().record(std::move(y), {ia},
                         [ia, outer, width, row, off](Tape& t, std::size_t self) {
                           const double* g = t.grad(self).data().data();
                           double* ga = t.grad(ia).data().data();
                           for (std::size_t o = 0; o < outer; ++o) {
                             axpy(ga + o * row + off, g + o * width, 1.0, width);
                           }
                         },
                         "slice");
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, "sigmoid",
      [](double v) {
        if (v >= 0.0) {
          return 1.0 / (1.0 + std::exp(-v));
        }
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) {
      throw NumericalError("log: non-positive input");
    }
  }
  return unary(
      a, "log", [](double v) { return std::log(v); }, [](double x, double) { return 1.0 / x; });
}

Var smooth_l1(Var a) {
  return unary(
      a, "smooth_l1",
      [](double v) {
        const double av = std::abs(v);
        return av < 1.0 ? 0.5 * v * v : av - 0.5;
      },
      [](double x, double) {
        if (std::abs(x) < 1.0) return x;
        return x > 0.0 ? 1.0 : -1.0;
      });
}

Var softmax(Var a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis, "softmax");
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, x[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const double e = std::exp(x[base + k * sp.inner] - mx);
        y[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) y[base + k * sp.inner] /= z;
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia},
                         [ia, sp](Tape& t, std::size_t self) {
                           const Tensor& yv = t.value(self);
                           const Tensor& g = t.grad(self);
                           auto gx = t.grad(ia).data();
                           for (std::size_t o = 0; o < sp.outer; ++o) {
                             for (std::size_t in = 0; in < sp.inner; ++in) {
                               const std::size_t base = o * sp.n * sp.inner + in;
                               double dot = 0.0;
                               for (std::size_t k = 0; k < sp.n; ++k) {
                                 const std::size_t i = base + k * sp.inner;
                                 dot += g[i] * yv[i];
                               }
                               for (std::size_t k = 0; k < sp.n; ++k) {
                                 const std::size_t i = base + k * sp.inner;
                                 gx[i] += yv[i] * (g[i] - dot);
                               }
                             }
                           }
                         },
                         "softmax");
}

Var log_softmax(Var a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis, "log_softmax");
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, x[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) z += std::exp(x[base + k * sp.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < sp.n; ++k) {
        y[base + k * sp.inner] = x[base + k * sp.inner] - lse;
      }
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia},
                         [ia, sp](Tape& t, std::size_t self) {
                           const Tensor& yv = t.value(self);
                           const Tensor& g = t.grad(self);
                           auto gx = t.grad(ia).data();
                           for (std::size_t o = 0; o < sp.outer; ++o) {
                             for (std::size_t in = 0; in < sp.inner; ++in) {
                               const std::size_t base = o * sp.n * sp.inner + in;
                               double gs = 0.0;
                               for (std::size_t k = 0; k < sp.n; ++k) gs += g[base + k * sp.inner];
                               for (std::size_t k = 0; k < sp.n; ++k) {
                                 const std::size_t i = base + k * sp.inner;
                                 gx[i] += g[i] - std::exp(yv[i]) * gs;
                               }
                             }
                           }
                         },
                         "log_softmax");
}

Var max_over_axis(Var a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis, "max_over_axis");
  const Tensor& x = a.value();
  Shape out_shape = drop_axis(x.shape(), axis);
  Tensor y(out_shape);
  std::vector<std::size_t> argmax(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const std::size_t base = o * sp.n * sp.inner;
    for (std::size_t in = 0; in < sp.inner; ++in) {
      std::size_t best = base + in;
      for (std::size_t k = 1; k < sp.n; ++k) {
        const std::size_t i = base + k * sp.inner + in;
        if (x[i] > x[best]) best = i;
      }
      y[o * sp.inner + in] = x[best];
      argmax[o * sp.inner + in] = best;
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia},
                         [ia, argmax = std::move(argmax)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           auto gx = t.grad(ia).data();
                           for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
                         },
                         "max_over_axis");
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {ia},
                         [ia](Tape& t, std::size_t self) {
                           const double g = t.grad(self)[0];
                           for (double& v : t.grad(ia).data()) v += g;
                         },
                         "sum");
}

Var sum(Var a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis, "sum");
  const Tensor& x = a.value();
  Tensor y(drop_axis(x.shape(), axis), 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.n; ++k) {
      axpy(y.data().data() + o * sp.inner, x.data().data() + (o * sp.n + k) * sp.inner, 1.0,
           sp.inner);
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia},
                         [ia, sp](Tape& t, std::size_t self) {
                           const double* g = t.grad(self).data().data();
                           double* gx = t.grad(ia).data().data();
                           for (std::size_t o = 0; o < sp.outer; ++o) {
                             for (std::size_t k = 0; k < sp.n; ++k) {
                               axpy(gx + (o * sp.n + k) * sp.inner, g + o * sp.inner, 1.0,
                                    sp.inner);
                             }
                           }
                         },
                         "sum");
}

Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var l2_normalize(Var a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis, "l2_normalize");
  const Tensor& x = a.value();
  Tensor y(x.shape());
  std::vector<double> norms(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double ss = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) ss += x[base + k * sp.inner] * x[base + k * sp.inner];
      const double nrm = std::sqrt(ss);
      if (!(nrm > 0.0)) {
        throw NumericalError("l2_normalize: zero-norm slice");
      }
      norms[o * sp.inner + in] = nrm;
      for (std::size_t k = 0; k < sp.n; ++k) y[base + k * sp.inner] = x[base + k * sp.inner] / nrm;
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia},
                         [ia, sp, norms = std::move(norms)](Tape& t, std::size_t self) {
                           const Tensor& yv = t.value(self);
                           const Tensor& g = t.grad(self);
                           auto gx = t.grad(ia).data();
                           for (std::size_t o = 0; o < sp.outer; ++o) {
                             for (std::size_t in = 0; in < sp.inner; ++in) {
                               const std::size_t base = o * sp.n * sp.inner + in;
                               double dot = 0.0;
                               for (std::size_t k = 0; k < sp.n; ++k) {
                                 dot += yv[base + k * sp.inner] * g[base + k * sp.inner];
                               }
                               const double nrm = norms[o * sp.inner + in];
                               for (std::size_t k = 0; k < sp.n; ++k) {
                                 const std::size_t i = base + k * sp.inner;
                                 gx[i] += (g[i] - yv[i] * dot) / nrm;
                               }
                             }
                           }
                         },
                         "l2_normalize");
}

Var cosine_similarity(Var a, Var b) {
  require_same_shape(a, b, "cosine_similarity");
  const Shape& s = a.shape();
  if (s.empty()) {
    throw ShapeError("cosine_similarity: needs at least rank 1");
  }
  const std::size_t n = s.back();
  const std::size_t rows = a.value().size() / n;
  Shape out_shape(s.begin(), s.end() - 1);
  Tensor y(out_shape);
  std::vector<double> na(rows), nb(rows);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double x = av[r * n + k];
      const double z = bv[r * n + k];
      dot += x * z;
      sa += x * x;
      sb += z * z;
    }
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    if (!(na[r] > 0.0) || !(nb[r] > 0.0)) {
      throw NumericalError("cosine_similarity: zero-norm row");
    }
    y[r] = dot / (na[r] * nb[r]);
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(
      std::move(y), {ia, ib},
      [ia, ib, n, rows, na = std::move(na), nb = std::move(nb)](Tape& t, std::size_t self) {
        const Tensor& c = t.value(self);
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ia);
        const Tensor& z = t.value(ib);
        for (std::size_t r = 0; r < rows; ++r) {
          if (t.requires_grad(ia)) {
            auto ga = t.grad(ia).data();
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t i = r * n + k;
              ga[i] += g[r] * (z[i] / (na[r] * nb[r]) - c[r] * x[i] / (na[r] * na[r]));
            }
          }
          if (t.requires_grad(ib)) {
            auto gb = t.grad(ib).data();
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t i = r * n + k;
              gb[i] += g[r] * (x[i] / (na[r] * nb[r]) - c[r] * z[i] / (nb[r] * nb[r]));
            }
          }
        }
      },
      "cosine_similarity");
}

Var gather(Var a, std::span<const std::size_t> index) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || x.dim(0) != index.size()) {
    throw ShapeError("gather: index of length " + std::to_string(index.size()) +
                     " does not match " + shape_string(x.shape()));
  }
  const std::size_t cols = x.dim(1);
  std::vector<std::size_t> flat(index.size());
  Tensor y(Shape{index.size()});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= cols) {
      throw ShapeError("gather: index " + std::to_string(index[r]) + " out of range");
    }
    flat[r] = r * cols + index[r];
    y[r] = x[flat[r]];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia},
                         [ia, flat = std::move(flat)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           auto gx = t.grad(ia).data();
                           for (std::size_t r = 0; r < flat.size(); ++r) gx[flat[r]] += g[r];
                         },
                         "gather");
}

Var batch_norm(Var x, Var gamma, Var beta, const BatchNormState& state, bool training) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) {
    throw ShapeError("batch_norm: expected [B, F], got " + shape_string(xv.shape()));
  }
  const std::size_t b = xv.dim(0);
  const std::size_t f = xv.dim(1);
  if (gamma.value().shape() != Shape{f} || beta.value().shape() != Shape{f}) {
    throw ShapeError("batch_norm: affine parameters do not match feature width " +
                     std::to_string(f));
  }
  if (state.running_mean == nullptr || state.running_var == nullptr ||
      state.running_mean->shape() != Shape{f} || state.running_var->shape() != Shape{f}) {
    throw ShapeError("batch_norm: running statistics missing or mis-shaped");
  }
  std::vector<double> mu(f, 0.0), var(f, 0.0);
  if (training) {
    for (std::size_t r = 0; r < b; ++r) axpy(mu.data(), xv.data().data() + r * f, 1.0, f);
    for (double& m : mu) m /= static_cast<double>(b);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t j = 0; j < f; ++j) {
        const double d = xv[r * f + j] - mu[j];
        var[j] += d * d;
      }
    }
    for (double& v : var) v /= static_cast<double>(b);
    const double unbias = b > 1 ? static_cast<double>(b) / static_cast<double>(b - 1) : 1.0;
    auto rm = state.running_mean->data();
    auto rv = state.running_var->data();
    for (std::size_t j = 0; j < f; ++j) {
      rm[j] = (1.0 - state.momentum) * rm[j] + state.momentum * mu[j];
      rv[j] = (1.0 - state.momentum) * rv[j] + state.momentum * var[j] * unbias;
    }
  } else {
    for (std::size_t j = 0; j < f; ++j) {
      mu[j] = (*state.running_mean)[j];
      var[j] = (*state.running_var)[j];
    }
  }
  std::vector<double> inv_std(f);
  for (std::size_t j = 0; j < f; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);
  Tensor xhat(xv.shape());
  Tensor y(xv.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < f; ++j) {
      const std::size_t i = r * f + j;
      xhat[i] = (xv[i] - mu[j]) * inv_std[j];
      y[i] = gv[j] * xhat[i] + bv[j];
    }
  }
  const std::size_t ix = x.id();
  const std::size_t ig = gamma.id();
  const std::size_t ib = beta.id();
  return x.tape().record(
      std::move(y), {ix, ig, ib},
      [ix, ig, ib, b, f, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& gam = t.value(ig);
        std::vector<double> gsum(f, 0.0), gxhat_sum(f, 0.0);
        for (std::size_t r = 0; r < b; ++r) {
          for (std::size_t j = 0; j < f; ++j) {
            const std::size_t i = r * f + j;
            gsum[j] += g[i];
            gxhat_sum[j] += g[i] * xhat[i];
          }
        }
        if (t.requires_grad(ig)) {
          auto gg = t.grad(ig).data();
          for (std::size_t j = 0; j < f; ++j) gg[j] += gxhat_sum[j];
        }
        if (t.requires_grad(ib)) {
          auto gb = t.grad(ib).data();
          for (std::size_t j = 0; j < f; ++j) gb[j] += gsum[j];
        }
        if (t.requires_grad(ix)) {
          auto gx = t.grad(ix).data();
          const double inv_b = 1.0 / static_cast<double>(b);
          for (std::size_t r = 0; r < b; ++r) {
            for (std::size_t j = 0; j < f; ++j) {
              const std::size_t i = r * f + j;
              if (training) {
                gx[i] += gam[j] * inv_std[j] * inv_b *
                         (static_cast<double>(b) * g[i] - gsum[j] - xhat[i] * gxhat_sum[j]);
              } else {
                gx[i] += gam[j] * inv_std[j] * g[i];
              }
            }
          }
        }
      },
      "batch_norm");
}

}  // namespace posedistill::diff
