#include "aliad/diffcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aliad/error.hpp"

namespace aliad::diff {
namespace {

struct Broadcast {
  Shape out;
  std::vector<std::size_t> sa, sb;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast plan(const Shape& a, const Shape& b) {
  const std::size_t nd = std::max(a.size(), b.size());
  Broadcast p;
  p.out.assign(nd, 1);
  p.sa.assign(nd, 0);
  p.sb.assign(nd, 0);
  const auto sta = contiguous_strides(a);
  const auto stb = contiguous_strides(b);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::size_t da = i + a.size() >= nd ? a[i + a.size() - nd] : 1;
    const std::size_t db = i + b.size() >= nd ? b[i + b.size() - nd] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[i] = std::max(da, db);
    if (da != 1) p.sa[i] = sta[i + a.size() - nd];
    if (db != 1) p.sb[i] = stb[i + b.size() - nd];
  }
  return p;
}

template <class F>
void for_each_bcast(const Broadcast& p, F&& f) {
  const std::size_t nd = p.out.size();
  if (nd == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  if (numel_of(p.out) == 0) return;
  std::vector<std::size_t> idx(nd, 0);
  std::size_t o = 0, ia = 0, ib = 0;
  const std::size_t inner = p.out[nd - 1], sai = p.sa[nd - 1], sbi = p.sb[nd - 1];
  while (true) {
    for (std::size_t k = 0; k < inner; ++k) f(o + k, ia + k * sai, ib + k * sbi);
    o += inner;
    std::ptrdiff_t d = static_cast<std::ptrdiff_t>(nd) - 2;
    for (; d >= 0; --d) {
      ++idx[d];
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.sa[d] * p.out[d];
      ib -= p.sb[d] * p.out[d];
      idx[d] = 0;
    }
    if (d < 0) break;
  }
}

// (outer, n, inner) view of a reduction/softmax axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

bool needs(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

template <class Fwd, class Deriv>
Tensor unary(const Tensor& t, const char* op, Fwd fwd, Deriv deriv) {
  const auto in = t.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::make(t.shape(), std::move(out), {t}, op, [deriv](Node& self) {
    auto& x = *self.parents[0];
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * deriv(x.value[i], self.value[i]);
  });
}

}  // namespace

Tensor stop_gradient(const Tensor& t) {
  return Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), false);
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (numel_of(shape) != t.numel()) {
    throw ShapeError("cannot reshape " + shape_str(t.shape()) + " to " + shape_str(shape));
  }
  return Tensor::make(std::move(shape), std::vector<double>(t.values().begin(), t.values().end()), {t}, "reshape",
                      [](Node& self) {
                        auto& gx = self.parents[0]->grad_buffer();
                        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
                      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    const auto av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return Tensor::make(a.shape(), std::move(out), {a, b}, "add", [](Node& self) {
      for (std::size_t p = 0; p < 2; ++p) {
        if (!needs(self, p)) continue;
        auto& g = self.parents[p]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  auto pl = plan(a.shape(), b.shape());
  std::vector<double> out(numel_of(pl.out));
  const auto av = a.values(), bv = b.values();
  for_each_bcast(pl, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] + bv[ib]; });
  Shape shape = pl.out;
  return Tensor::make(std::move(shape), std::move(out), {a, b}, "add", [pl](Node& self) {
    double* ga = needs(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
    double* gb = needs(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
    for_each_bcast(pl, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += self.grad[o];
      if (gb) gb[ib] += self.grad[o];
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  auto pl = plan(a.shape(), b.shape());
  std::vector<double> out(numel_of(pl.out));
  const auto av = a.values(), bv = b.values();
  for_each_bcast(pl, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] * bv[ib]; });
  Shape shape = pl.out;
  return Tensor::make(std::move(shape), std::move(out), {a, b}, "mul", [pl](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    double* ga = needs(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
    double* gb = needs(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
    for_each_bcast(pl, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += self.grad[o] * bv[ib];
      if (gb) gb[ib] += self.grad[o] * av[ia];
    });
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto pl = plan(a.shape(), b.shape());
  std::vector<double> out(numel_of(pl.out));
  const auto av = a.values(), bv = b.values();
  for_each_bcast(pl, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] / bv[ib]; });
  Shape shape = pl.out;
  return Tensor::make(std::move(shape), std::move(out), {a, b}, "div", [pl](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    double* ga = needs(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
    double* gb = needs(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
    for_each_bcast(pl, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += self.grad[o] / bv[ib];
      if (gb) gb[ib] -= self.grad[o] * av[ia] / (bv[ib] * bv[ib]);
    });
  });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(a, "mul_scalar", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor exp(const Tensor& t) {
  return unary(t, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& t) {
  return unary(
      t, "log", [](double x) { return std::log(std::max(x, kLogFloor)); },
      [](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
}

Tensor sqrt(const Tensor& t) {
  return unary(t, "sqrt", [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor pow(const Tensor& t, double p) {
  return unary(
      t, "pow", [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

Tensor relu(const Tensor& t) {
  // NaN passes through so divergence is not silently masked.
  return unary(t, "relu", [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& t) {
  return unary(
      t, "softplus", [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor normal_cdf(const Tensor& t) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      t, "normal_cdf", [](double x) { return 0.5 * std::erfc(-x * inv_sqrt2); },
      [](double x, double) { return inv_sqrt2pi * std::exp(-0.5 * x * x); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw ShapeError("matmul shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t n = a.size(0), k = a.size(1), m = b.size(1);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return Tensor::make({n, m}, std::move(out), {a, b}, "matmul", [n, k, m](Node& self) {
    const double* g = self.grad.data();
    const double* av = self.parents[0]->value.data();
    const double* bv = self.parents[1]->value.data();
    if (needs(self, 0)) {
      double* ga = self.parents[0]->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = bv + p * m;
          const double* grow = g + i * m;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (needs(self, 1)) {
      double* gb = self.parents[1]->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = gb + p * m;
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.dim() != 2) throw ShapeError("transpose expects a 2-D tensor, got " + shape_str(a.shape()));
  const std::size_t r = a.size(0), c = a.size(1);
  const auto av = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return Tensor::make({c, r}, std::move(out), {a}, "transpose", [r, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
  if (x.dim() != 3 || w.dim() != 3 || x.size(1) != w.size(1)) {
    throw ShapeError("conv1d shapes " + shape_str(x.shape()) + " * " + shape_str(w.shape()));
  }
  if (stride == 0) throw ShapeError("conv1d stride must be positive");
  const std::size_t B = x.size(0), Cin = x.size(1), T = x.size(2);
  const std::size_t Cout = w.size(0), K = w.size(2);
  if (T + 2 * pad < K) throw ShapeError("conv1d kernel longer than padded input");
  const std::size_t To = (T + 2 * pad - K) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.dim() != 1 || bias.size(0) != Cout)) throw ShapeError("conv1d bias shape");

  // Output positions t with 0 <= t*stride + k - pad < T.
  auto t_range = [=](std::size_t k) {
    std::size_t lo = 0;
    if (k < pad) lo = (pad - k + stride - 1) / stride;
    std::ptrdiff_t hi_num = static_cast<std::ptrdiff_t>(T) - 1 + static_cast<std::ptrdiff_t>(pad) -
                            static_cast<std::ptrdiff_t>(k);
    std::size_t hi = hi_num < 0 ? 0 : std::min<std::size_t>(To, static_cast<std::size_t>(hi_num) / stride + 1);
    return std::pair<std::size_t, std::size_t>{lo, hi};
  };

  const double* xv = x.values().data();
  const double* wv = w.values().data();
  std::vector<double> out(B * Cout * To, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Cout; ++co) {
      double* orow = out.data() + (b * Cout + co) * To;
      if (has_bias) std::fill(orow, orow + To, bias.values()[co]);
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const double* xrow = xv + (b * Cin + ci) * T;
        const double* wk = wv + (co * Cin + ci) * K;
        for (std::size_t k = 0; k < K; ++k) {
          const auto [lo, hi] = t_range(k);
          const double wt = wk[k];
          for (std::size_t t = lo; t < hi; ++t) orow[t] += wt * xrow[t * stride + k - pad];
        }
      }
    }
  }
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make({B, Cout, To}, std::move(out), std::move(inputs), "conv1d",
                      [=](Node& self) {
                        const double* g = self.grad.data();
                        const double* xv = self.parents[0]->value.data();
                        const double* wv = self.parents[1]->value.data();
                        double* gx = needs(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
                        double* gw = needs(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
                        double* gbias =
                            has_bias && needs(self, 2) ? self.parents[2]->grad_buffer().data() : nullptr;
                        for (std::size_t b = 0; b < B; ++b) {
                          for (std::size_t co = 0; co < Cout; ++co) {
                            const double* grow = g + (b * Cout + co) * To;
                            if (gbias) {
                              double acc = 0.0;
                              for (std::size_t t = 0; t < To; ++t) acc += grow[t];
                              gbias[co] += acc;
                            }
                            for (std::size_t ci = 0; ci < Cin; ++ci) {
                              const std::size_t xoff = (b * Cin + ci) * T;
                              const std::size_t woff = (co * Cin + ci) * K;
                              for (std::size_t k = 0; k < K; ++k) {
                                const auto [lo, hi] = t_range(k);
                                if (gw) {
                                  double acc = 0.0;
                                  for (std::size_t t = lo; t < hi; ++t) acc += grow[t] * xv[xoff + t * stride + k - pad];
                                  gw[woff + k] += acc;
                                }
                                if (gx) {
                                  const double wt = wv[woff + k];
                                  for (std::size_t t = lo; t < hi; ++t) gx[xoff + t * stride + k - pad] += grow[t] * wt;
                                }
                              }
                            }
                          }
                        }
                      });
}

Tensor softmax(const Tensor& t, std::size_t axis) {
  const auto s = split_axis(t.shape(), axis);
  const auto in = t.values();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.inner; ++r) {
      const std::size_t base = o * s.n * s.inner + r;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) mx = std::max(mx, in[base + i * s.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) z += (out[base + i * s.inner] = std::exp(in[base + i * s.inner] - mx));
      for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] /= z;
    }
  }
  return Tensor::make(t.shape(), std::move(out), {t}, "softmax", [s](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t r = 0; r < s.inner; ++r) {
        const std::size_t base = o * s.n * s.inner + r;
        double dot = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) dot += self.grad[base + i * s.inner] * y[base + i * s.inner];
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t at = base + i * s.inner;
          gx[at] += y[at] * (self.grad[at] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& t, std::size_t axis) {
  const auto s = split_axis(t.shape(), axis);
  const auto in = t.values();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.inner; ++r) {
      const std::size_t base = o * s.n * s.inner + r;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) mx = std::max(mx, in[base + i * s.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) z += std::exp(in[base + i * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] = in[base + i * s.inner] - lse;
    }
  }
  return Tensor::make(t.shape(), std::move(out), {t}, "log_softmax", [s](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t r = 0; r < s.inner; ++r) {
        const std::size_t base = o * s.n * s.inner + r;
        double gsum = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) gsum += self.grad[base + i * s.inner];
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t at = base + i * s.inner;
          gx[at] += self.grad[at] - std::exp(y[at]) * gsum;
        }
      }
    }
  });
}

Tensor logsumexp(const Tensor& t, std::size_t axis, bool keepdim) {
  const auto s = split_axis(t.shape(), axis);
  const auto in = t.values();
  std::vector<double> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.inner; ++r) {
      const std::size_t base = o * s.n * s.inner + r;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) mx = std::max(mx, in[base + i * s.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) z += std::exp(in[base + i * s.inner] - mx);
      out[o * s.inner + r] = mx + std::log(z);
    }
  }
  return Tensor::make(reduced_shape(t.shape(), axis, keepdim), std::move(out), {t}, "logsumexp", [s](Node& self) {
    auto& x = *self.parents[0];
    auto& gx = x.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t r = 0; r < s.inner; ++r) {
        const std::size_t base = o * s.n * s.inner + r;
        const double lse = self.value[o * s.inner + r];
        const double g = self.grad[o * s.inner + r];
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t at = base + i * s.inner;
          gx[at] += g * std::exp(x.value[at] - lse);
        }
      }
    }
  });
}

Tensor sum(const Tensor& t, std::size_t axis, bool keepdim) {
  const auto s = split_axis(t.shape(), axis);
  const auto in = t.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t r = 0; r < s.inner; ++r) out[o * s.inner + r] += in[(o * s.n + i) * s.inner + r];
  return Tensor::make(reduced_shape(t.shape(), axis, keepdim), std::move(out), {t}, "sum_axis", [s](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t r = 0; r < s.inner; ++r) gx[(o * s.n + i) * s.inner + r] += self.grad[o * s.inner + r];
  });
}

Tensor mean(const Tensor& t, std::size_t axis, bool keepdim) {
  const auto n = t.size(axis);
  return mul_scalar(sum(t, axis, keepdim), 1.0 / static_cast<double>(n));
}

Tensor sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  return Tensor::make({}, {acc}, {t}, "sum", [](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const double g = self.grad[0];
    for (auto& v : gx) v += g;
  });
}

Tensor mean(const Tensor& t) { return mul_scalar(sum(t), 1.0 / static_cast<double>(t.numel())); }

Tensor l2_norm(const Tensor& t, std::size_t axis, bool keepdim) {
  const auto s = split_axis(t.shape(), axis);
  const auto in = t.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t r = 0; r < s.inner; ++r) {
        const double v = in[(o * s.n + i) * s.inner + r];
        out[o * s.inner + r] += v * v;
      }
  for (auto& v : out) v = std::sqrt(v);
  return Tensor::make(reduced_shape(t.shape(), axis, keepdim), std::move(out), {t}, "l2_norm", [s](Node& self) {
    auto& x = *self.parents[0];
    auto& gx = x.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t r = 0; r < s.inner; ++r) {
          const double nrm = self.value[o * s.inner + r];
          if (nrm == 0.0) continue;
          const std::size_t at = (o * s.n + i) * s.inner + r;
          gx[at] += self.grad[o * s.inner + r] * x.value[at] / nrm;
        }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat axis out of range");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < ps.size(); ++d) {
      if (d != axis && ps[d] != shape[d]) throw ShapeError("concat shape mismatch " + shape_str(ps));
    }
    widths.push_back(ps[axis]);
    total += ps[axis];
  }
  shape[axis] = total;
  const auto s = split_axis(shape, axis);
  std::vector<double> out(numel_of(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].values();
    const std::size_t w = widths[k];
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * w * s.inner), w * s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * s.n + offset) * s.inner));
    offset += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::make(std::move(shape), std::move(out), std::move(inputs), "concat", [s, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t w = widths[k];
      if (needs(self, k)) {
        auto& g = self.parents[k]->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t e = 0; e < w * s.inner; ++e) g[o * w * s.inner + e] += self.grad[(o * s.n + offset) * s.inner + e];
      }
      offset += w;
    }
  });
}

Tensor index_select(const Tensor& t, std::size_t axis, std::span<const std::size_t> indices) {
  const auto s = split_axis(t.shape(), axis);
  for (auto i : indices) {
    if (i >= s.n) throw ShapeError("index_select index " + std::to_string(i) + " out of range " + std::to_string(s.n));
  }
  Shape shape = t.shape();
  shape[axis] = indices.size();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const auto in = t.values();
  std::vector<double> out(numel_of(shape));
  const std::size_t m = idx.size();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((o * s.n + idx[j]) * s.inner), s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * m + j) * s.inner));
  return Tensor::make(std::move(shape), std::move(out), {t}, "index_select", [s, idx](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const std::size_t m = idx.size();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t r = 0; r < s.inner; ++r) g[(o * s.n + idx[j]) * s.inner + r] += self.grad[(o * m + j) * s.inner + r];
  });
}

Tensor scatter_rows(const Tensor& src, std::span<const std::size_t> indices, std::size_t rows) {
  if (src.dim() == 0 || src.size(0) != indices.size()) throw ShapeError("scatter_rows index count mismatch");
  Shape shape = src.shape();
  shape[0] = rows;
  const std::size_t inner = src.numel() / indices.size();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (auto i : idx) {
    if (i >= rows) throw ShapeError("scatter_rows index out of range");
  }
  const auto in = src.values();
  std::vector<double> out(numel_of(shape), 0.0);
  for (std::size_t j = 0; j < idx.size(); ++j)
    for (std::size_t r = 0; r < inner; ++r) out[idx[j] * inner + r] += in[j * inner + r];
  return Tensor::make(std::move(shape), std::move(out), {src}, "scatter_rows", [idx, inner](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t j = 0; j < idx.size(); ++j)
      for (std::size_t r = 0; r < inner; ++r) g[j * inner + r] += self.grad[idx[j] * inner + r];
  });
}

Tensor gather(const Tensor& t, std::span<const std::size_t> flat_indices, Shape out_shape) {
  if (numel_of(out_shape) != flat_indices.size()) throw ShapeError("gather shape/index count mismatch");
  const auto in = t.values();
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= in.size()) throw ShapeError("gather index out of range");
    out[i] = in[idx[i]];
  }
  return Tensor::make(std::move(out_shape), std::move(out), {t}, "gather", [idx](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

Tensor scatter(const Tensor& src, std::span<const std::size_t> flat_indices, Shape out_shape) {
  if (src.numel() != flat_indices.size()) throw ShapeError("scatter value/index count mismatch");
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  std::vector<double> out(numel_of(out_shape), 0.0);
  const auto in = src.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= out.size()) throw ShapeError("scatter index out of range");
    out[idx[i]] += in[i];
  }
  return Tensor::make(std::move(out_shape), std::move(out), {src}, "scatter", [idx](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i] += self.grad[idx[i]];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.dim() != 2 || logits.size(0) != labels.size()) {
    throw ShapeError("cross_entropy expects [T, M] logits and T labels, got " + shape_str(logits.shape()));
  }
  const std::size_t T = logits.size(0), M = logits.size(1);
  std::vector<int> lab(labels.begin(), labels.end());
  for (int y : lab) {
    if (y < 0 || static_cast<std::size_t>(y) >= M) throw ShapeError("cross_entropy label out of range");
  }
  const auto in = logits.values();
  std::vector<double> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = in.data() + t * M;
    const double mx = *std::max_element(row, row + M);
    double z = 0.0;
    for (std::size_t j = 0; j < M; ++j) z += std::exp(row[j] - mx);
    out[t] = mx + std::log(z) - row[lab[t]];
  }
  return Tensor::make({T}, std::move(out), {logits}, "cross_entropy", [T, M, lab](Node& self) {
    auto& x = *self.parents[0];
    auto& g = x.grad_buffer();
    for (std::size_t t = 0; t < T; ++t) {
      const double* row = x.value.data() + t * M;
      const double lse = self.value[t] + row[lab[t]];
      for (std::size_t j = 0; j < M; ++j) {
        const double p = std::exp(row[j] - lse);
        g[t * M + j] += self.grad[t] * (p - (static_cast<int>(j) == lab[t] ? 1.0 : 0.0));
      }
    }
  });
}

}  // namespace aliad::diff
