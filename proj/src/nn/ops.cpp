#include "eegrecon/nn/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace eegrecon::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(fn);
    }
  }
  return n;
}

void check_same(const Var& a, const Var& b, const char* op) {
  if (a->shape() != b->shape()) {
    throw std::invalid_argument(std::string(op) + ": shape " + shape_str(a->shape()) + " vs " +
                                shape_str(b->shape()));
  }
}

std::size_t inner_size(const Shape& s, int from) {
  std::size_t n = 1;
  for (std::size_t i = from; i < s.size(); ++i) n *= s[i];
  return n;
}

template <typename F, typename D>
Var unary(const Var& x, F f, D df) {
  Tensor out(x->shape());
  const auto& xv = x->value.data;
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = f(xv[i]);
  return make(std::move(out), {x}, [df](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad().data;
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad.data[i] * df(p.value.data[i], self.value.data[i]);
  });
}

// Geometry of a (possibly 1-D) convolution expressed as 2-D.
struct ConvGeom {
  int n, ci, h, w;
  int co, kh, kw;
  int sh, sw, ph, pw;
  int ho, wo;
  int k() const { return ci * kh * kw; }
  int p() const { return ho * wo; }
};

// cols [K, nb*P] for samples [n0, n0+nb)
void im2col(const ConvGeom& g, const double* x, int n0, int nb, double* cols) {
  const int np = nb * g.p();
  for (int c = 0; c < g.ci; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        double* row = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * np;
        for (int n = 0; n < nb; ++n) {
          const double* xin = x + (static_cast<std::size_t>(n0 + n) * g.ci + c) * g.h * g.w;
          double* dst = row + static_cast<std::size_t>(n) * g.p();
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.sh - g.ph + i;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.sw - g.pw + j;
              dst[oy * g.wo + ox] =
                  (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? xin[iy * g.w + ix] : 0.0;
            }
          }
        }
      }
}

void col2im(const ConvGeom& g, const double* cols, int n0, int nb, double* dx) {
  const int np = nb * g.p();
  for (int c = 0; c < g.ci; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        const double* row = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * np;
        for (int n = 0; n < nb; ++n) {
          double* xout = dx + (static_cast<std::size_t>(n0 + n) * g.ci + c) * g.h * g.w;
          const double* src = row + static_cast<std::size_t>(n) * g.p();
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.sh - g.ph + i;
            if (iy < 0 || iy >= g.h) continue;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.sw - g.pw + j;
              if (ix >= 0 && ix < g.w) xout[iy * g.w + ix] += src[oy * g.wo + ox];
            }
          }
        }
      }
}

// Samples per im2col chunk: enough columns for an efficient GEMM, small
// enough that the column buffer stays in cache.
int conv_chunk(const ConvGeom& g) {
  const int by_cols = std::max(1, 2048 / g.p());
  const int by_bytes = std::max(1, static_cast<int>((1 << 20) / (8L * g.k() * g.p())));
  return std::clamp(std::min(by_cols, by_bytes), 1, g.n);
}

// [co, nb*P] block <-> [n, co, P] tensor layout
void scatter_rows(const ConvGeom& g, const double* mat, int n0, int nb, double* out) {
  for (int n = 0; n < nb; ++n)
    for (int c = 0; c < g.co; ++c)
      std::copy_n(mat + (static_cast<std::size_t>(c) * nb + n) * g.p(), g.p(),
                  out + (static_cast<std::size_t>(n0 + n) * g.co + c) * g.p());
}

void gather_rows(const ConvGeom& g, const double* in, int n0, int nb, double* mat) {
  for (int n = 0; n < nb; ++n)
    for (int c = 0; c < g.co; ++c)
      std::copy_n(in + (static_cast<std::size_t>(n0 + n) * g.co + c) * g.p(), g.p(),
                  mat + (static_cast<std::size_t>(c) * nb + n) * g.p());
}

Var conv_generic(const Var& x, const Var& weight, const Var& bias, ConvGeom g, Shape out_shape) {
  if (g.ho <= 0 || g.wo <= 0) throw std::invalid_argument("conv: input smaller than kernel");
  const int chunk = conv_chunk(g);
  std::vector<double> cols(static_cast<std::size_t>(g.k()) * chunk * g.p());
  RowMat out_mat(g.co, chunk * g.p());
  Tensor out(std::move(out_shape));
  const CMapMat wmat(weight->value.data.data(), g.co, g.k());
  for (int n0 = 0; n0 < g.n; n0 += chunk) {
    const int nb = std::min(chunk, g.n - n0);
    im2col(g, x->value.data.data(), n0, nb, cols.data());
    auto block = out_mat.leftCols(nb * g.p());
    block.noalias() = wmat * CMapMat(cols.data(), g.k(), nb * g.p());
    if (nb == chunk) {
      scatter_rows(g, out_mat.data(), n0, nb, out.data.data());
    } else {
      RowMat tmp = block;
      scatter_rows(g, tmp.data(), n0, nb, out.data.data());
    }
  }
  if (bias)
    for (int n = 0; n < g.n; ++n)
      for (int c = 0; c < g.co; ++c) {
        const double b = bias->value.data[c];
        double* dst = out.data.data() + (static_cast<std::size_t>(n) * g.co + c) * g.p();
        for (int q = 0; q < g.p(); ++q) dst[q] += b;
      }

  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make(std::move(out), std::move(parents), [g, chunk](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    const double* gy = self.grad.data.data();
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->ensure_grad().data;
      for (int n = 0; n < g.n; ++n)
        for (int c = 0; c < g.co; ++c) {
          const double* src = gy + (static_cast<std::size_t>(n) * g.co + c) * g.p();
          double s = 0.0;
          for (int q = 0; q < g.p(); ++q) s += src[q];
          gb[c] += s;
        }
    }
    const bool need_w = wn.requires_grad;
    const bool need_x = xn.requires_grad;
    if (!need_w && !need_x) return;
    std::vector<double> cols(static_cast<std::size_t>(g.k()) * chunk * g.p());
    std::vector<double> dmat(static_cast<std::size_t>(g.co) * chunk * g.p());
    for (int n0 = 0; n0 < g.n; n0 += chunk) {
      const int nb = std::min(chunk, g.n - n0);
      const int cols_n = nb * g.p();
      gather_rows(g, gy, n0, nb, dmat.data());
      const CMapMat dm(dmat.data(), g.co, cols_n);
      if (need_w) {
        im2col(g, xn.value.data.data(), n0, nb, cols.data());
        MapMat(wn.ensure_grad().data.data(), g.co, g.k()).noalias() +=
            dm * CMapMat(cols.data(), g.k(), cols_n).transpose();
      }
      if (need_x) {
        MapMat(cols.data(), g.k(), cols_n).noalias() =
            CMapMat(wn.value.data.data(), g.co, g.k()).transpose() * dm;
        col2im(g, cols.data(), n0, nb, xn.ensure_grad().data.data());
      }
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] - b->value.data[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (int k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad.data[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a->value.data[i] * b->value.data[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    if (an.requires_grad) {
      auto& g = an.ensure_grad().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i] * bn.value.data[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.ensure_grad().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i] * an.value.data[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var silu(const Var& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const int n = x->value.dim(0);
  const int f = x->value.dim(1);
  const int g = weight->value.dim(0);
  if (weight->value.dim(1) != f) {
    throw std::invalid_argument("linear: input " + shape_str(x->shape()) + " vs weight " +
                                shape_str(weight->shape()));
  }
  Tensor out({n, g});
  MapMat y(out.data.data(), n, g);
  y.noalias() = CMapMat(x->value.data.data(), n, f) * CMapMat(weight->value.data.data(), g, f).transpose();
  if (bias)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < g; ++j) y(i, j) += bias->value.data[j];

  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make(std::move(out), std::move(parents), [n, f, g](Node& self) {
    CMapMat dy(self.grad.data.data(), n, g);
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    if (xn.requires_grad)
      MapMat(xn.ensure_grad().data.data(), n, f).noalias() += dy * CMapMat(wn.value.data.data(), g, f);
    if (wn.requires_grad)
      MapMat(wn.ensure_grad().data.data(), g, f).noalias() +=
          dy.transpose() * CMapMat(xn.value.data.data(), n, f);
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->ensure_grad().data;
      for (int j = 0; j < g; ++j) gb[j] += dy.col(j).sum();
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  const auto& xs = x->shape();
  const auto& ws = weight->shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1]) {
    throw std::invalid_argument("conv2d: input " + shape_str(xs) + " vs weight " + shape_str(ws));
  }
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, stride, padding, padding, 0, 0};
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  return conv_generic(x, weight, bias, g, {g.n, g.co, g.ho, g.wo});
}

Var conv1d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  const auto& xs = x->shape();
  const auto& ws = weight->shape();
  if (xs.size() != 3 || ws.size() != 3 || xs[1] != ws[1]) {
    throw std::invalid_argument("conv1d: input " + shape_str(xs) + " vs weight " + shape_str(ws));
  }
  ConvGeom g{xs[0], xs[1], 1, xs[2], ws[0], 1, ws[2], 1, stride, 0, padding, 1, 0};
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  return conv_generic(x, weight, bias, g, {g.n, g.co, g.wo});
}

Var upsample_nearest2x(const Var& x) {
  const auto& s = x->shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor out({n, c, 2 * h, 2 * w});
  for (int nc = 0; nc < n * c; ++nc)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j)
        out.data[(static_cast<std::size_t>(nc) * 2 * h + i) * 2 * w + j] =
            x->value.data[(static_cast<std::size_t>(nc) * h + i / 2) * w + j / 2];
  return make(std::move(out), {x}, [n, c, h, w](Node& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    for (int nc = 0; nc < n * c; ++nc)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j)
          g[(static_cast<std::size_t>(nc) * h + i / 2) * w + j / 2] +=
              self.grad.data[(static_cast<std::size_t>(nc) * 2 * h + i) * 2 * w + j];
  });
}

Var concat(const Var& a, const Var& b) {
  const auto& as = a->shape();
  const auto& bs = b->shape();
  if (as.size() < 2 || as.size() != bs.size() || as[0] != bs[0] ||
      inner_size(as, 2) != inner_size(bs, 2)) {
    throw std::invalid_argument("concat: " + shape_str(as) + " vs " + shape_str(bs));
  }
  const int n = as[0];
  const std::size_t ia = inner_size(as, 1), ib = inner_size(bs, 1);
  Shape os = as;
  os[1] += bs[1];
  Tensor out(os);
  for (int i = 0; i < n; ++i) {
    std::copy_n(a->value.data.begin() + i * ia, ia, out.data.begin() + i * (ia + ib));
    std::copy_n(b->value.data.begin() + i * ib, ib, out.data.begin() + i * (ia + ib) + ia);
  }
  return make(std::move(out), {a, b}, [n, ia, ib](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    for (int i = 0; i < n; ++i) {
      const double* src = self.grad.data.data() + i * (ia + ib);
      if (an.requires_grad) {
        double* d = an.ensure_grad().data.data() + i * ia;
        for (std::size_t k = 0; k < ia; ++k) d[k] += src[k];
      }
      if (bn.requires_grad) {
        double* d = bn.ensure_grad().data.data() + i * ib;
        for (std::size_t k = 0; k < ib; ++k) d[k] += src[ia + k];
      }
    }
  });
}

Var slice(const Var& x, int start, int length) {
  const auto& s = x->shape();
  if (start < 0 || length <= 0 || start + length > s[1]) throw std::invalid_argument("slice: out of range");
  const int n = s[0];
  const std::size_t inner = inner_size(s, 2);
  const std::size_t row = s[1] * inner;
  Shape os = s;
  os[1] = length;
  Tensor out(os);
  const std::size_t len = length * inner, off = start * inner;
  for (int i = 0; i < n; ++i)
    std::copy_n(x->value.data.begin() + i * row + off, len, out.data.begin() + i * len);
  return make(std::move(out), {x}, [n, row, len, off](Node& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    for (int i = 0; i < n; ++i)
      for (std::size_t k = 0; k < len; ++k) g[i * row + off + k] += self.grad.data[i * len + k];
  });
}

Var reshape(const Var& x, Shape shape) {
  if (numel(shape) != x->value.size()) {
    throw std::invalid_argument("reshape: " + shape_str(x->shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), x->value.data);
  return make(std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
  });
}

Var add_channelwise(const Var& x, const Var& v) {
  const auto& s = x->shape();
  if (v->shape().size() != 2 || v->shape()[0] != s[0] || v->shape()[1] != s[1]) {
    throw std::invalid_argument("add_channelwise: " + shape_str(s) + " vs " + shape_str(v->shape()));
  }
  const std::size_t nc = static_cast<std::size_t>(s[0]) * s[1];
  const std::size_t inner = inner_size(s, 2);
  Tensor out(s);
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t k = 0; k < inner; ++k)
      out.data[i * inner + k] = x->value.data[i * inner + k] + v->value.data[i];
  return make(std::move(out), {x, v}, [nc, inner](Node& self) {
    Node& xn = *self.parents[0];
    Node& vn = *self.parents[1];
    if (xn.requires_grad) {
      auto& g = xn.ensure_grad().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
    }
    if (vn.requires_grad) {
      auto& g = vn.ensure_grad().data;
      for (std::size_t i = 0; i < nc; ++i)
        for (std::size_t k = 0; k < inner; ++k) g[i] += self.grad.data[i * inner + k];
    }
  });
}

Var avg_pool1d(const Var& x, int window) {
  const auto& s = x->shape();
  const int nc = s[0] * s[1], l = s[2], lo = l / window;
  if (lo <= 0) throw std::invalid_argument("avg_pool1d: window larger than input");
  Tensor out({s[0], s[1], lo});
  for (int i = 0; i < nc; ++i)
    for (int t = 0; t < lo; ++t) {
      double acc = 0.0;
      for (int k = 0; k < window; ++k) acc += x->value.data[static_cast<std::size_t>(i) * l + t * window + k];
      out.data[static_cast<std::size_t>(i) * lo + t] = acc / window;
    }
  return make(std::move(out), {x}, [nc, l, lo, window](Node& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    for (int i = 0; i < nc; ++i)
      for (int t = 0; t < lo; ++t) {
        const double d = self.grad.data[static_cast<std::size_t>(i) * lo + t] / window;
        for (int k = 0; k < window; ++k) g[static_cast<std::size_t>(i) * l + t * window + k] += d;
      }
  });
}

Var adaptive_avg_pool1d(const Var& x, int bins) {
  const auto& s = x->shape();
  const int nc = s[0] * s[1], l = s[2];
  if (bins <= 0 || bins > l) throw std::invalid_argument("adaptive_avg_pool1d: bad bin count");
  std::vector<int> lo(bins), hi(bins);
  for (int b = 0; b < bins; ++b) {
    lo[b] = (b * l) / bins;
    hi[b] = ((b + 1) * l + bins - 1) / bins;
  }
  Tensor out({s[0], s[1], bins});
  for (int i = 0; i < nc; ++i)
    for (int b = 0; b < bins; ++b) {
      double acc = 0.0;
      for (int t = lo[b]; t < hi[b]; ++t) acc += x->value.data[static_cast<std::size_t>(i) * l + t];
      out.data[static_cast<std::size_t>(i) * bins + b] = acc / (hi[b] - lo[b]);
    }
  return make(std::move(out), {x}, [nc, l, bins, lo, hi](Node& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    for (int i = 0; i < nc; ++i)
      for (int b = 0; b < bins; ++b) {
        const double d = self.grad.data[static_cast<std::size_t>(i) * bins + b] / (hi[b] - lo[b]);
        for (int t = lo[b]; t < hi[b]; ++t) g[static_cast<std::size_t>(i) * l + t] += d;
      }
  });
}

Var time_step(const Var& x, int t) {
  const auto& s = x->shape();
  const int nc = s[0] * s[1], l = s[2];
  if (t < 0 || t >= l) throw std::invalid_argument("time_step: index out of range");
  Tensor out({s[0], s[1]});
  for (int i = 0; i < nc; ++i) out.data[i] = x->value.data[static_cast<std::size_t>(i) * l + t];
  return make(std::move(out), {x}, [nc, l, t](Node& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    for (int i = 0; i < nc; ++i) g[static_cast<std::size_t>(i) * l + t] += self.grad.data[i];
  });
}

Var stack_time(const std::vector<Var>& steps) {
  if (steps.empty()) throw std::invalid_argument("stack_time: no steps");
  const Shape& s0 = steps[0]->shape();
  const int nc = s0[0] * s0[1], l = static_cast<int>(steps.size());
  Tensor out({s0[0], s0[1], l});
  for (int t = 0; t < l; ++t) {
    if (steps[t]->shape() != s0) throw std::invalid_argument("stack_time: ragged steps");
    for (int i = 0; i < nc; ++i) out.data[static_cast<std::size_t>(i) * l + t] = steps[t]->value.data[i];
  }
  return make(std::move(out), steps, [nc, l](Node& self) {
    for (int t = 0; t < l; ++t) {
      Node& p = *self.parents[t];
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad().data;
      for (int i = 0; i < nc; ++i) g[i] += self.grad.data[static_cast<std::size_t>(i) * l + t];
    }
  });
}

Var embedding_mean(const Var& table, const std::vector<std::vector<int>>& ids) {
  const int v = table->value.dim(0), e = table->value.dim(1);
  const int n = static_cast<int>(ids.size());
  Tensor out({n, e});
  for (int i = 0; i < n; ++i) {
    if (ids[i].empty()) throw std::invalid_argument("embedding_mean: empty id list");
    for (int id : ids[i]) {
      if (id < 0 || id >= v) throw std::invalid_argument("embedding_mean: id out of range");
      for (int k = 0; k < e; ++k) out.data[i * e + k] += table->value.data[id * e + k];
    }
    for (int k = 0; k < e; ++k) out.data[i * e + k] /= static_cast<double>(ids[i].size());
  }
  return make(std::move(out), {table}, [ids, e](Node& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double inv = 1.0 / static_cast<double>(ids[i].size());
      for (int id : ids[i])
        for (int k = 0; k < e; ++k) g[id * e + k] += inv * self.grad.data[i * e + k];
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x->value.data) acc += v;
  return make(Tensor({1}, {acc}), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    for (auto& gi : g) gi += self.grad.data[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x->value.size())); }

Var mse_loss(const Var& pred, const Var& target) {
  check_same(pred, target, "mse_loss");
  const std::size_t n = pred->value.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred->value.data[i] - target->value.data[i];
    acc += d * d;
  }
  return make(Tensor({1}, {acc / n}), {pred, target}, [n](Node& self) {
    Node& p = *self.parents[0];
    Node& t = *self.parents[1];
    const double k = 2.0 * self.grad.data[0] / static_cast<double>(n);
    if (p.requires_grad) {
      auto& g = p.ensure_grad().data;
      for (std::size_t i = 0; i < n; ++i) g[i] += k * (p.value.data[i] - t.value.data[i]);
    }
    if (t.requires_grad) {
      auto& g = t.ensure_grad().data;
      for (std::size_t i = 0; i < n; ++i) g[i] -= k * (p.value.data[i] - t.value.data[i]);
    }
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const int n = logits->value.dim(0), k = logits->value.dim(1);
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("cross_entropy: label count");
  std::vector<double> probs(static_cast<std::size_t>(n) * k);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = logits->value.data.data() + i * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - mx) / z;
    loss += -(row[labels[i]] - mx - std::log(z));
  }
  return make(Tensor({1}, {loss / n}), {logits}, [probs, labels, n, k](Node& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    const double s = self.grad.data[0] / n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) g[i * k + j] += s * (probs[i * k + j] - (j == labels[i] ? 1.0 : 0.0));
  });
}

}  // namespace eegrecon::nn
