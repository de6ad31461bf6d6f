#include "restr/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "restr/error.hpp"

namespace restr::detail {
void add_macs(std::uint64_t n);
}  // namespace restr::detail

namespace restr::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ConfigError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

void check_axis(const char* op, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ConfigError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  }
}

// (outer, axis_len, inner) factorization of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

enum class Broadcast { kSame, kTrailing };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (a.rank() == b.rank() && b.shape().back() == 1) {
    bool lead_ok = true;
    for (std::size_t i = 0; i + 1 < a.rank(); ++i) lead_ok = lead_ok && a.dim(i) == b.dim(i);
    if (lead_ok) return Broadcast::kTrailing;
  }
  shape_error(op, a, b);
}

template <typename Fwd, typename Deriv>
Tensor unary(OpTag tag, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  ImplPtr xi = x.shared_impl();
  detail::record(tag, {&x}, out, [xi, deriv](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xi->values[i]);
  });
  return out;
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a, b);
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Tensor out({a.dim(0), b.dim(1)});
  MatMap(out.data(), m, n).noalias() = ConstMatMap(a.data(), m, k) * ConstMatMap(b.data(), k, n);
  detail::add_macs(static_cast<std::uint64_t>(m) * k * n);

  ImplPtr ai = a.shared_impl(), bi = b.shared_impl();
  detail::record(OpTag::kMatMul, {&a, &b}, out, [ai, bi, m, k, n](const std::vector<double>& g) {
    ConstMatMap G(g.data(), m, n);
    if (ai->requires_grad) {
      MatMap(ai->ensure_grad().data(), m, k).noalias() += G * ConstMatMap(bi->values.data(), k, n).transpose();
    }
    if (bi->requires_grad) {
      MatMap(bi->ensure_grad().data(), k, n).noalias() += ConstMatMap(ai->values.data(), m, k).transpose() * G;
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind("add", a, b);
  Tensor out(a.shape());
  const std::size_t inner = kind == Broadcast::kSame ? 1 : a.shape().back();
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i / inner];
  ImplPtr ai = a.shared_impl(), bi = b.shared_impl();
  detail::record(OpTag::kAdd, {&a, &b}, out, [ai, bi, inner](const std::vector<double>& g) {
    if (ai->requires_grad) {
      auto& ga = ai->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i / inner] += g[i];
    }
  });
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind("hadamard", a, b);
  Tensor out(a.shape());
  const std::size_t inner = kind == Broadcast::kSame ? 1 : a.shape().back();
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i / inner];
  ImplPtr ai = a.shared_impl(), bi = b.shared_impl();
  detail::record(OpTag::kHadamard, {&a, &b}, out, [ai, bi, inner](const std::vector<double>& g) {
    if (ai->requires_grad) {
      auto& ga = ai->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->values[i / inner];
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i / inner] += g[i] * ai->values[i];
    }
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.shape().back() != bias.dim(0)) shape_error("add_bias", x, bias);
  const std::size_t d = bias.dim(0);
  Tensor out(x.shape());
  auto xv = x.values(), bv = bias.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + bv[i % d];
  ImplPtr xi = x.shared_impl(), bi = bias.shared_impl();
  detail::record(OpTag::kAddBias, {&x, &bias}, out, [xi, bi, d](const std::vector<double>& g) {
    if (xi->requires_grad) {
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  return unary(OpTag::kScale, x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      OpTag::kGelu, x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}

Tensor relu(const Tensor& x) {
  return unary(OpTag::kRelu, x, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(OpTag::kSigmoid, x, sigmoid_scalar, [](double v) {
    const double s = sigmoid_scalar(v);
    return s * (1.0 - s);
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_axis("softmax", x, axis);
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor out(x.shape());
  const double* xv = x.data();
  double* ov = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < sp.len; ++j) mx = std::max(mx, xv[base + j * sp.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < sp.len; ++j) {
        const double e = std::exp(xv[base + j * sp.inner] - mx);
        ov[base + j * sp.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < sp.len; ++j) ov[base + j * sp.inner] /= total;
    }
  }
  ImplPtr xi = x.shared_impl(), oi = out.shared_impl();
  std::weak_ptr<detail::TensorImpl> weak_out = oi;
  detail::record(OpTag::kSoftmax, {&x}, out, [xi, weak_out, sp](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto oi = weak_out.lock();
    const double* y = oi->values.data();
    auto& gx = xi->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.len; ++j) dot += g[base + j * sp.inner] * y[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t idx = base + j * sp.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != d) shape_error("layer_norm(gain)", x, gain);
  if (bias.rank() != 1 || bias.dim(0) != d) shape_error("layer_norm(bias)", x, bias);
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* xv = x.data();
  const double* gv = gain.data();
  const double* bv = bias.data();
  double* ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      ov[r * d + j] = h * gv[j] + bv[j];
    }
  }
  ImplPtr xi = x.shared_impl(), gi = gain.shared_impl(), bi = bias.shared_impl();
  detail::record(OpTag::kLayerNorm, {&x, &gain, &bias}, out,
                 [xi, gi, bi, xhat, inv_std, d, rows](const std::vector<double>& g) {
                   const double* gain_v = gi->values.data();
                   if (gi->requires_grad) {
                     auto& gg = gi->ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * (*xhat)[i];
                   }
                   if (bi->requires_grad) {
                     auto& gb = bi->ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                   }
                   if (!xi->requires_grad) return;
                   auto& gx = xi->ensure_grad();
                   const double inv_d = 1.0 / static_cast<double>(d);
                   for (std::size_t r = 0; r < rows; ++r) {
                     double mean_dh = 0.0, mean_dh_h = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       const double dh = g[r * d + j] * gain_v[j];
                       mean_dh += dh;
                       mean_dh_h += dh * (*xhat)[r * d + j];
                     }
                     mean_dh *= inv_d;
                     mean_dh_h *= inv_d;
                     for (std::size_t j = 0; j < d; ++j) {
                       const double dh = g[r * d + j] * gain_v[j];
                       gx[r * d + j] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
                     }
                   }
                 });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ConfigError("concat: no inputs");
  check_axis("concat", parts[0], axis);
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size()) shape_error("concat", parts[0], p);
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i != axis && p.dim(i) != shape[i]) shape_error("concat", parts[0], p);
    }
    total += p.dim(axis);
  }
  shape[axis] = total;
  Tensor out(shape);
  const AxisSplit sp = split_at(shape, axis);
  std::vector<std::size_t> widths;  // contiguous chunk per outer index for each part
  for (const auto& p : parts) widths.push_back(p.dim(axis) * sp.inner);
  const std::size_t row = total * sp.inner;
  double* ov = out.data();
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const double* pv = parts[pi].data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv + o * widths[pi], widths[pi], ov + o * row + offset);
    }
    offset += widths[pi];
  }
  std::vector<ImplPtr> impls;
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) {
    impls.push_back(p.shared_impl());
    inputs.push_back(&p);
  }
  const std::size_t outer = sp.outer;
  detail::record(OpTag::kConcat, inputs, out, [impls, widths, row, outer](const std::vector<double>& g) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < impls.size(); ++pi) {
      if (impls[pi]->requires_grad) {
        auto& gp = impls[pi]->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < widths[pi]; ++j) gp[o * widths[pi] + j] += g[o * row + off + j];
        }
      }
      off += widths[pi];
    }
  });
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  check_axis("slice", x, axis);
  if (begin >= end || end > x.dim(axis)) {
    throw ConfigError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis " +
                      std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  Tensor out(shape);
  const std::size_t src_row = sp.len * sp.inner;
  const std::size_t width = (end - begin) * sp.inner;
  const std::size_t start = begin * sp.inner;
  const double* xv = x.data();
  double* ov = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o) std::copy_n(xv + o * src_row + start, width, ov + o * width);
  ImplPtr xi = x.shared_impl();
  const std::size_t outer = sp.outer;
  detail::record(OpTag::kSlice, {&x}, out, [xi, outer, src_row, width, start](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto& gx = xi->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < width; ++j) gx[o * src_row + start + j] += g[o * width + j];
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ConfigError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  ImplPtr xi = x.shared_impl();
  detail::record(OpTag::kReshape, {&x}, out, [xi](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ConfigError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  const double* xv = x.data();
  double* ov = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = xv[i * c + j];
  }
  ImplPtr xi = x.shared_impl();
  detail::record(OpTag::kTranspose, {&x}, out, [xi, r, c](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    }
  });
  return out;
}

Tensor upsample2x(const Tensor& grid) {
  if (grid.rank() != 3) throw ConfigError("upsample2x: expected h x w x c, got " + shape_str(grid.shape()));
  const std::size_t h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
  Tensor out({2 * h, 2 * w, c});
  const double* gv = grid.data();
  double* ov = out.data();
  for (std::size_t y = 0; y < 2 * h; ++y) {
    for (std::size_t x = 0; x < 2 * w; ++x) std::copy_n(gv + ((y / 2) * w + x / 2) * c, c, ov + (y * 2 * w + x) * c);
  }
  ImplPtr gi = grid.shared_impl();
  detail::record(OpTag::kUpsampleNearest, {&grid}, out, [gi, h, w, c](const std::vector<double>& g) {
    if (!gi->requires_grad) return;
    auto& gg = gi->ensure_grad();
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) {
        const std::size_t src = ((y / 2) * w + x / 2) * c, dst = (y * 2 * w + x) * c;
        for (std::size_t k = 0; k < c; ++k) gg[src + k] += g[dst + k];
      }
    }
  });
  return out;
}

namespace {

// Source taps for 2x bilinear upsampling along one axis of length n.
struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_lo, w_hi;
};

Taps bilinear_taps(std::size_t n) {
  Taps t;
  for (std::size_t o = 0; o < 2 * n; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    src = std::max(src, 0.0);
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const double frac = src - static_cast<double>(i0);
    t.lo.push_back(i0);
    t.hi.push_back(i1);
    t.w_lo.push_back(1.0 - frac);
    t.w_hi.push_back(frac);
  }
  return t;
}

}  // namespace

Tensor upsample2x_bilinear(const Tensor& grid) {
  if (grid.rank() != 3) throw ConfigError("upsample2x_bilinear: expected h x w x c, got " + shape_str(grid.shape()));
  const std::size_t h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
  auto ty = std::make_shared<Taps>(bilinear_taps(h));
  auto tx = std::make_shared<Taps>(bilinear_taps(w));
  Tensor out({2 * h, 2 * w, c});
  const double* gv = grid.data();
  double* ov = out.data();
  for (std::size_t y = 0; y < 2 * h; ++y) {
    const std::size_t ys[2] = {ty->lo[y], ty->hi[y]};
    const double wy[2] = {ty->w_lo[y], ty->w_hi[y]};
    for (std::size_t x = 0; x < 2 * w; ++x) {
      const std::size_t xs[2] = {tx->lo[x], tx->hi[x]};
      const double wx[2] = {tx->w_lo[x], tx->w_hi[x]};
      double* dst = ov + (y * 2 * w + x) * c;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const double wt = wy[a] * wx[b];
          if (wt == 0.0) continue;
          const double* src = gv + (ys[a] * w + xs[b]) * c;
          for (std::size_t k = 0; k < c; ++k) dst[k] += wt * src[k];
        }
      }
    }
  }
  ImplPtr gi = grid.shared_impl();
  detail::record(OpTag::kUpsampleBilinear, {&grid}, out, [gi, ty, tx, h, w, c](const std::vector<double>& g) {
    if (!gi->requires_grad) return;
    auto& gg = gi->ensure_grad();
    for (std::size_t y = 0; y < 2 * h; ++y) {
      const std::size_t ys[2] = {ty->lo[y], ty->hi[y]};
      const double wy[2] = {ty->w_lo[y], ty->w_hi[y]};
      for (std::size_t x = 0; x < 2 * w; ++x) {
        const std::size_t xs[2] = {tx->lo[x], tx->hi[x]};
        const double wx[2] = {tx->w_lo[x], tx->w_hi[x]};
        const double* src = g.data() + (y * 2 * w + x) * c;
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            const double wt = wy[a] * wx[b];
            if (wt == 0.0) continue;
            double* dst = gg.data() + (ys[a] * w + xs[b]) * c;
            for (std::size_t k = 0; k < c; ++k) dst[k] += wt * src[k];
          }
        }
      }
    }
  });
  return out;
}

Tensor bce(const Tensor& prob, const Tensor& target) {
  if (prob.shape() != target.shape()) shape_error("bce", prob, target);
  const std::size_t n = prob.numel();
  const double* pv = prob.data();
  const double* yv = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(pv[i], kBceClamp, 1.0 - kBceClamp);
    total -= yv[i] * std::log(p) + (1.0 - yv[i]) * std::log(1.0 - p);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  ImplPtr pi = prob.shared_impl(), ti = target.shared_impl();
  detail::record(OpTag::kBce, {&prob}, out, [pi, ti, n](const std::vector<double>& g) {
    if (!pi->requires_grad) return;
    auto& gp = pi->ensure_grad();
    const double scale = g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = std::clamp(pi->values[i], kBceClamp, 1.0 - kBceClamp);
      const double y = ti->values[i];
      gp[i] += scale * (-y / p + (1.0 - y) / (1.0 - p));
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::scalar(total);
  ImplPtr xi = x.shared_impl();
  detail::record(OpTag::kSum, {&x}, out, [xi](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    for (auto& v : xi->ensure_grad()) v += g[0];
  });
  return out;
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  const double n = static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(total / n);
  ImplPtr xi = x.shared_impl();
  detail::record(OpTag::kMean, {&x}, out, [xi, n](const std::vector<double>& g) {
    if (!xi->requires_grad) return;
    for (auto& v : xi->ensure_grad()) v += g[0] / n;
  });
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ConfigError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) throw ConfigError("embedding: empty id sequence");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ConfigError("embedding: token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  ImplPtr ti = table.shared_impl();
  std::vector<int> saved(ids.begin(), ids.end());
  detail::record(OpTag::kEmbedding, {&table}, out, [ti, saved, d](const std::vector<double>& g) {
    if (!ti->requires_grad) return;
    auto& gt = ti->ensure_grad();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(saved[i]) * d + j] += g[i * d + j];
    }
  });
  return out;
}

}  // namespace restr::ops
