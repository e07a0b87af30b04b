#include "jekyll/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace jekyll::nn {

namespace {

using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatR>;
using CMapM = Eigen::Map<const MatR>;
using VecR = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using CMapV = Eigen::Map<const VecR>;
using MapV = Eigen::Map<VecR>;

// Sequential sum. Eigen's vectorized reductions start at the first aligned
// element, so their rounding would depend on where the buffer happens to live.
Real ordered_sum(const Real* p, std::size_t n, std::size_t stride = 1) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += p[i * stride];
  return static_cast<Real>(acc);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_rank4(const Tensor& t, const char* op) {
  require(t.rank() == 4, std::string(op) + ": expected NCHW tensor, got " + t.shape_string());
}

std::vector<Real>& scratch(int slot, std::size_t n) {
  thread_local std::vector<Real> buffers[3];
  auto& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b;
}

struct ImageDims {
  int c, h, w;
};

void im2col(const Real* x, ImageDims in, int kh, int kw, const Conv2dGeometry& g, int oh, int ow,
            Real* col) {
  const int plane = oh * ow;
  for (int c = 0; c < in.c; ++c) {
    const Real* src = x + static_cast<std::size_t>(c) * in.h * in.w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        Real* dst = col + static_cast<std::size_t>((c * kh + ki) * kw + kj) * plane;
        const int jbase = kj * g.dilation - g.pad_left;
        for (int oi = 0; oi < oh; ++oi) {
          Real* row = dst + oi * ow;
          const int ii = oi * g.stride - g.pad_top + ki * g.dilation;
          if (ii < 0 || ii >= in.h) {
            std::fill(row, row + ow, Real(0));
            continue;
          }
          const Real* srow = src + ii * in.w;
          if (g.stride == 1 && jbase >= 0 && jbase + ow <= in.w) {
            std::copy(srow + jbase, srow + jbase + ow, row);
            continue;
          }
          for (int oj = 0; oj < ow; ++oj) {
            const int jj = oj * g.stride + jbase;
            row[oj] = (jj >= 0 && jj < in.w) ? srow[jj] : Real(0);
          }
        }
      }
    }
  }
}

void col2im(const Real* col, ImageDims in, int kh, int kw, const Conv2dGeometry& g, int oh, int ow,
            Real* x) {
  const int plane = oh * ow;
  for (int c = 0; c < in.c; ++c) {
    Real* dst = x + static_cast<std::size_t>(c) * in.h * in.w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const Real* src = col + static_cast<std::size_t>((c * kh + ki) * kw + kj) * plane;
        const int jbase = kj * g.dilation - g.pad_left;
        for (int oi = 0; oi < oh; ++oi) {
          const int ii = oi * g.stride - g.pad_top + ki * g.dilation;
          if (ii < 0 || ii >= in.h) continue;
          const Real* row = src + oi * ow;
          Real* drow = dst + ii * in.w;
          for (int oj = 0; oj < ow; ++oj) {
            const int jj = oj * g.stride + jbase;
            if (jj >= 0 && jj < in.w) drow[jj] += row[oj];
          }
        }
      }
    }
  }
}

bool is_pointwise(int kh, int kw, const Conv2dGeometry& g) {
  return kh == 1 && kw == 1 && g.stride == 1 && g.pad_top == 0 && g.pad_left == 0 &&
         g.pad_bottom == 0 && g.pad_right == 0;
}

Var unary(const Var& x, Real (*f)(Real), Real (*df_from_y)(Real, Real)) {
  Tensor out(x.shape());
  const Real* in = x.value().data();
  Real* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = f(in[i]);
  return Var::from_op(std::move(out), {x}, [x, df_from_y](const Tensor& y, const Tensor& gy) {
    Tensor& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df_from_y(x.value()[i], y[i]);
  });
}

Var scalar_result(Real v, std::vector<Var> inputs, detail::BackwardFn fn) {
  return Var::from_op(Tensor({1}, {v}), std::move(inputs), std::move(fn));
}

}  // namespace

int conv_output_size(int input, int kernel, int stride, int pad_before, int pad_after,
                     int dilation) {
  return (input + pad_before + pad_after - dilation * (kernel - 1) - 1) / stride + 1;
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dGeometry& g) {
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  require_rank4(X, "conv2d");
  require(W.rank() == 4 && W.dim(1) == X.dim(1),
          "conv2d: weight " + W.shape_string() + " incompatible with input " + X.shape_string());
  const int n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
  const int o = W.dim(0), kh = W.dim(2), kw = W.dim(3);
  const int oh = conv_output_size(h, kh, g.stride, g.pad_top, g.pad_bottom, g.dilation);
  const int ow = conv_output_size(w, kw, g.stride, g.pad_left, g.pad_right, g.dilation);
  require(oh > 0 && ow > 0, "conv2d: input " + X.shape_string() + " too small for kernel");
  const int k = c * kh * kw;
  const int p = oh * ow;
  const bool pointwise = is_pointwise(kh, kw, g);
  const ImageDims dims{c, h, w};

  Tensor out({n, o, oh, ow});
  CMapM wm(W.data(), o, k);
  for (int s = 0; s < n; ++s) {
    const Real* xs = X.data() + static_cast<std::size_t>(s) * c * h * w;
    const Real* colp = xs;
    if (!pointwise) {
      auto& col = scratch(0, static_cast<std::size_t>(k) * p);
      im2col(xs, dims, kh, kw, g, oh, ow, col.data());
      colp = col.data();
    }
    MapM y(out.data() + static_cast<std::size_t>(s) * o * p, o, p);
    y.noalias() = wm * CMapM(colp, k, p);
    if (bias) y.colwise() += CMapV(bias.value().data(), o);
  }

  return Var::from_op(
      std::move(out), {x, weight, bias},
      [x, weight, bias, g, dims, n, o, kh, kw, oh, ow, k, p, pointwise](const Tensor&,
                                                                          const Tensor& gy) {
        const bool need_dx = x.requires_grad();
        const bool need_dw = weight.requires_grad();
        const bool need_db = bias && bias.requires_grad();
        const Tensor& X = x.value();
        CMapM wm(weight.value().data(), o, k);
        const std::size_t in_size = static_cast<std::size_t>(dims.c) * dims.h * dims.w;
        for (int s = 0; s < n; ++s) {
          CMapM dy(gy.data() + static_cast<std::size_t>(s) * o * p, o, p);
          if (need_db) {
            Tensor& gb = bias.grad_buffer();
            for (int r = 0; r < o; ++r) gb[r] += ordered_sum(dy.data() + static_cast<std::size_t>(r) * p, p);
          }
          if (need_dw) {
            const Real* xs = X.data() + s * in_size;
            const Real* colp = xs;
            if (!pointwise) {
              auto& col = scratch(0, static_cast<std::size_t>(k) * p);
              im2col(xs, dims, kh, kw, g, oh, ow, col.data());
              colp = col.data();
            }
            MapM(weight.grad_buffer().data(), o, k).noalias() += dy * CMapM(colp, k, p).transpose();
          }
          if (need_dx) {
            Real* dxs = x.grad_buffer().data() + s * in_size;
            if (pointwise) {
              MapM(dxs, k, p).noalias() += wm.transpose() * dy;
            } else {
              auto& dcol = scratch(1, static_cast<std::size_t>(k) * p);
              MapM dc(dcol.data(), k, p);
              dc.noalias() = wm.transpose() * dy;
              col2im(dcol.data(), dims, kh, kw, g, oh, ow, dxs);
            }
          }
        }
      });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding,
                     int output_padding) {
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  require_rank4(X, "conv_transpose2d");
  require(W.rank() == 4 && W.dim(0) == X.dim(1),
          "conv_transpose2d: weight " + W.shape_string() + " incompatible with input " +
              X.shape_string());
  require(output_padding < stride, "conv_transpose2d: output_padding must be < stride");
  const int n = X.dim(0), cin = X.dim(1), h = X.dim(2), w = X.dim(3);
  const int cout = W.dim(1), kh = W.dim(2), kw = W.dim(3);
  const int oh = (h - 1) * stride - 2 * padding + kh + output_padding;
  const int ow = (w - 1) * stride - 2 * padding + kw + output_padding;
  const Conv2dGeometry g = Conv2dGeometry::symmetric(stride, padding);
  const ImageDims out_dims{cout, oh, ow};
  const int k = cout * kh * kw;
  const int p = h * w;

  Tensor out({n, cout, oh, ow});
  CMapM wm(W.data(), cin, k);
  for (int s = 0; s < n; ++s) {
    auto& col = scratch(0, static_cast<std::size_t>(k) * p);
    MapM cm(col.data(), k, p);
    cm.noalias() = wm.transpose() * CMapM(X.data() + static_cast<std::size_t>(s) * cin * p, cin, p);
    Real* os = out.data() + static_cast<std::size_t>(s) * cout * oh * ow;
    col2im(col.data(), out_dims, kh, kw, g, h, w, os);
    if (bias) {
      for (int co = 0; co < cout; ++co) {
        const Real b = bias.value()[co];
        Real* plane = os + static_cast<std::size_t>(co) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) plane[i] += b;
      }
    }
  }

  return Var::from_op(
      std::move(out), {x, weight, bias},
      [x, weight, bias, g, out_dims, n, cin, kh, kw, h, w, k, p](const Tensor&, const Tensor& gy) {
        const bool need_dx = x.requires_grad();
        const bool need_dw = weight.requires_grad();
        const bool need_db = bias && bias.requires_grad();
        CMapM wm(weight.value().data(), cin, k);
        const std::size_t out_size =
            static_cast<std::size_t>(out_dims.c) * out_dims.h * out_dims.w;
        for (int s = 0; s < n; ++s) {
          const Real* gys = gy.data() + s * out_size;
          if (need_db) {
            Tensor& gb = bias.grad_buffer();
            const int plane = out_dims.h * out_dims.w;
            for (int co = 0; co < out_dims.c; ++co) {
              gb[co] += ordered_sum(gys + static_cast<std::size_t>(co) * plane, plane);
            }
          }
          if (!need_dx && !need_dw) continue;
          auto& col = scratch(0, static_cast<std::size_t>(k) * p);
          im2col(gys, out_dims, kh, kw, g, h, w, col.data());
          CMapM dcol(col.data(), k, p);
          if (need_dx) {
            MapM(x.grad_buffer().data() + static_cast<std::size_t>(s) * cin * p, cin, p).noalias() +=
                wm * dcol;
          }
          if (need_dw) {
            CMapM xs(x.value().data() + static_cast<std::size_t>(s) * cin * p, cin, p);
            MapM(weight.grad_buffer().data(), cin, k).noalias() += xs * dcol.transpose();
          }
        }
      });
}

Var reflect_pad(const Var& x, int pad) {
  const Tensor& X = x.value();
  require_rank4(X, "reflect_pad");
  const int n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
  require(pad >= 0 && pad < h && pad < w, "reflect_pad: padding must be smaller than the image");
  const int oh = h + 2 * pad, ow = w + 2 * pad;
  auto reflect = [](int i, int size) {
    if (i < 0) return -i;
    if (i >= size) return 2 * size - 2 - i;
    return i;
  };
  std::vector<int> rows(static_cast<std::size_t>(oh)), cols(static_cast<std::size_t>(ow));
  for (int i = 0; i < oh; ++i) rows[i] = reflect(i - pad, h);
  for (int j = 0; j < ow; ++j) cols[j] = reflect(j - pad, w);

  Tensor out({n, c, oh, ow});
  for (int pl = 0; pl < n * c; ++pl) {
    const Real* src = X.data() + static_cast<std::size_t>(pl) * h * w;
    Real* dst = out.data() + static_cast<std::size_t>(pl) * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) dst[i * ow + j] = src[rows[i] * w + cols[j]];
  }
  return Var::from_op(std::move(out), {x}, [x, rows, cols, n, c, h, w, oh, ow](const Tensor&,
                                                                                const Tensor& gy) {
    Tensor& gx = x.grad_buffer();
    for (int pl = 0; pl < n * c; ++pl) {
      Real* dst = gx.data() + static_cast<std::size_t>(pl) * h * w;
      const Real* src = gy.data() + static_cast<std::size_t>(pl) * oh * ow;
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) dst[rows[i] * w + cols[j]] += src[i * ow + j];
    }
  });
}

namespace {

// Shared normalization backward: xhat recomputed from x, mean and inverse std.
void normalize_backward(const Real* x, const Real* gy, Real* gx, int count, Real mean,
                        Real invstd, Real gamma, Real& dgamma, Real& dbeta) {
  double sum_dxhat = 0, sum_dxhat_xhat = 0, sum_gy = 0, sum_gy_xhat = 0;
  for (int i = 0; i < count; ++i) {
    const double xhat = (x[i] - mean) * invstd;
    const double dxhat = double(gy[i]) * gamma;
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
    sum_gy += gy[i];
    sum_gy_xhat += double(gy[i]) * xhat;
  }
  dgamma += static_cast<Real>(sum_gy_xhat);
  dbeta += static_cast<Real>(sum_gy);
  if (!gx) return;
  const double m = count;
  for (int i = 0; i < count; ++i) {
    const double xhat = (x[i] - mean) * invstd;
    const double dxhat = double(gy[i]) * gamma;
    gx[i] += static_cast<Real>(invstd / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat));
  }
}

}  // namespace

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
  const Tensor& X = x.value();
  require_rank4(X, "instance_norm");
  const int n = X.dim(0), c = X.dim(1), hw = X.dim(2) * X.dim(3);
  Tensor stats({n * c, 2});
  Tensor out(X.shape());
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const int plane = s * c + ch;
      const Real* src = X.data() + static_cast<std::size_t>(plane) * hw;
      Real* dst = out.data() + static_cast<std::size_t>(plane) * hw;
      double mean = 0;
      for (int i = 0; i < hw; ++i) mean += src[i];
      mean /= hw;
      double var = 0;
      for (int i = 0; i < hw; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= hw;
      const double invstd = 1.0 / std::sqrt(var + eps);
      const Real g = gamma ? gamma.value()[ch] : Real(1);
      const Real b = beta ? beta.value()[ch] : Real(0);
      for (int i = 0; i < hw; ++i) dst[i] = static_cast<Real>((src[i] - mean) * invstd) * g + b;
      stats[2 * plane] = static_cast<Real>(mean);
      stats[2 * plane + 1] = static_cast<Real>(invstd);
    }
  }
  return Var::from_op(std::move(out), {x, gamma, beta},
                      [x, gamma, beta, stats, n, c, hw](const Tensor&, const Tensor& gy) {
                        Real* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
                        for (int s = 0; s < n; ++s) {
                          for (int ch = 0; ch < c; ++ch) {
                            const int plane = s * c + ch;
                            const std::size_t off = static_cast<std::size_t>(plane) * hw;
                            Real dg = 0, db = 0;
                            normalize_backward(x.value().data() + off, gy.data() + off,
                                               gx ? gx + off : nullptr, hw, stats[2 * plane],
                                               stats[2 * plane + 1],
                                               gamma ? gamma.value()[ch] : Real(1), dg, db);
                            if (gamma && gamma.requires_grad()) gamma.grad_buffer()[ch] += dg;
                            if (beta && beta.requires_grad()) beta.grad_buffer()[ch] += db;
                          }
                        }
                      });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, Real momentum, Real eps) {
  const Tensor& X = x.value();
  require_rank4(X, "batch_norm");
  const int n = X.dim(0), c = X.dim(1), hw = X.dim(2) * X.dim(3);
  Tensor out(X.shape());
  Tensor stats({c, 2});
  for (int ch = 0; ch < c; ++ch) {
    double mean, invstd;
    if (training) {
      double sum = 0, sq = 0;
      for (int s = 0; s < n; ++s) {
        const Real* src = X.data() + (static_cast<std::size_t>(s) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) sum += src[i];
      }
      const double m = static_cast<double>(n) * hw;
      mean = sum / m;
      for (int s = 0; s < n; ++s) {
        const Real* src = X.data() + (static_cast<std::size_t>(s) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) sq += (src[i] - mean) * (src[i] - mean);
      }
      const double var = sq / m;
      invstd = 1.0 / std::sqrt(var + eps);
      const double unbiased = m > 1 ? sq / (m - 1) : var;
      running_mean[ch] = static_cast<Real>((1 - momentum) * running_mean[ch] + momentum * mean);
      running_var[ch] = static_cast<Real>((1 - momentum) * running_var[ch] + momentum * unbiased);
    } else {
      mean = running_mean[ch];
      invstd = 1.0 / std::sqrt(double(running_var[ch]) + eps);
    }
    stats[2 * ch] = static_cast<Real>(mean);
    stats[2 * ch + 1] = static_cast<Real>(invstd);
    const Real g = gamma.value()[ch], b = beta.value()[ch];
    for (int s = 0; s < n; ++s) {
      const std::size_t off = (static_cast<std::size_t>(s) * c + ch) * hw;
      for (int i = 0; i < hw; ++i)
        out[off + i] = static_cast<Real>((X[off + i] - mean) * invstd) * g + b;
    }
  }
  return Var::from_op(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, stats, training, n, c, hw](const Tensor&, const Tensor& gy) {
        Real* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
        // Gather each channel into contiguous buffers so the shared kernel applies.
        const int count = n * hw;
        std::vector<Real> xc(static_cast<std::size_t>(count)), gc(xc.size()), dxc(xc.size());
        for (int ch = 0; ch < c; ++ch) {
          for (int s = 0; s < n; ++s) {
            const std::size_t off = (static_cast<std::size_t>(s) * c + ch) * hw;
            std::copy_n(x.value().data() + off, hw, xc.data() + s * hw);
            std::copy_n(gy.data() + off, hw, gc.data() + s * hw);
          }
          const Real mean = stats[2 * ch], invstd = stats[2 * ch + 1];
          const Real g = gamma.value()[ch];
          Real dg = 0, db = 0;
          if (training) {
            std::fill(dxc.begin(), dxc.end(), Real(0));
            normalize_backward(xc.data(), gc.data(), gx ? dxc.data() : nullptr, count, mean, invstd,
                               g, dg, db);
          } else {
            for (int i = 0; i < count; ++i) {
              const Real xhat = (xc[i] - mean) * invstd;
              dg += gc[i] * xhat;
              db += gc[i];
              dxc[i] = gc[i] * g * invstd;
            }
          }
          if (gamma.requires_grad()) gamma.grad_buffer()[ch] += dg;
          if (beta.requires_grad()) beta.grad_buffer()[ch] += db;
          if (gx) {
            for (int s = 0; s < n; ++s) {
              const std::size_t off = (static_cast<std::size_t>(s) * c + ch) * hw;
              for (int i = 0; i < hw; ++i) gx[off + i] += dxc[s * hw + i];
            }
          }
        }
      });
}

Var relu(const Var& x) {
  return unary(
      x, [](Real v) { return v > 0 ? v : Real(0); },
      [](Real, Real y) { return y > 0 ? Real(1) : Real(0); });
}

Var leaky_relu(const Var& x, Real slope) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = x.value()[i];
    out[i] = v > 0 ? v : slope * v;
  }
  return Var::from_op(std::move(out), {x}, [x, slope](const Tensor&, const Tensor& gy) {
    Tensor& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += x.value()[i] > 0 ? gy[i] : slope * gy[i];
  });
}

Var tanh(const Var& x) {
  return unary(
      x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return Real(1) - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "add: shape mismatch " + a.value().shape_string() +
                                               " vs " + b.value().shape_string());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Var::from_op(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& gy) {
    for (const Var* v : {&a, &b}) {
      if (!v->requires_grad()) continue;
      Tensor& g = v->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, Real(-1))); }

Var mul(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return Var::from_op(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& gy) {
    if (a.requires_grad()) {
      Tensor& g = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      Tensor& g = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * a.value()[i];
    }
  });
}

Var scale(const Var& x, Real s) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * s;
  return Var::from_op(std::move(out), {x}, [x, s](const Tensor&, const Tensor& gy) {
    Tensor& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * s;
  });
}

Var add_scalar(const Var& x, Real s) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] + s;
  return Var::from_op(std::move(out), {x}, [x](const Tensor&, const Tensor& gy) {
    Tensor& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
  });
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<Real>& weights) {
  require(!terms.empty() && terms.size() == weights.size(), "weighted_sum: size mismatch");
  Tensor out(terms.front().shape());
  for (std::size_t t = 0; t < terms.size(); ++t) {
    require(terms[t].value().same_shape(out), "weighted_sum: shape mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[t] * terms[t].value()[i];
  }
  return Var::from_op(std::move(out), terms, [terms, weights](const Tensor&, const Tensor& gy) {
    for (std::size_t t = 0; t < terms.size(); ++t) {
      if (!terms[t].requires_grad()) continue;
      Tensor& g = terms[t].grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += weights[t] * gy[i];
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  require(X.rank() == 2 && W.rank() == 2 && X.dim(1) == W.dim(1),
          "linear: input " + X.shape_string() + " incompatible with weight " + W.shape_string());
  const int n = X.dim(0), in = X.dim(1), o = W.dim(0);
  Tensor out({n, o});
  MapM y(out.data(), n, o);
  y.noalias() = CMapM(X.data(), n, in) * CMapM(W.data(), o, in).transpose();
  if (bias) y.rowwise() += CMapV(bias.value().data(), o).transpose();
  return Var::from_op(std::move(out), {x, weight, bias},
                      [x, weight, bias, n, in, o](const Tensor&, const Tensor& gy) {
                        CMapM dy(gy.data(), n, o);
                        if (x.requires_grad()) {
                          MapM(x.grad_buffer().data(), n, in).noalias() +=
                              dy * CMapM(weight.value().data(), o, in);
                        }
                        if (weight.requires_grad()) {
                          MapM(weight.grad_buffer().data(), o, in).noalias() +=
                              dy.transpose() * CMapM(x.value().data(), n, in);
                        }
                        if (bias && bias.requires_grad()) {
                          Tensor& gb = bias.grad_buffer();
                          for (int j = 0; j < o; ++j) gb[j] += ordered_sum(gy.data() + j, n, o);
                        }
                      });
}

Var max_pool2d(const Var& x, int kernel, int stride, int padding) {
  const Tensor& X = x.value();
  require_rank4(X, "max_pool2d");
  const int n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
  const int oh = conv_output_size(h, kernel, stride, padding, padding);
  const int ow = conv_output_size(w, kernel, stride, padding, padding);
  require(oh > 0 && ow > 0, "max_pool2d: input too small");
  Tensor out({n, c, oh, ow});
  std::vector<int> argmax(out.size());
  for (int pl = 0; pl < n * c; ++pl) {
    const Real* src = X.data() + static_cast<std::size_t>(pl) * h * w;
    for (int oi = 0; oi < oh; ++oi) {
      for (int oj = 0; oj < ow; ++oj) {
        Real best = -std::numeric_limits<Real>::infinity();
        int best_idx = -1;
        for (int ki = 0; ki < kernel; ++ki) {
          const int ii = oi * stride - padding + ki;
          if (ii < 0 || ii >= h) continue;
          for (int kj = 0; kj < kernel; ++kj) {
            const int jj = oj * stride - padding + kj;
            if (jj < 0 || jj >= w) continue;
            if (src[ii * w + jj] > best || best_idx < 0) {
              best = src[ii * w + jj];
              best_idx = ii * w + jj;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(pl) * oh + oi) * ow + oj;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  return Var::from_op(std::move(out), {x}, [x, argmax, h, w, oh, ow](const Tensor&,
                                                                      const Tensor& gy) {
    Tensor& gx = x.grad_buffer();
    const std::size_t per = static_cast<std::size_t>(oh) * ow;
    for (std::size_t o = 0; o < gy.size(); ++o) {
      const std::size_t plane = o / per;
      gx[plane * h * w + argmax[o]] += gy[o];
    }
  });
}

Var avg_pool2d(const Var& x, int kernel, int stride) {
  const Tensor& X = x.value();
  require_rank4(X, "avg_pool2d");
  const int n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
  const int oh = conv_output_size(h, kernel, stride, 0, 0);
  const int ow = conv_output_size(w, kernel, stride, 0, 0);
  require(oh > 0 && ow > 0, "avg_pool2d: input too small");
  const Real inv = Real(1) / Real(kernel * kernel);
  Tensor out({n, c, oh, ow});
  for (int pl = 0; pl < n * c; ++pl) {
    const Real* src = X.data() + static_cast<std::size_t>(pl) * h * w;
    for (int oi = 0; oi < oh; ++oi)
      for (int oj = 0; oj < ow; ++oj) {
        Real acc = 0;
        for (int ki = 0; ki < kernel; ++ki)
          for (int kj = 0; kj < kernel; ++kj) acc += src[(oi * stride + ki) * w + oj * stride + kj];
        out[(static_cast<std::size_t>(pl) * oh + oi) * ow + oj] = acc * inv;
      }
  }
  return Var::from_op(std::move(out), {x}, [x, n, c, h, w, oh, ow, kernel, stride,
                                           inv](const Tensor&, const Tensor& gy) {
    Tensor& gx = x.grad_buffer();
    for (int pl = 0; pl < n * c; ++pl) {
      Real* dst = gx.data() + static_cast<std::size_t>(pl) * h * w;
      for (int oi = 0; oi < oh; ++oi)
        for (int oj = 0; oj < ow; ++oj) {
          const Real g = gy[(static_cast<std::size_t>(pl) * oh + oi) * ow + oj] * inv;
          for (int ki = 0; ki < kernel; ++ki)
            for (int kj = 0; kj < kernel; ++kj) dst[(oi * stride + ki) * w + oj * stride + kj] += g;
        }
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& X = x.value();
  require_rank4(X, "global_avg_pool");
  const int n = X.dim(0), c = X.dim(1), hw = X.dim(2) * X.dim(3);
  Tensor out({n, c});
  for (int pl = 0; pl < n * c; ++pl)
    out[pl] = ordered_sum(X.data() + static_cast<std::size_t>(pl) * hw, hw) / static_cast<Real>(hw);
  return Var::from_op(std::move(out), {x}, [x, n, c, hw](const Tensor&, const Tensor& gy) {
    Tensor& gx = x.grad_buffer();
    for (int pl = 0; pl < n * c; ++pl) {
      const Real g = gy[pl] / Real(hw);
      Real* dst = gx.data() + static_cast<std::size_t>(pl) * hw;
      for (int i = 0; i < hw; ++i) dst[i] += g;
    }
  });
}

Var dropout(const Var& x, Real rate, std::mt19937_64& rng, bool training) {
  if (!training || rate <= 0) return x;
  require(rate < 1, "dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const Real s = Real(1) / (Real(1) - rate);
  Tensor mask(x.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = keep(rng) ? s : Real(0);
    out[i] = x.value()[i] * mask[i];
  }
  return Var::from_op(std::move(out), {x}, [x, mask](const Tensor&, const Tensor& gy) {
    Tensor& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * mask[i];
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Tensor& first = parts.front().value();
  require_rank4(first, "concat_channels");
  const int n = first.dim(0), h = first.dim(2), w = first.dim(3);
  int total = 0;
  std::vector<int> channels;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    require(t.rank() == 4 && t.dim(0) == n && t.dim(2) == h && t.dim(3) == w,
            "concat_channels: incompatible part " + t.shape_string());
    channels.push_back(t.dim(1));
    total += t.dim(1);
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out({n, total, h, w});
  for (int s = 0; s < n; ++s) {
    Real* dst = out.data() + s * total * hw;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::size_t len = channels[i] * hw;
      std::copy_n(parts[i].value().data() + s * len, len, dst);
      dst += len;
    }
  }
  return Var::from_op(std::move(out), parts, [parts, channels, n, total, hw](const Tensor&,
                                                                             const Tensor& gy) {
    for (int s = 0; s < n; ++s) {
      const Real* src = gy.data() + s * total * hw;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        const std::size_t len = channels[i] * hw;
        if (parts[i].requires_grad()) {
          Real* g = parts[i].grad_buffer().data() + s * len;
          for (std::size_t k = 0; k < len; ++k) g[k] += src[k];
        }
        src += len;
      }
    }
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return Var::from_op(std::move(out), {x}, [x](const Tensor&, const Tensor& gy) {
    Tensor& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
  });
}

Var flatten(const Var& x) {
  const int n = x.dim(0);
  return reshape(x, {n, static_cast<int>(x.value().size() / static_cast<std::size_t>(n))});
}

Var repeat_channels(const Var& x, int times) {
  const Tensor& X = x.value();
  require_rank4(X, "repeat_channels");
  if (times == 1) return x;
  const int n = X.dim(0), c = X.dim(1);
  const std::size_t block = static_cast<std::size_t>(c) * X.dim(2) * X.dim(3);
  Tensor out({n, c * times, X.dim(2), X.dim(3)});
  for (int s = 0; s < n; ++s)
    for (int t = 0; t < times; ++t)
      std::copy_n(X.data() + s * block, block, out.data() + (s * times + t) * block);
  return Var::from_op(std::move(out), {x}, [x, n, times, block](const Tensor&, const Tensor& gy) {
    Tensor& g = x.grad_buffer();
    for (int s = 0; s < n; ++s)
      for (int t = 0; t < times; ++t) {
        const Real* src = gy.data() + (s * times + t) * block;
        Real* dst = g.data() + s * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
  });
}

Var slice_batch(const Var& x, int begin, int end) {
  const Tensor& X = x.value();
  require(X.rank() >= 1 && 0 <= begin && begin < end && end <= X.dim(0),
          "slice_batch: bad range");
  const std::size_t per = X.size() / static_cast<std::size_t>(X.dim(0));
  std::vector<int> shape = X.shape();
  shape[0] = end - begin;
  Tensor out(shape, std::vector<Real>(X.data() + begin * per, X.data() + end * per));
  return Var::from_op(std::move(out), {x}, [x, begin, per](const Tensor&, const Tensor& gy) {
    Real* g = x.grad_buffer().data() + begin * per;
    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
  });
}

Var stack_batch(const std::vector<Var>& parts) {
  require(!parts.empty(), "stack_batch: no inputs");
  std::vector<int> shape = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    std::vector<int> s = p.shape();
    s[0] = shape[0];
    require(s == shape, "stack_batch: incompatible shapes");
    total += p.dim(0);
  }
  shape[0] = total;
  Tensor out(shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return Var::from_op(std::move(out), parts, [parts](const Tensor&, const Tensor& gy) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) {
        Tensor& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[off + i];
      }
      off += p.value().size();
    }
  });
}

Var softmax(const Var& logits) {
  const Tensor& X = logits.value();
  require(X.rank() == 2, "softmax: expected [N, C]");
  const int n = X.dim(0), c = X.dim(1);
  Tensor out(X.shape());
  for (int s = 0; s < n; ++s) {
    const Real* row = X.data() + s * c;
    const Real mx = *std::max_element(row, row + c);
    double z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(double(row[j]) - mx);
    for (int j = 0; j < c; ++j) out[s * c + j] = static_cast<Real>(std::exp(double(row[j]) - mx) / z);
  }
  return Var::from_op(std::move(out), {logits}, [logits, n, c](const Tensor& y, const Tensor& gy) {
    Tensor& g = logits.grad_buffer();
    for (int s = 0; s < n; ++s) {
      double dot = 0;
      for (int j = 0; j < c; ++j) dot += double(gy[s * c + j]) * y[s * c + j];
      for (int j = 0; j < c; ++j) g[s * c + j] += static_cast<Real>(y[s * c + j] * (gy[s * c + j] - dot));
    }
  });
}

Var select_column(const Var& matrix, int column) {
  const Tensor& X = matrix.value();
  require(X.rank() == 2 && column >= 0 && column < X.dim(1), "select_column: bad column");
  const int n = X.dim(0), c = X.dim(1);
  Tensor out({n});
  for (int s = 0; s < n; ++s) out[s] = X[s * c + column];
  return Var::from_op(std::move(out), {matrix}, [matrix, n, c, column](const Tensor&,
                                                                        const Tensor& gy) {
    Tensor& g = matrix.grad_buffer();
    for (int s = 0; s < n; ++s) g[s * c + column] += gy[s];
  });
}

Var mean(const Var& x) {
  const std::size_t m = x.value().size();
  require(m > 0, "mean: empty tensor");
  double acc = 0;
  for (Real v : x.value().values()) acc += v;
  return scalar_result(static_cast<Real>(acc / m), {x}, [x, m](const Tensor&, const Tensor& gy) {
    Tensor& g = x.grad_buffer();
    const Real d = gy[0] / Real(m);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

Var sum(const Var& x) {
  double acc = 0;
  for (Real v : x.value().values()) acc += v;
  return scalar_result(static_cast<Real>(acc), {x}, [x](const Tensor&, const Tensor& gy) {
    Tensor& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[0];
  });
}

Var l1_mean(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "l1_mean: shape mismatch " + a.value().shape_string() +
                                               " vs " + b.value().shape_string());
  const std::size_t m = a.value().size();
  require(m > 0, "l1_mean: empty tensor");
  double acc = 0;
  for (std::size_t i = 0; i < m; ++i) acc += std::abs(double(a.value()[i]) - b.value()[i]);
  return scalar_result(static_cast<Real>(acc / m), {a, b}, [a, b, m](const Tensor&,
                                                                      const Tensor& gy) {
    const Real d = gy[0] / Real(m);
    auto sign = [](Real v) { return v > 0 ? Real(1) : (v < 0 ? Real(-1) : Real(0)); };
    if (a.requires_grad()) {
      Tensor& g = a.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) g[i] += d * sign(a.value()[i] - b.value()[i]);
    }
    if (b.requires_grad()) {
      Tensor& g = b.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) g[i] -= d * sign(a.value()[i] - b.value()[i]);
    }
  });
}

Var squared_error_to(const Var& x, Real target) {
  const std::size_t m = x.value().size();
  require(m > 0, "squared_error_to: empty tensor");
  double acc = 0;
  for (Real v : x.value().values()) acc += (double(v) - target) * (double(v) - target);
  return scalar_result(static_cast<Real>(acc / m), {x}, [x, m, target](const Tensor&,
                                                                        const Tensor& gy) {
    Tensor& g = x.grad_buffer();
    const Real d = Real(2) * gy[0] / Real(m);
    for (std::size_t i = 0; i < m; ++i) g[i] += d * (x.value()[i] - target);
  });
}

Var mean_neg_log(const Var& p, Real eps) {
  const std::size_t m = p.value().size();
  require(m > 0, "mean_neg_log: empty tensor");
  double acc = 0;
  for (Real v : p.value().values()) acc -= std::log(std::clamp<double>(v, eps, 1.0 - eps));
  return scalar_result(static_cast<Real>(acc / m), {p}, [p, m, eps](const Tensor&,
                                                                     const Tensor& gy) {
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const Real v = p.value()[i];
      if (v > eps && v < Real(1) - eps) g[i] -= gy[0] / (Real(m) * v);
    }
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const Tensor& X = logits.value();
  require(X.rank() == 2 && X.dim(0) == static_cast<int>(labels.size()),
          "cross_entropy: logits/labels mismatch");
  const int n = X.dim(0), c = X.dim(1);
  Tensor probs(X.shape());
  double loss = 0;
  for (int s = 0; s < n; ++s) {
    require(labels[s] >= 0 && labels[s] < c, "cross_entropy: label out of range");
    const Real* row = X.data() + s * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < c; ++j) probs[s * c + j] = static_cast<Real>(std::exp(row[j] - mx) / z);
    loss += -(row[labels[s]] - mx - std::log(z));
  }
  return scalar_result(static_cast<Real>(loss / n), {logits},
                       [logits, probs, labels, n, c](const Tensor&, const Tensor& gy) {
                         Tensor& g = logits.grad_buffer();
                         const Real d = gy[0] / Real(n);
                         for (int s = 0; s < n; ++s)
                           for (int j = 0; j < c; ++j)
                             g[s * c + j] +=
                                 d * (probs[s * c + j] - (j == labels[s] ? Real(1) : Real(0)));
                       });
}

Var bce_with_logits(const Var& logits, const std::vector<Real>& targets) {
  const std::size_t m = logits.value().size();
  require(m == targets.size() && m > 0, "bce_with_logits: logits/targets mismatch");
  double loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double z = logits.value()[i];
    loss += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return scalar_result(static_cast<Real>(loss / m), {logits},
                       [logits, targets, m](const Tensor&, const Tensor& gy) {
                         Tensor& g = logits.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i) {
                           const Real s = Real(1) / (Real(1) + std::exp(-logits.value()[i]));
                           g[i] += gy[0] * (s - targets[i]) / Real(m);
                         }
                       });
}

}  // namespace jekyll::nn
