#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "dasgil/autodiff.hpp"

namespace dasgil::ops {

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          "add: " + a.shape().str() + " vs " + b.shape().str());
  Tensor<Scalar> out(a.shape(), a.value().data + b.value().data);
  return make_op<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->grad_buffer() += self.grad;
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), a.value().data * factor);
  return make_op<Scalar>(std::move(out), {a}, [factor](Node<Scalar>& self) {
    self.parent(0).grad_buffer() += factor * self.grad;
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  auto out = Tensor<Scalar>::scalar(a.value().data.sum());
  return make_op<Scalar>(std::move(out), {a}, [](Node<Scalar>& self) {
    self.parent(0).grad_buffer().array() += self.grad[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  const auto count = static_cast<Scalar>(a.value().data.size());
  return scale(sum(a), Scalar(1) / count);
}

// Sum of scalar terms with fixed coefficients.
template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<Var<Scalar>>& terms, const std::vector<Scalar>& weights) {
  require(terms.size() == weights.size() && !terms.empty(), ErrorCode::ShapeMismatch,
          "weighted_sum: term/weight count mismatch");
  Scalar total = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].shape().size() == 1, ErrorCode::ShapeMismatch, "weighted_sum expects scalars");
    total += weights[i] * terms[i].item();
  }
  return make_op<Scalar>(Tensor<Scalar>::scalar(total), terms, [weights](Node<Scalar>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i)
      if (self.parents[i]->requires_grad) self.parents[i]->grad_buffer()[0] += weights[i] * self.grad[0];
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  require(shape.size() == a.shape().size(), ErrorCode::ShapeMismatch, "reshape: size mismatch");
  Tensor<Scalar> out(shape, a.value().data);
  return make_op<Scalar>(std::move(out), {a}, [](Node<Scalar>& self) {
    self.parent(0).grad_buffer() += self.grad;
  });
}

template <typename Scalar>
Var<Scalar> flatten(const Var<Scalar>& a) {
  const Shape s = a.shape();
  return reshape(a, Shape{s.n, static_cast<int>(s.per_sample()), 1, 1});
}

// Samples [begin, begin + count) along the batch axis.
template <typename Scalar>
Var<Scalar> slice_batch(const Var<Scalar>& a, int begin, int count) {
  const Shape s = a.shape();
  require(begin >= 0 && count >= 0 && begin + count <= s.n, ErrorCode::ShapeMismatch,
          "slice_batch out of range for " + s.str());
  const Eigen::Index per = s.per_sample();
  Tensor<Scalar> out(Shape{count, s.c, s.h, s.w}, a.value().data.segment(begin * per, count * per));
  return make_op<Scalar>(std::move(out), {a}, [begin, per](Node<Scalar>& self) {
    self.parent(0).grad_buffer().segment(begin * per, self.grad.size()) += self.grad;
  });
}

template <typename Scalar>
Var<Scalar> concat_batch(const std::vector<Var<Scalar>>& parts) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat_batch: no inputs");
  Shape s = parts[0].shape();
  s.n = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    require(ps.c == s.c && ps.h == s.h && ps.w == s.w, ErrorCode::ShapeMismatch,
            "concat_batch: mismatched sample shape");
    s.n += ps.n;
  }
  Tensor<Scalar> out(s);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.data.segment(offset, p.value().data.size()) = p.value().data;
    offset += p.value().data.size();
  }
  return make_op<Scalar>(std::move(out), parts, [](Node<Scalar>& self) {
    Eigen::Index off = 0;
    for (auto& p : self.parents) {
      const Eigen::Index len = p->value.data.size();
      if (p->requires_grad) p->grad_buffer() += self.grad.segment(off, len);
      off += len;
    }
  });
}

// Concatenation along channels; all inputs share n, h, w.
template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat_channels: no inputs");
  Shape s = parts[0].shape();
  s.c = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    require(ps.n == s.n && ps.h == s.h && ps.w == s.w, ErrorCode::ShapeMismatch,
            "concat_channels: " + ps.str() + " vs " + parts[0].shape().str());
    s.c += ps.c;
  }
  Tensor<Scalar> out(s);
  for (int n = 0; n < s.n; ++n) {
    Scalar* dst = out.sample_ptr(n);
    for (const auto& p : parts) {
      const Eigen::Index len = p.shape().per_sample();
      std::copy_n(p.value().sample_ptr(n), len, dst);
      dst += len;
    }
  }
  return make_op<Scalar>(std::move(out), parts, [](Node<Scalar>& self) {
    const Eigen::Index per = self.value.shape.per_sample();
    for (int n = 0; n < self.value.shape.n; ++n) {
      Eigen::Index off = n * per;
      for (auto& p : self.parents) {
        const Eigen::Index len = p->value.shape.per_sample();
        if (p->requires_grad) p->grad_buffer().segment(n * len, len) += self.grad.segment(off, len);
        off += len;
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& a, Scalar slope) {
  Tensor<Scalar> out(a.shape(), a.value().data.unaryExpr([slope](Scalar v) { return v > 0 ? v : slope * v; }));
  return make_op<Scalar>(std::move(out), {a}, [slope](Node<Scalar>& self) {
    const auto& x = self.parent(0).value.data;
    self.parent(0).grad_buffer().array() +=
        self.grad.array() * x.array().unaryExpr([slope](Scalar v) { return v > 0 ? Scalar(1) : slope; });
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  return leaky_relu(a, Scalar(0));
}

// log(1 + e^x), evaluated without overflow.
template <typename Scalar>
Var<Scalar> softplus(const Var<Scalar>& a) {
  auto f = [](Scalar v) { return std::max(v, Scalar(0)) + std::log1p(std::exp(-std::abs(v))); };
  Tensor<Scalar> out(a.shape(), a.value().data.unaryExpr(f));
  return make_op<Scalar>(std::move(out), {a}, [](Node<Scalar>& self) {
    const auto& x = self.parent(0).value.data;
    self.parent(0).grad_buffer().array() +=
        self.grad.array() * x.array().unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
  });
}

namespace detail {

struct ConvGeometry {
  int in_c, in_h, in_w, kernel, stride, pad, out_h, out_w;
  Eigen::Index rows() const { return Eigen::Index(in_c) * kernel * kernel; }
  Eigen::Index cols() const { return Eigen::Index(out_h) * out_w; }
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* col) {
  for (int c = 0; c < g.in_c; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const Scalar* plane = x + Eigen::Index(c) * g.in_h * g.in_w;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) {
            std::fill_n(col, g.out_w, Scalar(0));
            col += g.out_w;
            continue;
          }
          const Scalar* row = plane + Eigen::Index(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            *col++ = (ix >= 0 && ix < g.in_w) ? row[ix] : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im(const Scalar* col, const ConvGeometry& g, Scalar* x) {
  for (int c = 0; c < g.in_c; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        Scalar* plane = x + Eigen::Index(c) * g.in_h * g.in_w;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) {
            col += g.out_w;
            continue;
          }
          Scalar* row = plane + Eigen::Index(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox, ++col) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.in_w) row[ix] += *col;
          }
        }
      }
}

}  // namespace detail

// 2-D convolution. weight: (out_c, in_c, k, k); bias: (1, out_c, 1, 1).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, int stride,
                   int pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  require(ws.c == xs.c && ws.h == ws.w, ErrorCode::ShapeMismatch,
          "conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  require(bias.shape().size() == ws.n, ErrorCode::ShapeMismatch, "conv2d: bias length");
  detail::ConvGeometry g{xs.c, xs.h, xs.w, ws.h, stride, pad, (xs.h + 2 * pad - ws.h) / stride + 1,
                         (xs.w + 2 * pad - ws.w) / stride + 1};
  require(g.out_h > 0 && g.out_w > 0, ErrorCode::ShapeMismatch, "conv2d: empty output");

  const bool keep_cols = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  Tensor<Scalar> out(Shape{xs.n, ws.n, g.out_h, g.out_w});
  Eigen::Map<const RowMat<Scalar>> w(weight.value().data.data(), ws.n, g.rows());
  const auto& b = bias.value().data;
  auto cols = std::make_shared<std::vector<RowMat<Scalar>>>();
  RowMat<Scalar> col(g.rows(), g.cols());
  for (int n = 0; n < xs.n; ++n) {
    detail::im2col(x.value().sample_ptr(n), g, col.data());
    auto y = out.sample(n);
    y.noalias() = w * col;
    y.colwise() += b;
    if (keep_cols) cols->push_back(col);
  }
  return make_op<Scalar>(std::move(out), {x, weight, bias}, [g, cols](Node<Scalar>& self) {
    Node<Scalar>& xn = self.parent(0);
    Node<Scalar>& wn = self.parent(1);
    Node<Scalar>& bn = self.parent(2);
    const Shape ys = self.value.shape;
    Eigen::Map<const RowMat<Scalar>> w(wn.value.data.data(), ys.c, g.rows());
    RowMat<Scalar> dcol(g.rows(), g.cols());
    for (int n = 0; n < ys.n; ++n) {
      Eigen::Map<const RowMat<Scalar>> dy(self.grad.data() + n * ys.per_sample(), ys.c, g.cols());
      if (wn.requires_grad) {
        Eigen::Map<RowMat<Scalar>> dw(wn.grad_buffer().data(), ys.c, g.rows());
        dw.noalias() += dy * (*cols)[n].transpose();
      }
      if (bn.requires_grad) bn.grad_buffer() += dy.rowwise().sum();
      if (xn.requires_grad) {
        dcol.noalias() = w.transpose() * dy;
        detail::col2im(dcol.data(), g, xn.grad_buffer().data() + n * xn.value.shape.per_sample());
      }
    }
  });
}

// Nearest-neighbour 2x spatial upsampling.
template <typename Scalar>
Var<Scalar> upsample2x(const Var<Scalar>& x) {
  const Shape s = x.shape();
  Tensor<Scalar> out(Shape{s.n, s.c, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < 2 * s.h; ++y)
        for (int xx = 0; xx < 2 * s.w; ++xx) out.at(n, c, y, xx) = x.value().at(n, c, y / 2, xx / 2);
  return make_op<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    Node<Scalar>& p = self.parent(0);
    const Shape ps = p.value.shape;
    auto& g = p.grad_buffer();
    const Shape os = self.value.shape;
    for (int n = 0; n < os.n; ++n)
      for (int c = 0; c < os.c; ++c)
        for (int y = 0; y < os.h; ++y)
          for (int xx = 0; xx < os.w; ++xx)
            g[((Eigen::Index(n) * ps.c + c) * ps.h + y / 2) * ps.w + xx / 2] +=
                self.grad[((Eigen::Index(n) * os.c + c) * os.h + y) * os.w + xx];
  });
}

// Training-mode batch normalisation: statistics over (n, h, w) per channel.
// gamma, beta: (1, c, 1, 1).
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-5)) {
  const Shape s = x.shape();
  require(gamma.shape().size() == s.c && beta.shape().size() == s.c, ErrorCode::ShapeMismatch,
          "batch_norm: affine parameter length");
  const Eigen::Index plane = s.plane();
  const Scalar m = static_cast<Scalar>(Eigen::Index(s.n) * plane);
  Vec<Scalar> mu = Vec<Scalar>::Zero(s.c);
  Vec<Scalar> var = Vec<Scalar>::Zero(s.c);
  for (int n = 0; n < s.n; ++n) mu += x.value().sample(n).rowwise().sum();
  mu /= m;
  for (int n = 0; n < s.n; ++n) var += (x.value().sample(n).colwise() - mu).array().square().matrix().rowwise().sum();
  var /= m;
  Vec<Scalar> inv_std = (var.array() + eps).rsqrt().matrix();

  auto xhat = std::make_shared<Tensor<Scalar>>(s);
  Tensor<Scalar> out(s);
  const auto& g = gamma.value().data;
  const auto& b = beta.value().data;
  for (int n = 0; n < s.n; ++n) {
    xhat->sample(n) = inv_std.asDiagonal() * (x.value().sample(n).colwise() - mu);
    out.sample(n) = (g.asDiagonal() * xhat->sample(n)).colwise() + b;
  }
  return make_op<Scalar>(std::move(out), {x, gamma, beta}, [xhat, inv_std, m](Node<Scalar>& self) {
    const Shape s = self.value.shape;
    Vec<Scalar> dy_sum = Vec<Scalar>::Zero(s.c);
    Vec<Scalar> dy_xhat = Vec<Scalar>::Zero(s.c);
    for (int n = 0; n < s.n; ++n) {
      Eigen::Map<const RowMat<Scalar>> dy(self.grad.data() + n * s.per_sample(), s.c, s.plane());
      dy_sum += dy.rowwise().sum();
      dy_xhat += dy.cwiseProduct(xhat->sample(n)).rowwise().sum();
    }
    Node<Scalar>& xn = self.parent(0);
    Node<Scalar>& gn = self.parent(1);
    Node<Scalar>& bn = self.parent(2);
    if (gn.requires_grad) gn.grad_buffer() += dy_xhat;
    if (bn.requires_grad) bn.grad_buffer() += dy_sum;
    if (xn.requires_grad) {
      const Vec<Scalar> coeff = gn.value.data.cwiseProduct(inv_std) / m;
      for (int n = 0; n < s.n; ++n) {
        Eigen::Map<const RowMat<Scalar>> dy(self.grad.data() + n * s.per_sample(), s.c, s.plane());
        Eigen::Map<RowMat<Scalar>> dx(xn.grad_buffer().data() + n * s.per_sample(), s.c, s.plane());
        RowMat<Scalar> t = (m * dy).colwise() - dy_sum;
        t -= dy_xhat.asDiagonal() * xhat->sample(n);
        dx += coeff.asDiagonal() * t;
      }
    }
  });
}

// Affine map on flattened samples. x: (n, in, 1, 1); weight: (out, in, 1, 1); bias: (1, out, 1, 1).
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const Eigen::Index in = xs.per_sample();
  require(ws.per_sample() == in, ErrorCode::ShapeMismatch,
          "linear: weight " + ws.str() + " incompatible with input " + xs.str());
  require(bias.shape().size() == ws.n, ErrorCode::ShapeMismatch, "linear: bias length");
  Eigen::Map<const RowMat<Scalar>> X(x.value().data.data(), xs.n, in);
  Eigen::Map<const RowMat<Scalar>> W(weight.value().data.data(), ws.n, in);
  Tensor<Scalar> out(Shape{xs.n, ws.n, 1, 1});
  Eigen::Map<RowMat<Scalar>> Y(out.data.data(), xs.n, ws.n);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += bias.value().data.transpose();
  return make_op<Scalar>(std::move(out), {x, weight, bias}, [in](Node<Scalar>& self) {
    Node<Scalar>& xn = self.parent(0);
    Node<Scalar>& wn = self.parent(1);
    Node<Scalar>& bn = self.parent(2);
    const int batch = self.value.shape.n;
    const int outs = self.value.shape.c;
    Eigen::Map<const RowMat<Scalar>> dY(self.grad.data(), batch, outs);
    if (wn.requires_grad) {
      Eigen::Map<const RowMat<Scalar>> X(xn.value.data.data(), batch, in);
      Eigen::Map<RowMat<Scalar>> dW(wn.grad_buffer().data(), outs, in);
      dW.noalias() += dY.transpose() * X;
    }
    if (bn.requires_grad) bn.grad_buffer() += dY.colwise().sum().transpose();
    if (xn.requires_grad) {
      Eigen::Map<const RowMat<Scalar>> W(wn.value.data.data(), outs, in);
      Eigen::Map<RowMat<Scalar>> dX(xn.grad_buffer().data(), batch, in);
      dX.noalias() += dY * W;
    }
  });
}

// Per-pixel softmax over channels (value only).
template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& scores) {
  Tensor<Scalar> out(scores.shape);
  for (int n = 0; n < scores.shape.n; ++n) {
    auto s = scores.sample(n);
    auto o = out.sample(n);
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mx = s.colwise().maxCoeff();
    o = (s.rowwise() - mx).array().exp().matrix();
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> z = o.colwise().sum();
    o.array().rowwise() /= z.array();
  }
  return out;
}

}  // namespace dasgil::ops
