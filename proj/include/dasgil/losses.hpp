#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dasgil/ops.hpp"

namespace dasgil::losses {

struct LossWeights {
  double lambda_T = 1.0;
  double lambda_D = 1.0;
  double lambda_S = 1.0;
  // Per-layer triplet margins; layers without an entry fall back to `default_margin`.
  std::map<int, double> margins;
  double default_margin = 1.0;

  double margin(int layer) const {
    auto it = margins.find(layer);
    return it == margins.end() ? default_margin : it->second;
  }
  // InvalidConfig unless every weight is finite and nonnegative and every margin positive.
  void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

// Ground-truth depth resized to a coarser level together with its validity mask.
template <typename Scalar>
struct DepthTarget {
  Tensor<Scalar> depth;  // (n, 1, h, w), meters
  Tensor<Scalar> mask;   // 1 where valid
};

enum class ResizeMode { AreaValid, Nearest };

// Downsamples full-resolution depth (0 = invalid) by an integer factor. Area mode
// averages the valid source pixels of each block; a block with none stays invalid.
template <typename Scalar>
DepthTarget<Scalar> resize_depth(const Tensor<Scalar>& depth, int factor, ResizeMode mode = ResizeMode::AreaValid) {
  const Shape s = depth.shape;
  require(s.c == 1 && factor >= 1 && s.h % factor == 0 && s.w % factor == 0, ErrorCode::ShapeMismatch,
          "resize_depth: " + s.str() + " not divisible by " + std::to_string(factor));
  const Shape o{s.n, 1, s.h / factor, s.w / factor};
  DepthTarget<Scalar> t{Tensor<Scalar>(o), Tensor<Scalar>(o)};
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < o.h; ++y)
      for (int x = 0; x < o.w; ++x) {
        if (mode == ResizeMode::Nearest) {
          const Scalar v = depth.at(n, 0, y * factor + factor / 2, x * factor + factor / 2);
          t.depth.at(n, 0, y, x) = v;
          t.mask.at(n, 0, y, x) = v > 0 ? 1 : 0;
          continue;
        }
        Scalar acc = 0;
        int valid = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) {
            const Scalar v = depth.at(n, 0, y * factor + dy, x * factor + dx);
            if (v > 0) {
              acc += v;
              ++valid;
            }
          }
        if (valid > 0) {
          t.depth.at(n, 0, y, x) = acc / valid;
          t.mask.at(n, 0, y, x) = 1;
        }
      }
  return t;
}

// Mean absolute error over valid pixels of each sample, averaged over the batch.
template <typename Scalar>
Var<Scalar> depth_l1(const Var<Scalar>& pred, const DepthTarget<Scalar>& target) {
  const Shape s = pred.shape();
  require(s == target.depth.shape && s == target.mask.shape, ErrorCode::ShapeMismatch,
          "depth_l1: prediction " + s.str() + " vs target " + target.depth.shape.str());
  const Eigen::Index per = s.per_sample();
  Vec<Scalar> weight(s.size());
  Scalar total = 0;
  for (int n = 0; n < s.n; ++n) {
    const auto m = target.mask.data.segment(n * per, per);
    const Scalar count = m.sum();
    require(count > 0, ErrorCode::NoValidPixels, "depth_l1: sample " + std::to_string(n) + " has no valid pixels");
    weight.segment(n * per, per) = m / (count * s.n);
  }
  const Vec<Scalar> diff = pred.value().data - target.depth.data;
  total = (diff.cwiseAbs().cwiseProduct(weight)).sum();
  return make_op<Scalar>(Tensor<Scalar>::scalar(total), {pred}, [diff, weight](Node<Scalar>& self) {
    const Vec<Scalar> sign = diff.unaryExpr([](Scalar v) { return Scalar((v > 0) - (v < 0)); });
    self.parent(0).grad_buffer() += self.grad[0] * sign.cwiseProduct(weight);
  });
}

// Multi-scale depth loss: sum over levels of `depth_l1` against the resized ground truth.
template <typename Scalar>
Var<Scalar> depth_loss(const std::map<int, Var<Scalar>>& predictions, const Tensor<Scalar>& gt_depth,
                       ResizeMode mode = ResizeMode::AreaValid) {
  require(!predictions.empty(), ErrorCode::ShapeMismatch, "depth_loss: no predictions");
  std::vector<Var<Scalar>> terms;
  for (const auto& [layer, pred] : predictions) {
    const Shape ps = pred.shape();
    require(ps.h > 0 && gt_depth.shape.h % ps.h == 0 && gt_depth.shape.h / ps.h == gt_depth.shape.w / ps.w,
            ErrorCode::ShapeMismatch, "depth_loss: layer " + std::to_string(layer) + " resolution " + ps.str());
    terms.push_back(depth_l1(pred, resize_depth(gt_depth, gt_depth.shape.h / ps.h, mode)));
  }
  return ops::weighted_sum(terms, std::vector<Scalar>(terms.size(), Scalar(1)));
}

// Mean per-pixel cross entropy of softmax(scores) against integer labels.
template <typename Scalar>
Var<Scalar> seg_cross_entropy(const Var<Scalar>& scores, const std::vector<std::int32_t>& labels) {
  const Shape s = scores.shape();
  require(static_cast<Eigen::Index>(labels.size()) == Eigen::Index(s.n) * s.plane(), ErrorCode::ShapeMismatch,
          "seg_cross_entropy: label count does not match scores " + s.str());
  Tensor<Scalar> prob = ops::softmax_channels(scores.value());
  const Eigen::Index plane = s.plane();
  const Scalar count = static_cast<Scalar>(labels.size());
  Scalar total = 0;
  for (int n = 0; n < s.n; ++n) {
    const auto sc = scores.value().sample(n);
    for (Eigen::Index i = 0; i < plane; ++i) {
      const int label = labels[n * plane + i];
      require(label >= 0 && label < s.c, ErrorCode::ClassOutOfRange,
              "seg_cross_entropy: class " + std::to_string(label) + " with " + std::to_string(s.c) + " classes");
      const Scalar mx = sc.col(i).maxCoeff();
      const Scalar lse = mx + std::log((sc.col(i).array() - mx).exp().sum());
      total += lse - sc(label, i);
    }
  }
  return make_op<Scalar>(Tensor<Scalar>::scalar(total / count), {scores},
                         [prob = std::move(prob), labels, count](Node<Scalar>& self) {
                           Tensor<Scalar> g = prob;
                           const Eigen::Index plane = g.shape.plane();
                           for (int n = 0; n < g.shape.n; ++n)
                             for (Eigen::Index i = 0; i < plane; ++i) g.sample(n)(labels[n * plane + i], i) -= 1;
                           self.parent(0).grad_buffer() += (self.grad[0] / count) * g.data;
                         });
}

// Least-squares discriminator objective: virtual features labelled 0, real labelled 1.
template <typename Scalar>
Var<Scalar> dis_loss(const Var<Scalar>& d_virtual, const Var<Scalar>& d_real) {
  const auto& v = d_virtual.value().data;
  const auto& r = d_real.value().data;
  require(v.size() > 0 && r.size() > 0, ErrorCode::EmptyBatch, "dis_loss: empty batch");
  const Scalar value = Scalar(0.5) * (v.squaredNorm() / v.size() + (r.array() - 1).square().sum() / r.size());
  return make_op<Scalar>(Tensor<Scalar>::scalar(value), {d_virtual, d_real}, [](Node<Scalar>& self) {
    Node<Scalar>& vn = self.parent(0);
    Node<Scalar>& rn = self.parent(1);
    const Scalar g = self.grad[0];
    if (vn.requires_grad) vn.grad_buffer() += (g / vn.value.data.size()) * vn.value.data;
    if (rn.requires_grad)
      rn.grad_buffer().array() += (g / rn.value.data.size()) * (rn.value.data.array() - 1);
  });
}

// Least-squares generator objective: push virtual features toward the real label.
template <typename Scalar>
Var<Scalar> gen_loss(const Var<Scalar>& d_virtual) {
  const auto& v = d_virtual.value().data;
  require(v.size() > 0, ErrorCode::EmptyBatch, "gen_loss: empty batch");
  const Scalar value = Scalar(0.5) * (v.array() - 1).square().sum() / v.size();
  return make_op<Scalar>(Tensor<Scalar>::scalar(value), {d_virtual}, [](Node<Scalar>& self) {
    Node<Scalar>& vn = self.parent(0);
    vn.grad_buffer().array() += (self.grad[0] / vn.value.data.size()) * (vn.value.data.array() - 1);
  });
}

// Ratio-hinge triplet loss max(0, 1 - |a-n| / (margin + |a-p|)) on flattened samples,
// averaged over the batch.
template <typename Scalar>
Var<Scalar> triplet_ratio(const Var<Scalar>& anchor, const Var<Scalar>& positive, const Var<Scalar>& negative,
                          Scalar margin) {
  const Shape s = anchor.shape();
  require(positive.shape().size() == s.size() && negative.shape().size() == s.size() &&
              positive.shape().n == s.n && negative.shape().n == s.n,
          ErrorCode::DimensionMismatch, "triplet: anchor/positive/negative dimensions differ");
  require(margin > 0, ErrorCode::InvalidConfig, "triplet: margin must be positive");
  const Eigen::Index dim = s.per_sample();
  Eigen::Map<const RowMat<Scalar>> A(anchor.value().data.data(), s.n, dim);
  Eigen::Map<const RowMat<Scalar>> P(positive.value().data.data(), s.n, dim);
  Eigen::Map<const RowMat<Scalar>> N(negative.value().data.data(), s.n, dim);
  RowMat<Scalar> ap = A - P;
  RowMat<Scalar> an = A - N;
  Vec<Scalar> dp = ap.rowwise().norm();
  Vec<Scalar> dn = an.rowwise().norm();
  Scalar total = 0;
  for (int i = 0; i < s.n; ++i) total += std::max(Scalar(0), Scalar(1) - dn[i] / (margin + dp[i]));
  total /= s.n;
  return make_op<Scalar>(
      Tensor<Scalar>::scalar(total), {anchor, positive, negative},
      [ap = std::move(ap), an = std::move(an), dp, dn, margin, dim](Node<Scalar>& self) {
        const int batch = static_cast<int>(dp.size());
        RowMat<Scalar> ga = RowMat<Scalar>::Zero(batch, dim);
        RowMat<Scalar> gp = RowMat<Scalar>::Zero(batch, dim);
        RowMat<Scalar> gn = RowMat<Scalar>::Zero(batch, dim);
        for (int i = 0; i < batch; ++i) {
          const Scalar denom = margin + dp[i];
          if (Scalar(1) - dn[i] / denom <= 0) continue;
          const Scalar scale = self.grad[0] / batch;
          if (dn[i] > 0) {
            const Scalar c = -scale / denom / dn[i];
            ga.row(i) += c * an.row(i);
            gn.row(i) -= c * an.row(i);
          }
          if (dp[i] > 0) {
            const Scalar c = scale * dn[i] / (denom * denom) / dp[i];
            ga.row(i) += c * ap.row(i);
            gp.row(i) -= c * ap.row(i);
          }
        }
        auto push = [](Node<Scalar>& n, const RowMat<Scalar>& g) {
          if (n.requires_grad) n.grad_buffer() += Eigen::Map<const Vec<Scalar>>(g.data(), g.size());
        };
        push(self.parent(0), ga);
        push(self.parent(1), gp);
        push(self.parent(2), gn);
      });
}

// Multi-scale triplet loss. `levels[i]` holds encoder level i+1.
template <typename Scalar>
Var<Scalar> triplet_multi(const std::vector<Var<Scalar>>& anchor, const std::vector<Var<Scalar>>& positive,
                          const std::vector<Var<Scalar>>& negative, const std::vector<int>& layers,
                          const LossWeights& weights) {
  require(!layers.empty(), ErrorCode::LayerOutOfRange, "triplet_multi: no layers");
  std::vector<Var<Scalar>> terms;
  for (int layer : layers) {
    require(layer >= 1 && layer <= static_cast<int>(anchor.size()) && anchor.size() == positive.size() &&
                anchor.size() == negative.size(),
            ErrorCode::LayerOutOfRange, "triplet_multi: layer " + std::to_string(layer));
    terms.push_back(triplet_ratio(anchor[layer - 1], positive[layer - 1], negative[layer - 1],
                                  static_cast<Scalar>(weights.margin(layer))));
  }
  return ops::weighted_sum(terms, std::vector<Scalar>(terms.size(), Scalar(1)));
}

// Generator-side objective: gen + lambda_T * triplet + lambda_D * depth + lambda_S * seg.
template <typename Scalar>
Var<Scalar> total_gen_objective(const Var<Scalar>& gen, const Var<Scalar>& triplet, const Var<Scalar>& depth,
                                const Var<Scalar>& seg, const LossWeights& w) {
  for (const auto* v : {&gen, &triplet, &depth, &seg})
    require(std::isfinite(static_cast<double>(v->item())), ErrorCode::NonFiniteInput,
            "total_gen_objective: non-finite component");
  return ops::weighted_sum<Scalar>({gen, triplet, depth, seg},
                                   {Scalar(1), Scalar(w.lambda_T), Scalar(w.lambda_D), Scalar(w.lambda_S)});
}

// Value-level conveniences over plain vectors.
template <typename Scalar>
Var<Scalar> as_column(const Vec<Scalar>& v) {
  return Var<Scalar>::constant(Tensor<Scalar>(Shape{static_cast<int>(v.size()), 1, 1, 1}, v));
}

template <typename Scalar>
Scalar dis_loss(const Vec<Scalar>& d_virtual, const Vec<Scalar>& d_real) {
  return dis_loss(as_column(d_virtual), as_column(d_real)).item();
}

template <typename Scalar>
Scalar gen_loss(const Vec<Scalar>& d_virtual) {
  return gen_loss(as_column(d_virtual)).item();
}

template <typename Scalar>
Scalar triplet_single(const Vec<Scalar>& a, const Vec<Scalar>& p, const Vec<Scalar>& n, Scalar margin) {
  auto row = [](const Vec<Scalar>& v) {
    return Var<Scalar>::constant(Tensor<Scalar>(Shape{1, static_cast<int>(v.size()), 1, 1}, v));
  };
  return triplet_ratio(row(a), row(p), row(n), margin).item();
}

inline double total_gen_objective(double gen, double triplet, double depth, double seg, const LossWeights& w) {
  auto c = [](double v) { return Var<double>::constant(Tensor<double>::scalar(v)); };
  return total_gen_objective(c(gen), c(triplet), c(depth), c(seg), w).item();
}

}  // namespace dasgil::losses
