#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/types.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace simgraph {

/// One activation volume. `data` stores the c channels as rows, each row a
/// row-major h*w spatial slice, so channel-wise spatial reductions are row
/// reductions and linear projections are plain matrix products.
template <typename Scalar>
struct FeatureMap {
  Matrix<Scalar> data;  // c x (h*w)
  Index h = 0;
  Index w = 0;
  int level = 0;

  Index channels() const { return data.rows(); }
  Index pixels() const { return h * w; }
};

/// Ordered stack of feature maps for one sample, bottom to top.
template <typename Scalar>
struct FeaturePyramid {
  std::vector<FeatureMap<Scalar>> levels;
  std::string sample_id;
  int label = 0;

  Index depth() const { return static_cast<Index>(levels.size()); }
};

/// Feature map preprocessed by the max-pool linearization. Channel averages
/// of a LinearizedMap equal max + mean of the source channels.
template <typename Scalar>
struct LinearizedMap {
  Matrix<Scalar> data;  // c x (h*w)
  Index h = 0;
  Index w = 0;
  int level = 0;

  Index channels() const { return data.rows(); }
  Index pixels() const { return h * w; }
};

/// Per-level linear head mapping pooled channel vectors into the shared
/// r-dimensional embedding space. Purely linear: no bias, so the projected
/// spatial maps stay consistent with the embeddings.
template <typename Scalar>
struct ProjectionLayer {
  Matrix<Scalar> weights;  // r x c
  int level = 0;

  Index out_dim() const { return weights.rows(); }
  Index in_dim() const { return weights.cols(); }
};

/// z~ = g~(z) + z: every maximal entry of a channel is additionally scaled by
/// K = HW / #max, all other entries pass through unchanged. Ties all count as
/// maxima, which keeps the channel average exactly max + mean.
template <typename Scalar>
LinearizedMap<Scalar> linearize_map(const FeatureMap<Scalar>& z) {
  LinearizedMap<Scalar> out;
  out.h = z.h;
  out.w = z.w;
  out.level = z.level;
  out.data = z.data;
  const Index hw = z.pixels();
  for (Index i = 0; i < z.data.rows(); ++i) {
    const Scalar m = z.data.row(i).maxCoeff();
    const Index n_max = (z.data.row(i).array() == m).count();
    const Scalar k = static_cast<Scalar>(hw) / static_cast<Scalar>(n_max);
    for (Index s = 0; s < hw; ++s) {
      if (z.data(i, s) == m) out.data(i, s) += k * m;
    }
  }
  return out;
}

/// Channel-wise spatial means: the g_avg half of the pooling decomposition.
template <typename Derived>
Vector<typename Derived::Scalar> channel_means(const Eigen::MatrixBase<Derived>& data) {
  return data.rowwise().mean();
}

/// e = h(g_avg(z~)). Equivalent to projecting max+avg pooled features of the
/// original map.
template <typename Scalar>
Vector<Scalar> pool_and_project(const LinearizedMap<Scalar>& z, const ProjectionLayer<Scalar>& proj) {
  if (proj.in_dim() != z.channels()) {
    throw ShapeError("pool_and_project: projection expects " + std::to_string(proj.in_dim()) +
                     " channels, feature map has " + std::to_string(z.channels()));
  }
  return proj.weights * channel_means(z.data);
}

/// e / ||e||. A zero embedding is rejected rather than epsilon-padded: a
/// silently renormalized zero vector would poison every similarity node
/// downstream.
template <typename Derived>
Vector<typename Derived::Scalar> normalize_embedding(const Eigen::MatrixBase<Derived>& e) {
  using Scalar = typename Derived::Scalar;
  const Scalar n = e.norm();
  if (n == Scalar(0)) {
    throw NumericError("degenerate embedding: zero norm");
  }
  return e / n;
}

}  // namespace simgraph
