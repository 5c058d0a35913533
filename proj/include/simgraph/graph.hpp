#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/pipeline.hpp>
#include <simgraph/types.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace simgraph {

/// delta_i = |e_i - e'_i|^2 between two normalized embeddings of one level.
/// Entries live in [0, 4].
template <typename DerivedA, typename DerivedB>
Vector<typename DerivedA::Scalar> compute_similarity_nodes(const Eigen::MatrixBase<DerivedA>& e,
                                                           const Eigen::MatrixBase<DerivedB>& e_other) {
  if (e.size() != e_other.size()) {
    throw ShapeError("compute_similarity_nodes: embedding lengths differ: " +
                     std::to_string(e.size()) + " vs " + std::to_string(e_other.size()));
  }
  return (e - e_other).array().square();
}

/// Spatial maps of the embedding coordinates: row i holds u_i = sum_j a_ij z~_j
/// flattened row-major. The spatial mean of row i equals embedding coordinate i.
template <typename Scalar>
struct CAMStack {
  Matrix<Scalar> maps;  // r x (h*w)
  Index h = 0;
  Index w = 0;
  int level = 0;
};

template <typename Scalar>
CAMStack<Scalar> compute_cams(const LinearizedMap<Scalar>& z, const ProjectionLayer<Scalar>& proj) {
  if (proj.in_dim() != z.channels()) {
    throw ShapeError("compute_cams: projection expects " + std::to_string(proj.in_dim()) +
                     " channels, feature map has " + std::to_string(z.channels()));
  }
  CAMStack<Scalar> out;
  out.maps = proj.weights * z.data;
  out.h = z.h;
  out.w = z.w;
  out.level = z.level;
  return out;
}

/// Area-weighted average-pooling weights for one axis: W(i, s) is the fraction
/// of target cell i covered by source cell s. Rows sum to one; for divisible
/// sizes this reduces to plain block means. Exactly linear in the input.
template <typename Scalar>
Matrix<Scalar> pooling_weights(Index from, Index to) {
  Matrix<Scalar> weights = Matrix<Scalar>::Zero(to, from);
  const double scale = static_cast<double>(from) / static_cast<double>(to);
  for (Index i = 0; i < to; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    const Index first = static_cast<Index>(lo);
    const Index last = std::min(from - 1, static_cast<Index>(std::ceil(hi)) - 1);
    for (Index s = first; s <= last; ++s) {
      const double overlap = std::min(hi, static_cast<double>(s + 1)) - std::max(lo, static_cast<double>(s));
      if (overlap > 0) weights(i, s) = static_cast<Scalar>(overlap / scale);
    }
  }
  return weights;
}

/// CAMs of adjacent levels brought to a common grid, vectorized row-major and
/// L2-normalized. All-zero maps keep a zero row and raise their flag instead
/// of dividing.
template <typename Scalar>
struct RescaledCamStack {
  Matrix<Scalar> vectors;  // r x (th*tw), rows unit-norm or zero
  std::vector<char> zero;  // per-row all-zero flag
  Index th = 0;
  Index tw = 0;
};

template <typename Scalar>
RescaledCamStack<Scalar> rescale_and_normalize(const CAMStack<Scalar>& cams, Index th, Index tw) {
  RescaledCamStack<Scalar> out;
  out.th = th;
  out.tw = tw;
  const Index r = cams.maps.rows();
  out.vectors.resize(r, th * tw);
  out.zero.assign(static_cast<std::size_t>(r), 0);

  const bool identity = (th == cams.h && tw == cams.w);
  Matrix<Scalar> row_w, col_w;
  if (!identity) {
    row_w = pooling_weights<Scalar>(cams.h, th);
    col_w = pooling_weights<Scalar>(cams.w, tw);
  }
  using RowMajorMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  for (Index i = 0; i < r; ++i) {
    if (identity) {
      out.vectors.row(i) = cams.maps.row(i);
    } else {
      const Vector<Scalar> rowvec = cams.maps.row(i);
      Eigen::Map<const RowMajorMat> src(rowvec.data(), cams.h, cams.w);
      const RowMajorMat pooled = row_w * src * col_w.transpose();  // th x tw
      out.vectors.row(i) = Eigen::Map<const Vector<Scalar>>(pooled.data(), th * tw);
    }
    const Scalar n = out.vectors.row(i).norm();
    if (n == Scalar(0)) {
      out.zero[static_cast<std::size_t>(i)] = 1;
    } else {
      out.vectors.row(i) /= n;
    }
  }
  return out;
}

/// Common grid for CAMs of two adjacent levels: elementwise min of their
/// spatial dims.
inline std::pair<Index, Index> pairing_dims(Index h_upper, Index w_upper, Index h_lower, Index w_lower) {
  return {std::min(h_upper, h_lower), std::min(w_upper, w_lower)};
}

/// Correlation matrix between nodes of adjacent levels for a single sample:
/// omega_hat(i, j) = <u^l_i, u^{l-1}_j> over the rescaled normalized CAMs.
template <typename Scalar>
Matrix<Scalar> level_pair_correlations(const RescaledCamStack<Scalar>& upper,
                                       const RescaledCamStack<Scalar>& lower) {
  if (upper.vectors.cols() != lower.vectors.cols()) {
    throw ShapeError("level_pair_correlations: rescaled CAM sizes differ: " +
                     std::to_string(upper.vectors.cols()) + " vs " +
                     std::to_string(lower.vectors.cols()));
  }
  return upper.vectors * lower.vectors.transpose();
}

/// Dataset-level correlation edges, maintained as an exponential moving
/// average over per-sample correlation matrices. omega[0] connects level 2 to
/// level 1, omega[L-2] connects level L to level L-1. Negative correlations
/// are stored as-is; clamping happens at inference-time normalization.
template <typename Scalar>
struct EdgeStore {
  std::vector<Matrix<Scalar>> omega;  // L-1 matrices, r x r
  Index r = 0;
  Scalar gamma = Scalar(0.95);
  std::uint64_t update_count = 0;

  Index depth() const { return static_cast<Index>(omega.size()) + 1; }
  Index dim() const { return r; }
};

template <typename Scalar>
EdgeStore<Scalar> make_edge_store(Index levels, Index r, Scalar gamma) {
  if (!(gamma >= Scalar(0) && gamma <= Scalar(1))) {
    throw ConfigError("momentum factor must lie in [0, 1]");
  }
  if (levels < 1 || r < 1) {
    throw ConfigError("edge store needs at least one level and one node");
  }
  EdgeStore<Scalar> store;
  store.r = r;
  store.gamma = gamma;
  store.omega.assign(static_cast<std::size_t>(levels - 1), Matrix<Scalar>::Zero(r, r));
  return store;
}

/// One momentum step per level pair: omega <- gamma * omega + (1 - gamma) * m
/// where m is the mean of the batch's per-sample correlation matrices.
template <typename Scalar>
void batch_edge_update(EdgeStore<Scalar>& store,
                       const std::vector<std::vector<Matrix<Scalar>>>& per_sample) {
  if (per_sample.empty()) return;
  const std::size_t pairs = store.omega.size();
  for (const auto& sample : per_sample) {
    if (sample.size() != pairs) {
      throw ShapeError("batch_edge_update: sample carries " + std::to_string(sample.size()) +
                       " correlation matrices, store expects " + std::to_string(pairs));
    }
  }
  for (std::size_t p = 0; p < pairs; ++p) {
    Matrix<Scalar> mean = Matrix<Scalar>::Zero(store.omega[p].rows(), store.omega[p].cols());
    for (const auto& sample : per_sample) {
      if (sample[p].rows() != mean.rows() || sample[p].cols() != mean.cols()) {
        throw ShapeError("batch_edge_update: correlation matrix shape mismatch at pair " +
                         std::to_string(p));
      }
      mean += sample[p];
    }
    mean /= static_cast<Scalar>(per_sample.size());
    store.omega[p] = store.gamma * store.omega[p] + (Scalar(1) - store.gamma) * mean;
  }
  ++store.update_count;
}

}  // namespace simgraph
