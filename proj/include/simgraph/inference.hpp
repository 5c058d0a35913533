#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/graph.hpp>
#include <simgraph/types.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace simgraph {

/// Node-wise gating parameters of the inference module. alpha[0]/beta[0]
/// belong to level 2; level 1 has no gate (its nodes pass through unchanged).
template <typename Scalar>
struct InferenceParams {
  std::vector<Vector<Scalar>> alpha;  // L-1 vectors of length r
  std::vector<Vector<Scalar>> beta;
  Index r = 0;
  Index k = 1;

  Index depth() const { return static_cast<Index>(alpha.size()) + 1; }
  Index dim() const { return r; }
};

/// alpha = 1, beta = 0: reliabilities start near 0.5, leaving the gate
/// un-opinionated between a node and its children until training moves it.
template <typename Scalar>
InferenceParams<Scalar> make_inference_params(Index levels, Index r, Index k) {
  if (levels < 1 || r < 1) {
    throw ConfigError("inference params need at least one level and one node");
  }
  if (k < 1 || k > r) {
    throw ConfigError("top-k size " + std::to_string(k) + " outside [1, " + std::to_string(r) + "]");
  }
  InferenceParams<Scalar> params;
  params.r = r;
  params.k = k;
  params.alpha.assign(static_cast<std::size_t>(levels - 1), Vector<Scalar>::Ones(r));
  params.beta.assign(static_cast<std::size_t>(levels - 1), Vector<Scalar>::Zero(r));
  return params;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// Population standard deviation of each row.
template <typename Derived>
Vector<typename Derived::Scalar> row_population_std(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    const Scalar mean = m.row(i).mean();
    out[i] = std::sqrt((m.row(i).array() - mean).square().mean());
  }
  return out;
}

/// Reliability of one level's nodes for a sample pair.
/// raw:    eta_i = std(u_i) * std(u'_i) over the rescaled normalized CAMs
/// values: p_i = sigmoid(alpha_i * eta_i + beta_i), strictly inside (0, 1)
template <typename Scalar>
struct ReliabilityVector {
  Vector<Scalar> values;
  Vector<Scalar> raw;
};

template <typename Scalar>
ReliabilityVector<Scalar> compute_reliability(const Vector<Scalar>& std_a, const Vector<Scalar>& std_b,
                                              const Vector<Scalar>& alpha, const Vector<Scalar>& beta) {
  if (std_a.size() != std_b.size() || std_a.size() != alpha.size() || alpha.size() != beta.size()) {
    throw ShapeError("compute_reliability: vector lengths differ");
  }
  ReliabilityVector<Scalar> rel;
  rel.raw = std_a.cwiseProduct(std_b);
  rel.values.resize(alpha.size());
  for (Index i = 0; i < alpha.size(); ++i) {
    rel.values[i] = sigmoid(alpha[i] * rel.raw[i] + beta[i]);
  }
  return rel;
}

template <typename Scalar>
ReliabilityVector<Scalar> compute_reliability(const RescaledCamStack<Scalar>& cams_a,
                                              const RescaledCamStack<Scalar>& cams_b,
                                              const Vector<Scalar>& alpha, const Vector<Scalar>& beta) {
  return compute_reliability<Scalar>(row_population_std(cams_a.vectors),
                                     row_population_std(cams_b.vectors), alpha, beta);
}

/// Indices of the k largest entries, ties resolved toward the lowest index.
/// Returned ascending.
template <typename Derived>
std::vector<Index> top_k_indices(const Eigen::MatrixBase<Derived>& row, Index k) {
  const Index r = row.size();
  if (k < 1 || k > r) {
    throw ConfigError("top_k_indices: k = " + std::to_string(k) + " outside [1, " + std::to_string(r) + "]");
  }
  std::vector<Index> idx(static_cast<std::size_t>(r));
  std::iota(idx.begin(), idx.end(), Index(0));
  std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), [&](Index a, Index b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Masked, clamped, sum-one normalization of one edge row. Entries outside
/// the selected set are zero; selected negatives clamp to zero before the
/// divide. A fully clamped selection falls back to the uniform distribution
/// over the set, so the row always sums to one.
template <typename Scalar>
Vector<Scalar> normalize_edges(const Vector<Scalar>& row, const std::vector<Index>& selected) {
  if (selected.empty()) {
    throw ConfigError("normalize_edges: empty index set");
  }
  Vector<Scalar> out = Vector<Scalar>::Zero(row.size());
  Scalar sum = 0;
  for (Index j : selected) {
    const Scalar v = std::max(row[j], Scalar(0));
    out[j] = v;
    sum += v;
  }
  if (sum == Scalar(0)) {
    const Scalar u = Scalar(1) / static_cast<Scalar>(selected.size());
    for (Index j : selected) out[j] = u;
  } else {
    for (Index j : selected) out[j] /= sum;
  }
  return out;
}

/// Row-stochastic rectification weights for one level pair: top-k selection
/// per row of the momentum edge matrix, then clamp-and-normalize.
template <typename Scalar>
Matrix<Scalar> normalized_edge_matrix(const Matrix<Scalar>& omega, Index k) {
  Matrix<Scalar> out(omega.rows(), omega.cols());
  for (Index i = 0; i < omega.rows(); ++i) {
    const Vector<Scalar> row = omega.row(i);
    out.row(i) = normalize_edges<Scalar>(row, top_k_indices(row, k));
  }
  return out;
}

/// W~ for every level pair, from the dataset-level edge store.
template <typename Scalar>
std::vector<Matrix<Scalar>> build_normalized_edges(const EdgeStore<Scalar>& store, Index k) {
  std::vector<Matrix<Scalar>> w;
  w.reserve(store.omega.size());
  for (const auto& omega : store.omega) {
    w.push_back(normalized_edge_matrix(omega, k));
  }
  return w;
}

/// Output of the top-down rectification recursion.
template <typename Scalar>
struct RectifiedNodes {
  std::vector<Vector<Scalar>> values;  // rectified nodes per level, 1..L
  Scalar overall = 0;                  // d_hat = sum of rectified top-level nodes
  std::vector<Scalar> level_sums;      // d^l = sum of raw nodes per level
};

/// Matrix-form recursion: rectified^1 = delta^1, and for l >= 2
///   rectified^l = P^l delta^l + (I - P^l) W~^l rectified^{l-1}.
/// `nodes` holds delta per level 1..L; `reliabilities` and `w_tilde` hold
/// levels 2..L at offset l-2.
template <typename Scalar>
RectifiedNodes<Scalar> rectify(const std::vector<Vector<Scalar>>& nodes,
                               const std::vector<Vector<Scalar>>& reliabilities,
                               const std::vector<Matrix<Scalar>>& w_tilde) {
  if (nodes.empty()) {
    throw ShapeError("rectify: no levels");
  }
  const std::size_t depth = nodes.size();
  if (reliabilities.size() != depth - 1 || w_tilde.size() != depth - 1) {
    throw ShapeError("rectify: expected " + std::to_string(depth - 1) +
                     " reliability vectors and edge matrices");
  }
  const Index r = nodes.front().size();
  for (std::size_t l = 0; l < depth; ++l) {
    if (nodes[l].size() != r) throw ShapeError("rectify: node vector length mismatch");
  }
  for (std::size_t l = 0; l + 1 < depth; ++l) {
    if (reliabilities[l].size() != r) throw ShapeError("rectify: reliability length mismatch");
    if (w_tilde[l].rows() != r || w_tilde[l].cols() != r) {
      throw ShapeError("rectify: edge matrix shape mismatch");
    }
  }

  RectifiedNodes<Scalar> out;
  out.values.resize(depth);
  out.level_sums.resize(depth);
  out.values[0] = nodes[0];
  out.level_sums[0] = nodes[0].sum();
  for (std::size_t l = 1; l < depth; ++l) {
    const Vector<Scalar>& p = reliabilities[l - 1];
    out.values[l] = p.cwiseProduct(nodes[l]) +
                    (Vector<Scalar>::Ones(r) - p).cwiseProduct(w_tilde[l - 1] * out.values[l - 1]);
    out.level_sums[l] = nodes[l].sum();
  }
  out.overall = out.values.back().sum();
  return out;
}

}  // namespace simgraph
