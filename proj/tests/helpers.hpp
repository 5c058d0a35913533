#pragma once

#include <simgraph/graph.hpp>
#include <simgraph/inference.hpp>
#include <simgraph/pipeline.hpp>
#include <simgraph/synthetic.hpp>
#include <simgraph/types.hpp>

#include <vector>

namespace testutil {

using simgraph::Index;
using simgraph::Mat;
using simgraph::Vec;

inline simgraph::SynthRng& rng() {
  static simgraph::SynthRng r(0x5eed5eedULL);
  return r;
}

inline double uniform(double lo, double hi) { return lo + (hi - lo) * rng().next_unit(); }

inline Vec random_vec(Index n, double scale = 1.0) {
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * rng().next_gaussian();
  return v;
}

inline Mat random_mat(Index rows, Index cols, double scale = 1.0) {
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = scale * rng().next_gaussian();
  }
  return m;
}

inline Vec random_unit(Index n) {
  Vec v = random_vec(n);
  while (v.norm() == 0.0) v = random_vec(n);
  return v / v.norm();
}

inline simgraph::FeatureMap<double> random_feature_map(Index c, Index h, Index w, int level = 1) {
  simgraph::FeatureMap<double> z;
  z.data = random_mat(c, h * w);
  z.h = h;
  z.w = w;
  z.level = level;
  return z;
}

/// Reliabilities strictly inside (0, 1).
inline std::vector<Vec> random_reliabilities(std::size_t levels, Index r) {
  std::vector<Vec> p(levels);
  for (auto& v : p) {
    v.resize(r);
    for (Index i = 0; i < r; ++i) v[i] = uniform(0.05, 0.95);
  }
  return p;
}

/// Row-stochastic matrices built through the production normalization path
/// (random raw edges, random top-k).
inline std::vector<Mat> random_row_stochastic(std::size_t levels, Index r) {
  std::vector<Mat> w(levels);
  for (auto& m : w) {
    const Mat raw = random_mat(r, r);
    const Index k = 1 + static_cast<Index>(rng().next_u64() % static_cast<std::uint64_t>(r));
    m = simgraph::normalized_edge_matrix(raw, k);
  }
  return w;
}

inline std::vector<Vec> random_nodes(std::size_t levels, Index r) {
  std::vector<Vec> nodes(levels);
  for (auto& v : nodes) {
    v.resize(r);
    for (Index i = 0; i < r; ++i) v[i] = uniform(0.0, 4.0);
  }
  return nodes;
}

// ---------------------------------------------------------------------------
// Independent oracles.
// ---------------------------------------------------------------------------

/// Direct max pooling per channel.
inline Vec maxpool_oracle(const simgraph::FeatureMap<double>& z) {
  Vec v(z.channels());
  for (Index i = 0; i < z.channels(); ++i) {
    double best = z.data(i, 0);
    for (Index s = 1; s < z.pixels(); ++s) best = std::max(best, z.data(i, s));
    v[i] = best;
  }
  return v;
}

/// Direct average pooling per channel.
inline Vec avgpool_oracle(const simgraph::FeatureMap<double>& z) {
  Vec v(z.channels());
  for (Index i = 0; i < z.channels(); ++i) {
    double sum = 0;
    for (Index s = 0; s < z.pixels(); ++s) sum += z.data(i, s);
    v[i] = sum / static_cast<double>(z.pixels());
  }
  return v;
}

/// Literal scalar recursion: rectified^1 = delta^1, then
/// rectified^l_i = p_i delta^l_i + (1 - p_i) sum_j w_ij rectified^{l-1}_j.
inline std::vector<Vec> scalar_rectify_oracle(const std::vector<Vec>& nodes,
                                              const std::vector<Vec>& p,
                                              const std::vector<Mat>& w) {
  const std::size_t depth = nodes.size();
  const Index r = nodes.front().size();
  std::vector<Vec> out(depth);
  out[0] = nodes[0];
  for (std::size_t l = 1; l < depth; ++l) {
    out[l].resize(r);
    for (Index i = 0; i < r; ++i) {
      double mix = 0;
      for (Index j = 0; j < r; ++j) mix += w[l - 1](i, j) * out[l - 1][j];
      out[l][i] = p[l - 1][i] * nodes[l][i] + (1.0 - p[l - 1][i]) * mix;
    }
  }
  return out;
}

/// Central finite difference of a scalar function.
template <typename F>
double central_difference(F f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

inline double rel_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / denom;
}

/// Gradcheck comparison: relative tolerance with an absolute floor at the
/// finite-difference noise level.
inline bool grad_close(double analytic, double fd, double tol, double abs_floor = 1e-9) {
  const double err = std::abs(analytic - fd);
  return err <= std::max(tol * std::max(std::abs(analytic), std::abs(fd)), abs_floor);
}

}  // namespace testutil
