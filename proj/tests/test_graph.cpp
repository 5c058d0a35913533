#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <simgraph/graph.hpp>
#include <simgraph/io.hpp>
#include <simgraph/model.hpp>
#include <simgraph/synthetic.hpp>

#include "helpers.hpp"

#include <cmath>
#include <sstream>

using namespace simgraph;
using testutil::random_feature_map;
using testutil::random_unit;

TEST_CASE("similarity nodes: identical, orthonormal, random identity") {
  Vec e(2);
  e << 0.6, 0.8;
  CHECK(compute_similarity_nodes(e, e).sum() == 0.0);

  Vec x(2), y(2);
  x << 1, 0;
  y << 0, 1;
  const Vec d = compute_similarity_nodes(x, y);
  CHECK(d[0] == 1.0);
  CHECK(d[1] == 1.0);

  for (int trial = 0; trial < 50; ++trial) {
    const Vec a = random_unit(9);
    const Vec b = random_unit(9);
    const Vec nodes = compute_similarity_nodes(a, b);
    for (Index i = 0; i < nodes.size(); ++i) {
      CHECK(nodes[i] >= 0.0);
      CHECK(nodes[i] <= 4.0);
      CHECK(nodes[i] == doctest::Approx((a[i] - b[i]) * (a[i] - b[i])));
    }
    // Sum identity: sum delta = 2 - 2 <a, b>.
    CHECK(testutil::rel_error(nodes.sum(), 2.0 - 2.0 * a.dot(b)) <= 1e-9);
  }

  Vec s(3);
  CHECK_THROWS_AS((void)compute_similarity_nodes(e, s), ShapeError);
}

TEST_CASE("CAM stack: identity/zero projections and embedding consistency") {
  const auto z = random_feature_map(4, 3, 3);
  const auto zt = linearize_map(z);

  ProjectionLayer<double> ident{Matrix<double>::Identity(4, 4), 1};
  const auto cams = compute_cams(zt, ident);
  CHECK(cams.maps == zt.data);

  ProjectionLayer<double> zero{Matrix<double>::Zero(4, 4), 1};
  CHECK(compute_cams(zt, zero).maps.isZero(0.0));

  const ProjectionLayer<double> proj{testutil::random_mat(6, 4), 1};
  const auto stack = compute_cams(zt, proj);
  const Vec e = pool_and_project(zt, proj);
  for (Index i = 0; i < e.size(); ++i) {
    CHECK(testutil::rel_error(stack.maps.row(i).mean(), e[i]) <= 1e-9);
  }
}

TEST_CASE("rescale: constant map stays constant with unit norm") {
  CAMStack<double> cams;
  cams.h = 4;
  cams.w = 4;
  cams.maps = Matrix<double>::Constant(1, 16, -3.0);
  const auto scaled = rescale_and_normalize(cams, 2, 2);
  for (Index s = 0; s < 4; ++s) CHECK(scaled.vectors(0, s) == doctest::Approx(-0.5));
  CHECK(std::abs(scaled.vectors.row(0).norm() - 1.0) <= 1e-12);
}

TEST_CASE("rescale at native dims only vectorizes and normalizes") {
  CAMStack<double> cams;
  cams.h = 2;
  cams.w = 3;
  cams.maps = testutil::random_mat(2, 6);
  const auto scaled = rescale_and_normalize(cams, 2, 3);
  for (Index i = 0; i < 2; ++i) {
    const Vec expect = cams.maps.row(i) / cams.maps.row(i).norm();
    CHECK((scaled.vectors.row(i).transpose() - expect).norm() <= 1e-12);
  }
}

TEST_CASE("rescale 4x4 -> 2x2 equals direct block means") {
  CAMStack<double> cams;
  cams.h = 4;
  cams.w = 4;
  cams.maps = testutil::random_mat(3, 16);
  const auto scaled = rescale_and_normalize(cams, 2, 2);
  for (Index i = 0; i < 3; ++i) {
    Vec blocks(4);
    for (Index by = 0; by < 2; ++by) {
      for (Index bx = 0; bx < 2; ++bx) {
        double sum = 0;
        for (Index y = 0; y < 2; ++y) {
          for (Index x = 0; x < 2; ++x) {
            sum += cams.maps(i, (by * 2 + y) * 4 + (bx * 2 + x));
          }
        }
        blocks[by * 2 + bx] = sum / 4.0;
      }
    }
    blocks /= blocks.norm();
    CHECK((scaled.vectors.row(i).transpose() - blocks).norm() <= 1e-9);
  }
}

TEST_CASE("rescale: non-divisible dims use area weights that sum to one") {
  const auto w = pooling_weights<double>(5, 3);
  REQUIRE(w.rows() == 3);
  REQUIRE(w.cols() == 5);
  for (Index i = 0; i < 3; ++i) {
    CHECK(w.row(i).sum() == doctest::Approx(1.0));
    for (Index j = 0; j < 5; ++j) CHECK(w(i, j) >= 0.0);
  }
  // A constant input must stay constant through any rescale.
  CAMStack<double> cams;
  cams.h = 5;
  cams.w = 7;
  cams.maps = Matrix<double>::Constant(1, 35, 2.0);
  const auto scaled = rescale_and_normalize(cams, 3, 4);
  const double expect = 1.0 / std::sqrt(12.0);
  for (Index s = 0; s < 12; ++s) CHECK(scaled.vectors(0, s) == doctest::Approx(expect));
}

TEST_CASE("all-zero CAM sets the zero flag and stays zero") {
  CAMStack<double> cams;
  cams.h = 2;
  cams.w = 2;
  cams.maps = Matrix<double>::Zero(2, 4);
  cams.maps.row(1) = testutil::random_vec(4).transpose();
  const auto scaled = rescale_and_normalize(cams, 2, 2);
  CHECK(scaled.zero[0] == 1);
  CHECK(scaled.zero[1] == 0);
  CHECK(scaled.vectors.row(0).norm() == 0.0);
  // Zero rows contribute zero to every inner product.
  const auto corr = level_pair_correlations(scaled, scaled);
  CHECK(corr(0, 0) == 0.0);
  CHECK(corr(0, 1) == 0.0);
  CHECK(corr(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("pair correlations match a double-loop oracle and stay in [-1,1]") {
  CAMStack<double> upper, lower;
  upper.h = lower.h = 3;
  upper.w = lower.w = 3;
  upper.maps = testutil::random_mat(5, 9);
  lower.maps = testutil::random_mat(5, 9);
  const auto u = rescale_and_normalize(upper, 3, 3);
  const auto v = rescale_and_normalize(lower, 3, 3);
  const auto corr = level_pair_correlations(u, v);
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 5; ++j) {
      double dot = 0;
      for (Index s = 0; s < 9; ++s) dot += u.vectors(i, s) * v.vectors(j, s);
      CHECK(testutil::rel_error(corr(i, j), dot) <= 1e-9);
      CHECK(corr(i, j) >= -1.0 - 1e-12);
      CHECK(corr(i, j) <= 1.0 + 1e-12);
    }
  }
  // Identical vectors correlate to exactly 1 (Cauchy-Schwarz equality).
  const auto self = level_pair_correlations(u, u);
  for (Index i = 0; i < 5; ++i) CHECK(self(i, i) == doctest::Approx(1.0));
}

TEST_CASE("edge symmetry under sample swap") {
  SynthSpec spec;
  spec.shapes = {{4, 8, 8}, {6, 4, 4}};
  spec.classes = 2;
  spec.samples_per_class = 1;
  spec.noise = {0.3, 0.3};
  const auto model = make_model<double>({4, 6}, 5, 2, 0.9, 11);
  EncodeOptions opts;
  opts.keep_rescaled = true;
  const auto a = encode_sample(model, synthesize_pyramid(spec, 0, 0, 5), opts);
  const auto b = encode_sample(model, synthesize_pyramid(spec, 1, 0, 5), opts);
  const auto ab = pair_correlations(a, b);
  const auto ba = pair_correlations(b, a);
  REQUIRE(ab.size() == ba.size());
  for (std::size_t p = 0; p < ab.size(); ++p) {
    CHECK((ab[p] - ba[p]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("momentum update arithmetic") {
  auto store = make_edge_store<double>(2, 1, 0.5);
  std::vector<std::vector<Matrix<double>>> batch{{Matrix<double>::Constant(1, 1, 1.0)}};
  batch_edge_update(store, batch);
  CHECK(store.omega[0](0, 0) == doctest::Approx(0.5));
  CHECK(store.update_count == 1);

  auto frozen = make_edge_store<double>(2, 1, 1.0);
  batch_edge_update(frozen, batch);
  CHECK(frozen.omega[0](0, 0) == 0.0);  // gamma = 1 ignores new statistics
}

TEST_CASE("momentum matches the geometric-series closed form") {
  const double gamma = 0.95;
  const double c = 0.7;
  auto store = make_edge_store<double>(2, 2, gamma);
  store.omega[0] = Matrix<double>::Constant(2, 2, -0.3);
  const Matrix<double> target = Matrix<double>::Constant(2, 2, c);
  std::vector<std::vector<Matrix<double>>> batch{{target}};
  for (int t = 1; t <= 100; ++t) {
    batch_edge_update(store, batch);
    const double expect = std::pow(gamma, t) * -0.3 + (1.0 - std::pow(gamma, t)) * c;
    CHECK(std::abs(store.omega[0](0, 0) - expect) <= 1e-12);
  }
}

TEST_CASE("edge update validates inputs") {
  CHECK_THROWS_AS((void)make_edge_store<double>(2, 2, 1.5), ConfigError);
  auto store = make_edge_store<double>(3, 2, 0.5);
  std::vector<std::vector<Matrix<double>>> wrong_pairs{{Matrix<double>::Zero(2, 2)}};
  CHECK_THROWS_AS(batch_edge_update(store, wrong_pairs), ShapeError);
  std::vector<std::vector<Matrix<double>>> wrong_shape{
      {Matrix<double>::Zero(2, 2), Matrix<double>::Zero(3, 2)}};
  CHECK_THROWS_AS(batch_edge_update(store, wrong_shape), ShapeError);
}

TEST_CASE("edge store file round trip") {
  auto store = make_edge_store<double>(3, 4, 0.5);
  store.omega[0] = testutil::random_mat(4, 4);
  store.omega[1] = testutil::random_mat(4, 4);
  store.update_count = 17;
  std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
  write_edges(buf, store);
  const auto back = read_edges<double>(buf);
  CHECK(back.gamma == store.gamma);
  CHECK(back.update_count == 17);
  REQUIRE(back.omega.size() == 2);
  CHECK(back.omega[0] == store.omega[0]);
  CHECK(back.omega[1] == store.omega[1]);
}

TEST_CASE("edge store reader rejects bad magic") {
  std::istringstream in("AVSX????????", std::ios::binary);
  CHECK_THROWS_AS((void)read_edges<double>(in), ParseError);
}
