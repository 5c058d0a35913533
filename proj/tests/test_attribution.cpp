#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <simgraph/attribution.hpp>
#include <simgraph/inference.hpp>

#include "helpers.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace simgraph;
using testutil::random_nodes;
using testutil::random_reliabilities;
using testutil::random_row_stochastic;

TEST_CASE("sensitivities: all-p-one collapses to the top level") {
  const Index r = 5;
  std::vector<Vec> ones(2, Vec::Ones(r));
  const auto w = random_row_stochastic(2, r);
  const auto lambdas = node_sensitivities(r, ones, w);
  CHECK(lambdas[2] == Vec::Ones(r));
  CHECK(lambdas[1].isZero(0.0));
  CHECK(lambdas[0].isZero(0.0));
  double total = 0;
  for (const auto& l : lambdas) total += l.sum();
  CHECK(total == doctest::Approx(static_cast<double>(r)));
}

TEST_CASE("sensitivities: conservation and reconstruction on random instances") {
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t depth = 1 + trial % 4;
    const Index r = 2 + static_cast<Index>(trial % 8);
    const auto nodes = random_nodes(depth, r);
    const auto p = random_reliabilities(depth - 1, r);
    const auto w = random_row_stochastic(depth - 1, r);
    const auto lambdas = node_sensitivities(r, p, w);

    double total = 0;
    double reconstructed = 0;
    for (std::size_t l = 0; l < depth; ++l) {
      for (Index i = 0; i < r; ++i) {
        CHECK(lambdas[l][i] >= 0.0);
        total += lambdas[l][i];
        reconstructed += lambdas[l][i] * nodes[l][i];
      }
    }
    CHECK(std::abs(total - static_cast<double>(r)) <= 1e-9 * static_cast<double>(r));
    const double dhat = rectify(nodes, p, w).overall;
    CHECK(testutil::rel_error(reconstructed, dhat) <= 1e-9);
  }
}

TEST_CASE("sensitivities of the worked two-level example") {
  std::vector<Vec> p(1, Vec::Constant(2, 0.5));
  std::vector<Mat> w(1);
  w[0].resize(2, 2);
  w[0] << 1.0, 0.0, 0.5, 0.5;
  const auto lambdas = node_sensitivities(2, p, w);
  CHECK(lambdas[1][0] == doctest::Approx(0.5));
  CHECK(lambdas[1][1] == doctest::Approx(0.5));
  CHECK(lambdas[0][0] == doctest::Approx(0.75));
  CHECK(lambdas[0][1] == doctest::Approx(0.25));
}

namespace {

AttributionReport make_report(RankKey key, std::size_t top_n) {
  std::vector<Vec> nodes(2);
  nodes[0].resize(3);
  nodes[0] << 0.3, 0.1, 0.2;
  nodes[1].resize(3);
  nodes[1] << 0.05, 0.4, 0.0;
  std::vector<Vec> p(1);
  p[0].resize(3);
  p[0] << 0.9, 0.2, 0.6;
  std::vector<Mat> w(1, Mat::Constant(3, 3, 1.0 / 3.0));
  const auto lambdas = node_sensitivities(3, p, w);
  const double overall = rectify(nodes, p, w).overall;
  return rank_nodes(nodes, p, lambdas, overall, key, top_n);
}

}  // namespace

TEST_CASE("rank_nodes: full listing, fallback order on ties, sort oracle") {
  // top_n = L*r lists every node exactly once.
  const auto all = make_report(RankKey::kNodeValue, 6);
  REQUIRE(all.nodes.size() == 6);
  std::vector<std::pair<int, Index>> seen;
  for (const auto& n : all.nodes) seen.emplace_back(n.level, n.index);
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  CHECK(seen.size() == 6);

  // Direct sort oracle on node values (descending).
  for (std::size_t t = 1; t < all.nodes.size(); ++t) {
    CHECK(all.nodes[t - 1].delta >= all.nodes[t].delta);
  }
  CHECK(all.most_dissimilar == 0);
  CHECK(all.nodes[static_cast<std::size_t>(all.most_similar)].delta == 0.0);

  // Self-pair: every delta 0, ranking falls back to (level, index) order.
  std::vector<Vec> zero_nodes(2, Vec::Zero(3));
  std::vector<Vec> p(1, Vec::Constant(3, 0.5));
  std::vector<Mat> w(1, Mat::Constant(3, 3, 1.0 / 3.0));
  const auto lambdas = node_sensitivities(3, p, w);
  const auto self = rank_nodes(zero_nodes, p, lambdas, 0.0, RankKey::kNodeValue, 6);
  for (std::size_t t = 0; t < self.nodes.size(); ++t) {
    CHECK(self.nodes[t].level == static_cast<int>(t / 3 + 1));
    CHECK(self.nodes[t].index == static_cast<Index>(t % 3));
  }
}

TEST_CASE("rank_nodes: reliability key selects then orders by node value") {
  const auto report = make_report(RankKey::kReliability, 2);
  REQUIRE(report.nodes.size() == 2);
  // Most reliable nodes are level2/idx0 (p=0.9) and level1 nodes (p=1).
  // With top_n=2 the two level-1... level 1 has p=1 for all three nodes;
  // selection keeps (1,0) and (1,1) by the tie rule, then orders by delta.
  CHECK(report.nodes[0].level == 1);
  CHECK(report.nodes[0].index == 1);  // delta 0.1 < 0.3
  CHECK(report.nodes[1].level == 1);
  CHECK(report.nodes[1].index == 0);
}

TEST_CASE("rank_nodes rejects oversized top_n") {
  CHECK_THROWS_AS((void)make_report(RankKey::kNodeValue, 7), ConfigError);
}

TEST_CASE("saliency export: scaling rules and raw round trip") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "simgraph_saliency_test").string();
  fs::remove_all(dir);

  CAMStack<double> cams_a, cams_b;
  cams_a.h = cams_b.h = 2;
  cams_a.w = cams_b.w = 3;
  cams_a.maps = Mat::Constant(2, 6, 4.2);          // constant map -> mid-gray
  cams_b.maps = Mat::Zero(2, 6);
  cams_b.maps(0, 4) = 1.0;                          // single max -> 255 there
  cams_b.maps.row(1) = testutil::random_vec(6).transpose();

  std::vector<NodeRecord> nodes(2);
  nodes[0].level = 1;
  nodes[0].index = 0;
  nodes[1].level = 1;
  nodes[1].index = 1;
  export_saliency<double>({cams_a}, {cams_b}, nodes, dir, "pair");

  // Constant map: every payload byte is 128.
  std::ifstream pgm((fs::path(dir) / "pair_L1_n0_a.pgm").string(), std::ios::binary);
  REQUIRE(pgm.good());
  std::string header;
  std::getline(pgm, header);
  CHECK(header == "P5");
  std::getline(pgm, header);
  CHECK(header == "3 2");
  std::getline(pgm, header);  // maxval
  for (int i = 0; i < 6; ++i) CHECK(pgm.get() == 128);

  // Single-max map: exactly one byte is 255.
  std::ifstream pgm_b((fs::path(dir) / "pair_L1_n0_b.pgm").string(), std::ios::binary);
  for (int line = 0; line < 3; ++line) std::getline(pgm_b, header);
  int count255 = 0;
  for (int i = 0; i < 6; ++i) {
    if (pgm_b.get() == 255) ++count255;
  }
  CHECK(count255 == 1);

  // Raw sidecar round trip matches the in-memory CAM bit for bit (f32).
  Index h = 0, w = 0;
  const auto raw = read_f32_sidecar((fs::path(dir) / "pair_L1_n1_b.f32").string(), h, w);
  REQUIRE(h == 2);
  REQUIRE(w == 3);
  for (Index s = 0; s < 6; ++s) {
    CHECK(raw[static_cast<std::size_t>(s)] == static_cast<float>(cams_b.maps(1, s)));
  }
  CHECK(nodes[0].cam_files[0] == "pair_L1_n0_a.pgm");
  fs::remove_all(dir);
}

TEST_CASE("report JSON is deterministic") {
  auto report = make_report(RankKey::kReliability, 4);
  report.id_a = "x";
  report.id_b = "y";
  const auto j1 = report_to_json(report).dump(2);
  const auto j2 = report_to_json(report).dump(2);
  CHECK(j1 == j2);
  CHECK(j1.find("overall_similarity") != std::string::npos);
  CHECK(j1.find("cam_files") != std::string::npos);
}
