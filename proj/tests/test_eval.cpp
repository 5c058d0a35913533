#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <simgraph/config.hpp>
#include <simgraph/eval.hpp>
#include <simgraph/io.hpp>

#include <filesystem>

#include "helpers.hpp"

#include <algorithm>
#include <sstream>

using namespace simgraph;

namespace {

/// Exhaustive stable-sort recall oracle: ascending distance, ties by gallery
/// index, self excluded.
RecallResult recall_oracle(const Mat& dist, const std::vector<int>& labels,
                           const std::vector<int>& ks) {
  RecallResult out;
  out.ks = ks;
  out.n_queries = dist.rows();
  out.recalls.assign(ks.size(), 0.0);
  for (Index q = 0; q < dist.rows(); ++q) {
    std::vector<Index> order;
    for (Index j = 0; j < dist.cols(); ++j) {
      if (j != q) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      if (dist(q, a) != dist(q, b)) return dist(q, a) < dist(q, b);
      return a < b;
    });
    for (std::size_t t = 0; t < ks.size(); ++t) {
      bool hit = false;
      for (int rank = 0; rank < ks[t]; ++rank) {
        if (labels[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])] ==
            labels[static_cast<std::size_t>(q)]) {
          hit = true;
          break;
        }
      }
      if (hit) out.recalls[t] += 1.0;
    }
  }
  for (auto& r : out.recalls) r /= static_cast<double>(dist.rows());
  return out;
}

Mat random_distance_matrix(Index n) {
  Mat d = testutil::random_mat(n, n).cwiseAbs();
  for (Index i = 0; i < n; ++i) d(i, i) = 0.0;
  return d;
}

}  // namespace

TEST_CASE("recall: duplicates give R@1 = 1, unique labels give 0") {
  // Gallery contains an exact duplicate of each query: distance 0 off-diagonal.
  const Index n = 6;
  Mat dist = Mat::Constant(n, n, 2.0);
  std::vector<int> labels(n);
  for (Index i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = static_cast<int>(i / 2);
    dist(i, i) = 0.0;
  }
  for (Index i = 0; i < n; i += 2) {
    dist(i, i + 1) = dist(i + 1, i) = 0.0;  // duplicate pair
  }
  auto rec = recall_at_k(dist, labels, {1});
  CHECK(rec.recalls[0] == 1.0);

  std::vector<int> unique_labels(n);
  for (Index i = 0; i < n; ++i) unique_labels[static_cast<std::size_t>(i)] = static_cast<int>(i);
  rec = recall_at_k(random_distance_matrix(n), unique_labels, {1, 2, 4});
  for (double r : rec.recalls) CHECK(r == 0.0);
}

TEST_CASE("recall matches the exhaustive oracle on random toy sets") {
  for (int trial = 0; trial < 60; ++trial) {
    const Index n = 6 + static_cast<Index>(testutil::rng().next_u64() % 25);  // up to 30
    Mat dist = random_distance_matrix(n);
    if (trial % 3 == 0) {
      // Exercise tie-breaking: quantize distances onto a coarse grid.
      dist = (dist * 4.0).array().floor() / 4.0;
    }
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = static_cast<int>(testutil::rng().next_u64() % 3);
    std::vector<int> ks{1, 2, 4};
    const auto got = recall_at_k(dist, labels, ks);
    const auto want = recall_oracle(dist, labels, ks);
    for (std::size_t t = 0; t < ks.size(); ++t) CHECK(got.recalls[t] == want.recalls[t]);
    // Monotone in K.
    for (std::size_t t = 1; t < ks.size(); ++t) CHECK(got.recalls[t] >= got.recalls[t - 1]);
  }
}

TEST_CASE("recall validates the K list") {
  const Mat d = random_distance_matrix(5);
  const std::vector<int> labels{0, 0, 1, 1, 2};
  CHECK_THROWS_AS((void)recall_at_k(d, labels, {1, 5}), ConfigError);   // K >= gallery
  CHECK_THROWS_AS((void)recall_at_k(d, labels, {2, 1}), ConfigError);   // not ascending
  CHECK_THROWS_AS((void)recall_at_k(d, labels, {0}), ConfigError);      // K < 1
  CHECK_THROWS_AS((void)recall_at_k(d, labels, std::vector<int>{}), ConfigError);
}

TEST_CASE("sliced similarity reproduces the monolithic matrix bit for bit") {
  SynthSpec spec;
  spec.shapes = {{4, 8, 8}, {6, 4, 4}};
  spec.classes = 3;
  spec.samples_per_class = 3;
  spec.noise = {0.3, 0.3};
  Dataset data = synthesize_dataset(spec, 13);
  const auto model = make_model<double>({4, 6}, 8, 2, 0.9, 13);
  const auto enc = encode_dataset(model, data);
  const auto ctx = make_inference_context(model);
  const Index n = static_cast<Index>(data.size());

  SlicedSimilarity<double> mono(model, ctx, enc, n);
  const Mat full = full_similarity_matrix(mono);
  for (Index slice_rows : {Index(1), Index(3), n}) {
    SlicedSimilarity<double> sliced(model, ctx, enc, slice_rows);
    const Mat assembled = full_similarity_matrix(sliced);
    CHECK(assembled == full);  // bit-exact
    // Streaming recall agrees with full-matrix recall.
    SlicedSimilarity<double> again(model, ctx, enc, slice_rows);
    const auto rec_stream = recall_at_k(again, dataset_labels(data), {1, 2});
    const auto rec_full = recall_at_k(full, dataset_labels(data), {1, 2});
    CHECK(rec_stream.recalls == rec_full.recalls);
  }
  // Single slice when slice_rows = N.
  SlicedSimilarity<double> one(model, ctx, enc, n);
  SimilaritySlice s;
  CHECK(one.next(s));
  CHECK(s.values.rows() == n);
  CHECK(!one.next(s));
}

TEST_CASE("variant distances: degeneracies") {
  SynthSpec spec;
  spec.shapes = {{4, 8, 8}, {6, 4, 4}, {8, 2, 2}};
  spec.classes = 2;
  spec.samples_per_class = 2;
  spec.noise = {0.2, 0.2, 0.2};
  Dataset data = synthesize_dataset(spec, 29);
  auto model = make_model<double>({4, 6, 8}, 8, 2, 0.9, 29);
  const auto enc = encode_dataset(model, data);
  auto ctx = make_inference_context(model);

  // Forcing p = 1 reduces the full distance to the top-level baseline.
  ctx.force_full_reliability = true;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    for (std::size_t j = 0; j < enc.size(); ++j) {
      const double full = pair_distance(model, ctx, enc[i], enc[j], Variant::kFull);
      const double top = pair_distance(model, ctx, enc[i], enc[j], Variant::kTopLevel);
      CHECK(full == top);
    }
  }
  ctx.force_full_reliability = false;

  // Multi-layer equals the mean of per-level node sums.
  const double multi = pair_distance(model, ctx, enc[0], enc[1], Variant::kMultiLayer);
  double expect = 0;
  for (std::size_t l = 0; l < 3; ++l) {
    expect += compute_similarity_nodes(enc[0].unit[l], enc[1].unit[l]).sum();
  }
  CHECK(multi == doctest::Approx(expect / 3.0));

  // Every variant is symmetric and zero on self.
  for (Variant v : default_variants()) {
    CHECK(pair_distance(model, ctx, enc[0], enc[0], v) == 0.0);
    const double ab = pair_distance(model, ctx, enc[0], enc[1], v);
    const double ba = pair_distance(model, ctx, enc[1], enc[0], v);
    CHECK(std::abs(ab - ba) <= 1e-12);
  }
}

TEST_CASE("variant names round trip") {
  for (Variant v : default_variants()) {
    CHECK(parse_variant(variant_name(v)) == v);
  }
  CHECK_THROWS_AS((void)parse_variant("unknown"), ConfigError);
}

TEST_CASE("config: parse, serialize, hash, validation") {
  std::istringstream in(
      "# comment\n"
      "levels = 2\n"
      "r = 16\n"
      "k = 4\n"
      "gamma = 0.5\n"
      "loss = proxy_anchor\n"
      "lr = 0.01\n"
      "weight_decay = 0\n"
      "batch_size = 12\n"
      "classes_per_batch = 3\n"
      "margin_alpha = 1.2\n"
      "margin_beta = 0.2\n"
      "pa_scale = 16\n"
      "pa_beta = 2\n"
      "pa_tau = 0.2\n"
      "seed = 7\n"
      "epochs = 2\n"
      "synth_shapes = 4x16x16,8x8x8\n"
      "synth_classes = 4\n"
      "synth_samples_per_class = 5\n"
      "synth_noise = 0.1,0.2\n"
      "synth_dropout = 0,0.3\n"
      "synth_concepts = 3\n");
  const Config cfg = parse_config(in);
  CHECK(cfg.levels == 2);
  CHECK(cfg.r == 16);
  CHECK(cfg.top_k() == 4);
  CHECK(cfg.loss == "proxy_anchor");
  CHECK(cfg.synth_shapes.size() == 2);
  CHECK(cfg.synth_shapes[1].c == 8);
  CHECK(cfg.synth_noise[1] == 0.2);

  // Round trip through the canonical serialization.
  std::istringstream again(serialize_config(cfg));
  const Config cfg2 = parse_config(again);
  CHECK(config_hash(cfg) == config_hash(cfg2));
  CHECK(serialize_config(cfg) == serialize_config(cfg2));

  // Different seed changes the hash.
  Config cfg3 = cfg;
  cfg3.seed = 8;
  CHECK(config_hash(cfg3) != config_hash(cfg));

  std::istringstream bad("unknown_key = 3\n");
  CHECK_THROWS_AS((void)parse_config(bad), ConfigError);
  std::istringstream bad2("levels 3\n");
  CHECK_THROWS_AS((void)parse_config(bad2), ConfigError);
  std::istringstream bad3("gamma = 1.5\nlevels = 1\nsynth_shapes = 4x4x4\n");
  CHECK_THROWS_AS((void)parse_config(bad3), ConfigError);
}

TEST_CASE("ablation rows and CSV carry the config hash") {
  std::vector<std::vector<double>> per_seed{{0.5, 0.75}, {0.7, 0.85}};
  const auto row = summarize("multi_layer", per_seed);
  CHECK(row.mean[0] == doctest::Approx(0.6));
  CHECK(row.stdev[0] == doctest::Approx(0.1));

  std::ostringstream out;
  write_ablation_csv(out, {row}, {1, 2}, "deadbeef");
  const std::string csv = out.str();
  CHECK(csv.find("variant,mean_recall@1,std_recall@1,mean_recall@2,std_recall@2,config_hash") !=
        std::string::npos);
  CHECK(csv.find("multi_layer") != std::string::npos);
  CHECK(csv.find("deadbeef") != std::string::npos);

  // One variant, one seed: std = 0.
  const auto single = summarize("concat", {{0.25}});
  CHECK(single.stdev[0] == 0.0);
}

TEST_CASE("manifest parsing and dataset label consistency") {
  std::istringstream good("a,x.avsf,0\n  b , y.avsf , 2 \n# comment\n\n");
  const auto entries = read_manifest(good);
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].sample_id == "a");
  CHECK(entries[1].path == "y.avsf");
  CHECK(entries[1].label == 2);

  std::istringstream missing_field("a,x.avsf\n");
  CHECK_THROWS_AS((void)read_manifest(missing_field), ParseError);
  std::istringstream bad_label("a,x.avsf,seven\n");
  CHECK_THROWS_AS((void)read_manifest(bad_label), ParseError);

  // Label disagreement between manifest and feature file.
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "simgraph_manifest_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SynthSpec spec;
  spec.shapes = {{2, 2, 2}};
  spec.classes = 2;
  spec.samples_per_class = 1;
  write_pyramid_file((dir / "s.avsf").string(), synthesize_pyramid(spec, 1, 0, 1));
  {
    std::ofstream m(dir / "manifest.txt");
    m << "s,s.avsf,0\n";  // file says label 1
  }
  CHECK_THROWS_AS((void)load_dataset((dir / "manifest.txt").string()), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("levels with inverted spatial sizes still pair correctly") {
  // The common grid is the elementwise min, whichever level is coarser.
  SynthSpec spec;
  spec.shapes = {{3, 2, 2}, {4, 6, 6}};  // upper level is the finer one here
  spec.classes = 2;
  spec.samples_per_class = 1;
  spec.noise = {0.2, 0.2};
  const Dataset data = synthesize_dataset(spec, 51);
  const auto model = make_model<double>({3, 4}, 5, 2, 0.9, 51);
  EncodeOptions opts;
  opts.keep_rescaled = true;
  const auto a = encode_sample(model, data[0], opts);
  const auto b = encode_sample(model, data[1], opts);
  REQUIRE(a.upper.size() == 1);
  CHECK(a.upper[0].th == 2);
  CHECK(a.upper[0].tw == 2);
  CHECK(a.lower[0].th == 2);
  const auto ctx = make_inference_context(model);
  const double ab = pair_distance(model, ctx, a, b, Variant::kFull);
  const double ba = pair_distance(model, ctx, b, a, Variant::kFull);
  CHECK(std::isfinite(ab));
  CHECK(std::abs(ab - ba) <= 1e-12);
  CHECK(pair_distance(model, ctx, a, a, Variant::kFull) == 0.0);
}
