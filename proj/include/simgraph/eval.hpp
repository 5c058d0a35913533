#pragma once

#include <simgraph/config.hpp>
#include <simgraph/dataset.hpp>
#include <simgraph/errors.hpp>
#include <simgraph/model.hpp>
#include <simgraph/train.hpp>
#include <simgraph/types.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace simgraph {

struct RecallResult {
  std::vector<int> ks;
  std::vector<double> recalls;
  Index n_queries = 0;
};

/// One horizontal band of the query x gallery dissimilarity matrix.
struct SimilaritySlice {
  Index row_begin = 0;
  Mat values;  // rows x gallery
};

template <typename Scalar>
std::vector<EncodedSample<Scalar>> encode_dataset(const Model<Scalar>& model, const Dataset& data,
                                                  const EncodeOptions& opts = {}) {
  std::vector<EncodedSample<Scalar>> enc;
  enc.reserve(data.size());
  for (const auto& s : data) enc.push_back(encode_sample(model, s, opts));
  return enc;
}

/// Streams the pairwise dissimilarity matrix in row bands of `slice_rows`,
/// so evaluation never holds more than one band. Every entry is computed by
/// the same per-pair path in the same order, so any banding reproduces the
/// monolithic matrix bit for bit.
template <typename Scalar>
class SlicedSimilarity {
 public:
  SlicedSimilarity(const Model<Scalar>& model, const InferenceContext<Scalar>& ctx,
                   const std::vector<EncodedSample<Scalar>>& samples, Index slice_rows,
                   Variant variant = Variant::kFull)
      : model_(model), ctx_(ctx), samples_(samples), slice_rows_(slice_rows), variant_(variant) {
    if (slice_rows_ < 1) throw ConfigError("slice_rows must be >= 1");
  }

  Index size() const { return static_cast<Index>(samples_.size()); }

  bool next(SimilaritySlice& slice) {
    const Index n = size();
    if (cursor_ >= n) return false;
    const Index rows = std::min(slice_rows_, n - cursor_);
    slice.row_begin = cursor_;
    slice.values.resize(rows, n);
    for (Index i = 0; i < rows; ++i) {
      const auto& a = samples_[static_cast<std::size_t>(cursor_ + i)];
      for (Index j = 0; j < n; ++j) {
        slice.values(i, j) = static_cast<double>(
            pair_distance(model_, ctx_, a, samples_[static_cast<std::size_t>(j)], variant_));
      }
    }
    cursor_ += rows;
    return true;
  }

  void reset() { cursor_ = 0; }

 private:
  const Model<Scalar>& model_;
  const InferenceContext<Scalar>& ctx_;
  const std::vector<EncodedSample<Scalar>>& samples_;
  Index slice_rows_;
  Variant variant_;
  Index cursor_ = 0;
};

template <typename Scalar>
Mat full_similarity_matrix(SlicedSimilarity<Scalar>& provider) {
  const Index n = provider.size();
  Mat full(n, n);
  SimilaritySlice slice;
  provider.reset();
  while (provider.next(slice)) {
    full.middleRows(slice.row_begin, slice.values.rows()) = slice.values;
  }
  return full;
}

namespace detail {

/// Recall hit flags for one query row: for each K, whether any of the K
/// nearest gallery items (ascending distance, ties by gallery index, self
/// excluded when masked) shares the query label.
inline void recall_row(const Eigen::Ref<const Eigen::RowVectorXd>& row, Index self,
                       const std::vector<int>& labels, int query_label, const std::vector<int>& ks,
                       std::vector<Index>& scratch, std::vector<std::int64_t>& hits) {
  const Index n = row.size();
  scratch.clear();
  for (Index j = 0; j < n; ++j) {
    if (j == self) continue;
    scratch.push_back(j);
  }
  const int max_k = ks.back();
  const auto cmp = [&](Index a, Index b) {
    if (row[a] != row[b]) return row[a] < row[b];
    return a < b;
  };
  std::partial_sort(scratch.begin(), scratch.begin() + max_k, scratch.end(), cmp);
  int found_at = -1;
  for (int rank = 0; rank < max_k; ++rank) {
    if (labels[static_cast<std::size_t>(scratch[static_cast<std::size_t>(rank)])] == query_label) {
      found_at = rank;
      break;
    }
  }
  for (std::size_t t = 0; t < ks.size(); ++t) {
    if (found_at >= 0 && found_at < ks[t]) ++hits[t];
  }
}

inline void check_ks(const std::vector<int>& ks, Index gallery) {
  if (ks.empty()) throw ConfigError("recall_at_k: empty K list");
  for (std::size_t t = 0; t < ks.size(); ++t) {
    if (ks[t] < 1) throw ConfigError("recall_at_k: K must be >= 1");
    if (t > 0 && ks[t] <= ks[t - 1]) throw ConfigError("recall_at_k: K list must be ascending");
  }
  if (ks.back() >= gallery) {
    throw ConfigError("recall_at_k: K = " + std::to_string(ks.back()) +
                      " must be smaller than the gallery of " + std::to_string(gallery));
  }
}

}  // namespace detail

/// Recall@K over a full square dissimilarity matrix (queries == gallery,
/// self-matches excluded).
inline RecallResult recall_at_k(const Mat& dist, const std::vector<int>& labels,
                                const std::vector<int>& ks) {
  const Index n = dist.rows();
  if (dist.cols() != n || static_cast<Index>(labels.size()) != n) {
    throw ShapeError("recall_at_k: matrix/label sizes disagree");
  }
  detail::check_ks(ks, n);  // gallery excludes self, so K must be < n
  std::vector<std::int64_t> hits(ks.size(), 0);
  std::vector<Index> scratch;
  for (Index q = 0; q < n; ++q) {
    detail::recall_row(dist.row(q), q, labels, labels[static_cast<std::size_t>(q)], ks, scratch, hits);
  }
  RecallResult out;
  out.ks = ks;
  out.n_queries = n;
  out.recalls.resize(ks.size());
  for (std::size_t t = 0; t < ks.size(); ++t) {
    out.recalls[t] = static_cast<double>(hits[t]) / static_cast<double>(n);
  }
  return out;
}

/// Streaming recall: consumes slices, keeping only hit counters.
template <typename Scalar>
RecallResult recall_at_k(SlicedSimilarity<Scalar>& provider, const std::vector<int>& labels,
                         const std::vector<int>& ks) {
  const Index n = provider.size();
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("recall_at_k: label count disagrees with dataset");
  }
  detail::check_ks(ks, n);
  std::vector<std::int64_t> hits(ks.size(), 0);
  std::vector<Index> scratch;
  SimilaritySlice slice;
  provider.reset();
  while (provider.next(slice)) {
    for (Index i = 0; i < slice.values.rows(); ++i) {
      const Index q = slice.row_begin + i;
      detail::recall_row(slice.values.row(i), q, labels, labels[static_cast<std::size_t>(q)], ks,
                         scratch, hits);
    }
  }
  RecallResult out;
  out.ks = ks;
  out.n_queries = n;
  out.recalls.resize(ks.size());
  for (std::size_t t = 0; t < ks.size(); ++t) {
    out.recalls[t] = static_cast<double>(hits[t]) / static_cast<double>(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation and sweep harness on the synthetic zero-shot benchmark.
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string variant;
  std::vector<double> mean;  // per K
  std::vector<double> stdev;
  std::vector<std::vector<double>> per_seed;  // [seed][K]
};

/// Zero-shot split: train classes [0, C) and disjoint eval classes [C, 2C)
/// drawn from one doubled-class generator spec.
inline std::pair<Dataset, Dataset> synth_zero_shot_split(const Config& cfg, std::uint64_t seed) {
  SynthSpec spec = cfg.synth_spec();
  spec.classes = cfg.synth_classes * 2;
  Dataset train, test;
  for (int c = 0; c < spec.classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s) {
      auto pyr = synthesize_pyramid(spec, c, s, seed);
      if (c < cfg.synth_classes) {
        train.push_back(std::move(pyr));
      } else {
        test.push_back(std::move(pyr));
      }
    }
  }
  return {std::move(train), std::move(test)};
}

/// Train one variant on the synthetic benchmark and evaluate Recall@K on the
/// held-out classes. Variants differ in which levels receive the level loss,
/// whether the gate is trained, and the evaluation distance.
template <typename Scalar = double>
RecallResult run_variant(const Config& cfg, Variant variant, std::uint64_t seed,
                         const std::vector<int>& ks) {
  Config run_cfg = cfg;
  run_cfg.seed = seed;
  if (variant == Variant::kTopLevel) {
    run_cfg.level_loss_weights.assign(static_cast<std::size_t>(cfg.levels), 0.0);
    run_cfg.level_loss_weights.back() = 1.0;
  }
  auto [train_set, test_set] = synth_zero_shot_split(run_cfg, seed);

  std::vector<Index> channels;
  for (const auto& s : run_cfg.synth_shapes) channels.push_back(s.c);
  auto state = init_train_state<Scalar>(run_cfg, channels, run_cfg.synth_classes);

  StepOptions opts;
  opts.level_loss = true;
  opts.overall_loss = variant == Variant::kFull || variant == Variant::kMultiLayerReliability;
  train_run(state, train_set, run_cfg.epochs, opts);

  const auto enc = encode_dataset(state.model, test_set);
  const auto ctx = make_inference_context(state.model);
  SlicedSimilarity<Scalar> provider(state.model, ctx, enc, /*slice_rows=*/64, variant);
  return recall_at_k(provider, dataset_labels(test_set), ks);
}

inline std::vector<Variant> default_variants() {
  return {Variant::kTopLevel, Variant::kMultiLayer, Variant::kMultiLayerReliability,
          Variant::kConcat, Variant::kFull};
}

inline AblationRow summarize(const std::string& name, const std::vector<std::vector<double>>& per_seed) {
  AblationRow row;
  row.variant = name;
  row.per_seed = per_seed;
  const std::size_t n_ks = per_seed.front().size();
  row.mean.assign(n_ks, 0.0);
  row.stdev.assign(n_ks, 0.0);
  for (const auto& rec : per_seed) {
    for (std::size_t t = 0; t < n_ks; ++t) row.mean[t] += rec[t];
  }
  for (std::size_t t = 0; t < n_ks; ++t) row.mean[t] /= static_cast<double>(per_seed.size());
  for (const auto& rec : per_seed) {
    for (std::size_t t = 0; t < n_ks; ++t) {
      const double d = rec[t] - row.mean[t];
      row.stdev[t] += d * d;
    }
  }
  for (std::size_t t = 0; t < n_ks; ++t) {
    row.stdev[t] = std::sqrt(row.stdev[t] / static_cast<double>(per_seed.size()));
  }
  return row;
}

/// Mean +- std Recall@K per variant over seeds.
inline std::vector<AblationRow> run_ablation(const Config& cfg, const std::vector<Variant>& variants,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::vector<int>& ks,
                                             const std::function<void(const std::string&)>& log = nullptr) {
  if (variants.empty()) throw ConfigError("run_ablation: no variants");
  if (seeds.empty()) throw ConfigError("run_ablation: no seeds");
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    std::vector<std::vector<double>> per_seed;
    for (std::uint64_t seed : seeds) {
      const auto rec = run_variant(cfg, v, seed, ks);
      per_seed.push_back(rec.recalls);
      if (log) {
        std::string msg = std::string(variant_name(v)) + " seed " + std::to_string(seed) + ": R@" +
                          std::to_string(ks.front()) + " = " + std::to_string(rec.recalls.front());
        log(msg);
      }
    }
    rows.push_back(summarize(variant_name(v), per_seed));
  }
  return rows;
}

struct SweepPoint {
  Index value = 0;  // the swept k (or r)
  double mean_r1 = 0;
  double stdev_r1 = 0;
};

/// Recall@1 of the full model as a function of the rectification fan-in k.
/// Trains once per seed and re-evaluates with each k, mirroring how k only
/// enters at inference time.
template <typename Scalar = double>
std::vector<SweepPoint> sweep_top_k(const Config& cfg, const std::vector<Index>& k_values,
                                    const std::vector<std::uint64_t>& seeds,
                                    const std::function<void(const std::string&)>& log = nullptr) {
  if (k_values.empty()) throw ConfigError("sweep_top_k: no k values");
  std::vector<std::vector<double>> r1(k_values.size());
  for (std::uint64_t seed : seeds) {
    Config run_cfg = cfg;
    run_cfg.seed = seed;
    auto [train_set, test_set] = synth_zero_shot_split(run_cfg, seed);
    std::vector<Index> channels;
    for (const auto& s : run_cfg.synth_shapes) channels.push_back(s.c);
    auto state = init_train_state<Scalar>(run_cfg, channels, run_cfg.synth_classes);
    train_run(state, train_set, run_cfg.epochs);
    const auto enc = encode_dataset(state.model, test_set);
    const auto labels = dataset_labels(test_set);
    for (std::size_t t = 0; t < k_values.size(); ++t) {
      if (k_values[t] < 1 || k_values[t] > state.model.dim()) {
        throw ConfigError("sweep_top_k: k outside [1, r]");
      }
      Model<Scalar> probe = state.model;
      probe.params.k = k_values[t];
      const auto ctx = make_inference_context(probe);
      SlicedSimilarity<Scalar> provider(probe, ctx, enc, 64, Variant::kFull);
      const auto rec = recall_at_k(provider, labels, {1});
      r1[t].push_back(rec.recalls.front());
      if (log) {
        log("k = " + std::to_string(k_values[t]) + " seed " + std::to_string(seed) +
            ": R@1 = " + std::to_string(rec.recalls.front()));
      }
    }
  }
  std::vector<SweepPoint> points;
  for (std::size_t t = 0; t < k_values.size(); ++t) {
    SweepPoint p;
    p.value = k_values[t];
    for (double v : r1[t]) p.mean_r1 += v;
    p.mean_r1 /= static_cast<double>(r1[t].size());
    for (double v : r1[t]) p.stdev_r1 += (v - p.mean_r1) * (v - p.mean_r1);
    p.stdev_r1 = std::sqrt(p.stdev_r1 / static_cast<double>(r1[t].size()));
    points.push_back(p);
  }
  return points;
}

/// Recall@1 of the full model as a function of the embedding dimension r.
/// Each point retrains from scratch; k follows its r/4 default.
template <typename Scalar = double>
std::vector<SweepPoint> sweep_embedding_dim(const Config& cfg, const std::vector<Index>& r_values,
                                            const std::vector<std::uint64_t>& seeds,
                                            const std::function<void(const std::string&)>& log = nullptr) {
  if (r_values.empty()) throw ConfigError("sweep_embedding_dim: no r values");
  std::vector<SweepPoint> points;
  for (Index r : r_values) {
    if (r < 1) throw ConfigError("sweep_embedding_dim: r must be >= 1");
    std::vector<double> r1;
    for (std::uint64_t seed : seeds) {
      Config run_cfg = cfg;
      run_cfg.seed = seed;
      run_cfg.r = r;
      run_cfg.k = 0;  // keep the r/4 default across dimensions
      const auto rec = run_variant(run_cfg, Variant::kFull, seed, {1});
      r1.push_back(rec.recalls.front());
      if (log) {
        log("r = " + std::to_string(r) + " seed " + std::to_string(seed) +
            ": R@1 = " + std::to_string(rec.recalls.front()));
      }
    }
    SweepPoint p;
    p.value = r;
    for (double v : r1) p.mean_r1 += v;
    p.mean_r1 /= static_cast<double>(r1.size());
    for (double v : r1) p.stdev_r1 += (v - p.mean_r1) * (v - p.mean_r1);
    p.stdev_r1 = std::sqrt(p.stdev_r1 / static_cast<double>(r1.size()));
    points.push_back(p);
  }
  return points;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows,
                               const std::vector<int>& ks, const std::string& cfg_hash) {
  out << "variant";
  for (int k : ks) out << ",mean_recall@" << k << ",std_recall@" << k;
  out << ",config_hash\n";
  out.precision(6);
  for (const auto& row : rows) {
    out << row.variant;
    for (std::size_t t = 0; t < ks.size(); ++t) {
      out << "," << row.mean[t] << "," << row.stdev[t];
    }
    out << "," << cfg_hash << "\n";
  }
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points,
                            const std::string& param, const std::string& cfg_hash) {
  out << param << ",mean_recall@1,std_recall@1,config_hash\n";
  out.precision(6);
  for (const auto& p : points) {
    out << p.value << "," << p.mean_r1 << "," << p.stdev_r1 << "," << cfg_hash << "\n";
  }
}

}  // namespace simgraph
