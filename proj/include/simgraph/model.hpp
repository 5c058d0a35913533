#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/graph.hpp>
#include <simgraph/inference.hpp>
#include <simgraph/pipeline.hpp>
#include <simgraph/synthetic.hpp>
#include <simgraph/types.hpp>

#include <string>
#include <vector>

namespace simgraph {

/// Everything needed to score a pair: per-level projection heads, the gating
/// parameters, and the frozen momentum edges.
template <typename Scalar>
struct Model {
  std::vector<ProjectionLayer<Scalar>> projections;
  InferenceParams<Scalar> params;
  EdgeStore<Scalar> edges;

  Index depth() const { return static_cast<Index>(projections.size()); }
  Index dim() const { return projections.empty() ? 0 : projections.front().out_dim(); }
};

/// Gaussian init scaled by 1/sqrt(fan-in), one deterministic stream per level.
template <typename Scalar>
Model<Scalar> make_model(const std::vector<Index>& channels, Index r, Index k, Scalar gamma,
                         std::uint64_t seed) {
  if (channels.empty()) throw ConfigError("model needs at least one level");
  const Index levels = static_cast<Index>(channels.size());
  Model<Scalar> model;
  model.projections.resize(channels.size());
  for (std::size_t l = 0; l < channels.size(); ++l) {
    SynthRng rng(mix_seed(seed, /*tag=*/10, static_cast<std::uint64_t>(l)));
    auto& proj = model.projections[l];
    proj.level = static_cast<int>(l + 1);
    proj.weights.resize(r, channels[l]);
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(channels[l]));
    for (Index i = 0; i < r; ++i) {
      for (Index j = 0; j < channels[l]; ++j) {
        proj.weights(i, j) = scale * static_cast<Scalar>(rng.next_gaussian());
      }
    }
  }
  model.params = make_inference_params<Scalar>(levels, r, k);
  model.edges = make_edge_store<Scalar>(levels, r, gamma);
  return model;
}

/// Per-sample forward products. `cam_std` feeds reliability; the heavier CAM
/// buffers are kept only on request.
template <typename Scalar>
struct EncodedSample {
  std::string id;
  int label = 0;
  std::vector<Vector<Scalar>> pooled;   // v per level (input to the head)
  std::vector<Vector<Scalar>> raw;      // e per level
  std::vector<Vector<Scalar>> unit;     // normalized e per level
  std::vector<Vector<Scalar>> cam_std;  // levels 2..L at index l-2
  std::vector<CAMStack<Scalar>> cams;             // optional
  std::vector<RescaledCamStack<Scalar>> upper;    // optional, pair l-2: level l at pairing dims
  std::vector<RescaledCamStack<Scalar>> lower;    // optional, pair l-2: level l-1 at pairing dims
};

struct EncodeOptions {
  bool keep_cams = false;      // full-resolution CAM stacks (attribution)
  bool keep_rescaled = false;  // rescaled stacks (edge updates)
};

template <typename Scalar>
EncodedSample<Scalar> encode_sample(const Model<Scalar>& model, const FeaturePyramid<Scalar>& pyr,
                                    const EncodeOptions& opts = {}) {
  const std::size_t depth = static_cast<std::size_t>(model.depth());
  if (pyr.levels.size() != depth) {
    throw ShapeError("encode_sample: pyramid has " + std::to_string(pyr.levels.size()) +
                     " levels, model expects " + std::to_string(depth));
  }
  EncodedSample<Scalar> out;
  out.id = pyr.sample_id;
  out.label = pyr.label;
  out.pooled.resize(depth);
  out.raw.resize(depth);
  out.unit.resize(depth);
  out.cam_std.resize(depth - 1);
  if (opts.keep_cams) out.cams.resize(depth);
  if (opts.keep_rescaled) {
    out.upper.resize(depth - 1);
    out.lower.resize(depth - 1);
  }

  std::vector<CAMStack<Scalar>> cams(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    const auto z = linearize_map(pyr.levels[l]);
    out.pooled[l] = channel_means(z.data);
    out.raw[l] = model.projections[l].weights * out.pooled[l];
    out.unit[l] = normalize_embedding(out.raw[l]);
    cams[l] = compute_cams(z, model.projections[l]);
  }
  for (std::size_t l = 1; l < depth; ++l) {
    const auto [th, tw] = pairing_dims(cams[l].h, cams[l].w, cams[l - 1].h, cams[l - 1].w);
    auto upper = rescale_and_normalize(cams[l], th, tw);
    out.cam_std[l - 1] = row_population_std(upper.vectors);
    if (opts.keep_rescaled) {
      out.lower[l - 1] = rescale_and_normalize(cams[l - 1], th, tw);
      out.upper[l - 1] = std::move(upper);
    }
  }
  if (opts.keep_cams) out.cams = std::move(cams);
  return out;
}

/// Per-sample correlation matrices for every adjacent level pair. Requires
/// keep_rescaled encodings.
template <typename Scalar>
std::vector<Matrix<Scalar>> sample_correlations(const EncodedSample<Scalar>& enc) {
  if (enc.upper.size() != enc.lower.size() || (enc.upper.empty() && enc.cam_std.size() > 0)) {
    throw ShapeError("sample_correlations: encoding lacks rescaled CAMs");
  }
  std::vector<Matrix<Scalar>> out;
  out.reserve(enc.upper.size());
  for (std::size_t p = 0; p < enc.upper.size(); ++p) {
    out.push_back(level_pair_correlations(enc.upper[p], enc.lower[p]));
  }
  return out;
}

/// Swap-symmetric pair statistic: the mean of the two samples' correlation
/// matrices for each level pair.
template <typename Scalar>
std::vector<Matrix<Scalar>> pair_correlations(const EncodedSample<Scalar>& a,
                                              const EncodedSample<Scalar>& b) {
  auto ca = sample_correlations(a);
  const auto cb = sample_correlations(b);
  for (std::size_t p = 0; p < ca.size(); ++p) {
    ca[p] = ((ca[p] + cb[p]) / Scalar(2)).eval();
  }
  return ca;
}

template <typename Scalar>
std::vector<Vector<Scalar>> pair_nodes(const EncodedSample<Scalar>& a, const EncodedSample<Scalar>& b) {
  if (a.unit.size() != b.unit.size()) {
    throw ShapeError("pair_nodes: encodings have different depths");
  }
  std::vector<Vector<Scalar>> nodes(a.unit.size());
  for (std::size_t l = 0; l < a.unit.size(); ++l) {
    nodes[l] = compute_similarity_nodes(a.unit[l], b.unit[l]);
  }
  return nodes;
}

/// Reliabilities for levels 2..L of one pair.
template <typename Scalar>
std::vector<ReliabilityVector<Scalar>> pair_reliabilities(const InferenceParams<Scalar>& params,
                                                          const EncodedSample<Scalar>& a,
                                                          const EncodedSample<Scalar>& b) {
  if (a.cam_std.size() != params.alpha.size() || b.cam_std.size() != params.alpha.size()) {
    throw ShapeError("pair_reliabilities: encoding depth differs from params");
  }
  std::vector<ReliabilityVector<Scalar>> rel(params.alpha.size());
  for (std::size_t l = 0; l < params.alpha.size(); ++l) {
    rel[l] = compute_reliability(a.cam_std[l], b.cam_std[l], params.alpha[l], params.beta[l]);
  }
  return rel;
}

/// Frozen per-evaluation context: the row-stochastic rectification weights
/// derived from the edge store, plus optional reliability override used by
/// the degeneracy checks (p = 1 reduces inference to the top level).
template <typename Scalar>
struct InferenceContext {
  std::vector<Matrix<Scalar>> w_tilde;
  bool force_full_reliability = false;
};

template <typename Scalar>
InferenceContext<Scalar> make_inference_context(const Model<Scalar>& model) {
  InferenceContext<Scalar> ctx;
  ctx.w_tilde = build_normalized_edges(model.edges, model.params.k);
  return ctx;
}

/// Full rectification products for one pair.
template <typename Scalar>
struct PairInference {
  std::vector<Vector<Scalar>> nodes;                  // delta per level
  std::vector<ReliabilityVector<Scalar>> reliability; // levels 2..L
  RectifiedNodes<Scalar> rectified;
};

template <typename Scalar>
PairInference<Scalar> infer_pair(const Model<Scalar>& model, const InferenceContext<Scalar>& ctx,
                                 const EncodedSample<Scalar>& a, const EncodedSample<Scalar>& b) {
  PairInference<Scalar> out;
  out.nodes = pair_nodes(a, b);
  out.reliability = pair_reliabilities(model.params, a, b);
  std::vector<Vector<Scalar>> p(out.reliability.size());
  for (std::size_t l = 0; l < p.size(); ++l) {
    p[l] = ctx.force_full_reliability ? Vector<Scalar>::Ones(out.nodes[0].size())
                                      : out.reliability[l].values;
  }
  out.rectified = rectify(out.nodes, p, ctx.w_tilde);
  return out;
}

/// Evaluation-time distance variants; names follow the ablation table rows.
enum class Variant { kTopLevel, kMultiLayer, kMultiLayerReliability, kConcat, kFull };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kTopLevel: return "baseline_top_level";
    case Variant::kMultiLayer: return "multi_layer";
    case Variant::kMultiLayerReliability: return "multi_layer_reliability";
    case Variant::kConcat: return "concat";
    case Variant::kFull: return "full_avsl";
  }
  return "?";
}

inline Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kTopLevel, Variant::kMultiLayer, Variant::kMultiLayerReliability,
                    Variant::kConcat, Variant::kFull}) {
    if (name == variant_name(v)) return v;
  }
  throw ConfigError("unknown ablation variant: " + name);
}

/// Dissimilarity between two encoded samples under one variant. Smaller
/// means more similar everywhere.
template <typename Scalar>
Scalar pair_distance(const Model<Scalar>& model, const InferenceContext<Scalar>& ctx,
                     const EncodedSample<Scalar>& a, const EncodedSample<Scalar>& b, Variant variant) {
  switch (variant) {
    case Variant::kTopLevel: {
      return compute_similarity_nodes(a.unit.back(), b.unit.back()).sum();
    }
    case Variant::kMultiLayer: {
      Scalar total = 0;
      for (std::size_t l = 0; l < a.unit.size(); ++l) {
        total += compute_similarity_nodes(a.unit[l], b.unit[l]).sum();
      }
      return total / static_cast<Scalar>(a.unit.size());
    }
    case Variant::kMultiLayerReliability: {
      // Nodes weighted by their reliability; level 1 has no gate.
      const auto rel = pair_reliabilities(model.params, a, b);
      Scalar total = compute_similarity_nodes(a.unit.front(), b.unit.front()).sum();
      for (std::size_t l = 1; l < a.unit.size(); ++l) {
        const auto delta = compute_similarity_nodes(a.unit[l], b.unit[l]);
        total += delta.dot(rel[l - 1].values);
      }
      return total / static_cast<Scalar>(a.unit.size());
    }
    case Variant::kConcat: {
      Index total_dim = 0;
      for (const auto& e : a.raw) total_dim += e.size();
      Vector<Scalar> ca(total_dim), cb(total_dim);
      Index at = 0;
      for (std::size_t l = 0; l < a.raw.size(); ++l) {
        ca.segment(at, a.raw[l].size()) = a.raw[l];
        cb.segment(at, b.raw[l].size()) = b.raw[l];
        at += a.raw[l].size();
      }
      return compute_similarity_nodes(normalize_embedding(ca), normalize_embedding(cb)).sum();
    }
    case Variant::kFull: {
      return infer_pair(model, ctx, a, b).rectified.overall;
    }
  }
  throw ConfigError("unhandled variant");
}

}  // namespace simgraph
