#pragma once

#include <simgraph/config.hpp>
#include <simgraph/dataset.hpp>
#include <simgraph/errors.hpp>
#include <simgraph/io.hpp>
#include <simgraph/losses.hpp>
#include <simgraph/model.hpp>
#include <simgraph/optim.hpp>
#include <simgraph/types.hpp>

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace simgraph {

/// Training state. The two parameter groups are disjoint by construction:
/// theta1 owns the projection heads plus the loss-side parameters (class
/// boundaries or proxies), theta2 owns the gating parameters. Level losses
/// only ever touch theta1, the overall loss only theta2.
template <typename Scalar>
struct TrainState {
  Config cfg;
  Model<Scalar> model;
  Vector<Scalar> beta_class;            // margin loss boundaries, one per class
  std::vector<Matrix<Scalar>> proxies;  // proxy anchor: per level, classes x r
  AdamW<Scalar> opt_theta1;
  AdamW<Scalar> opt_theta2;
  std::uint64_t step = 0;
  int n_classes = 0;

  bool uses_proxies() const { return cfg.loss == "proxy_anchor"; }
};

template <typename Scalar>
TrainState<Scalar> init_train_state(const Config& cfg, const std::vector<Index>& channels,
                                    int n_classes) {
  cfg.validate();
  if (n_classes < 1) throw ConfigError("training needs at least one class");
  TrainState<Scalar> state;
  state.cfg = cfg;
  state.n_classes = n_classes;
  state.model = make_model<Scalar>(channels, cfg.r, cfg.top_k(), static_cast<Scalar>(cfg.gamma),
                                   cfg.seed);
  state.opt_theta1 = AdamW<Scalar>(static_cast<Scalar>(cfg.lr), static_cast<Scalar>(cfg.weight_decay));
  state.opt_theta2 = AdamW<Scalar>(static_cast<Scalar>(cfg.theta2_lr()), static_cast<Scalar>(cfg.weight_decay));
  if (cfg.loss == "margin") {
    state.beta_class = Vector<Scalar>::Constant(n_classes, static_cast<Scalar>(cfg.margin_beta));
  } else {
    state.proxies.resize(channels.size());
    for (std::size_t l = 0; l < channels.size(); ++l) {
      SynthRng rng(mix_seed(cfg.seed, /*tag=*/11, static_cast<std::uint64_t>(l)));
      auto& p = state.proxies[l];
      p.resize(n_classes, cfg.r);
      for (Index i = 0; i < p.rows(); ++i) {
        for (Index j = 0; j < p.cols(); ++j) {
          p(i, j) = static_cast<Scalar>(rng.next_gaussian());
        }
      }
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// Gradients of the overall similarity with respect to the gate.
// ---------------------------------------------------------------------------

/// d(d_hat)/dp^l for every gated level, from the linear structure of the
/// recursion: with adjoint g^L = 1 and g^{l-1} = W~^T ((1-p).g^l),
///   d(d_hat)/dp^l_i = g^l_i (delta^l_i - (W~^l rectified^{l-1})_i).
template <typename Scalar>
std::vector<Vector<Scalar>> dhat_reliability_gradients(const std::vector<Vector<Scalar>>& nodes,
                                                       const RectifiedNodes<Scalar>& rect,
                                                       const std::vector<Matrix<Scalar>>& w_tilde,
                                                       const std::vector<Vector<Scalar>>& p) {
  const std::size_t depth = nodes.size();
  std::vector<Vector<Scalar>> dp(depth - 1);
  if (depth < 2) return dp;
  const Index r = nodes.front().size();
  Vector<Scalar> adjoint = Vector<Scalar>::Ones(r);
  for (std::size_t l = depth - 1; l >= 1; --l) {
    const Vector<Scalar> child_mix = w_tilde[l - 1] * rect.values[l - 1];
    dp[l - 1] = adjoint.cwiseProduct(nodes[l] - child_mix);
    adjoint = w_tilde[l - 1].transpose() *
              (Vector<Scalar>::Ones(r) - p[l - 1]).cwiseProduct(adjoint);
  }
  return dp;
}

/// Chain one pair's d(loss)/d(d_hat) into gate-parameter gradients:
/// dp/dalpha = p(1-p) eta and dp/dbeta = p(1-p); everything upstream of the
/// sigmoid (nodes, edges, raw CAM statistics) is a constant for theta2.
template <typename Scalar>
void accumulate_theta2_gradients(const std::vector<Vector<Scalar>>& nodes,
                                 const std::vector<ReliabilityVector<Scalar>>& reliability,
                                 const RectifiedNodes<Scalar>& rect,
                                 const std::vector<Matrix<Scalar>>& w_tilde, Scalar dloss_ddhat,
                                 std::vector<Vector<Scalar>>& grad_alpha,
                                 std::vector<Vector<Scalar>>& grad_beta) {
  std::vector<Vector<Scalar>> p(reliability.size());
  for (std::size_t l = 0; l < p.size(); ++l) p[l] = reliability[l].values;
  const auto dp = dhat_reliability_gradients(nodes, rect, w_tilde, p);
  for (std::size_t l = 0; l < dp.size(); ++l) {
    const auto gate = p[l].array() * (Scalar(1) - p[l].array());
    grad_alpha[l].array() +=
        dloss_ddhat * dp[l].array() * gate * reliability[l].raw.array();
    grad_beta[l].array() += dloss_ddhat * dp[l].array() * gate;
  }
}

// ---------------------------------------------------------------------------
// Objective step.
// ---------------------------------------------------------------------------

struct StepOptions {
  bool level_loss = true;    // L^m: trains theta1
  bool overall_loss = true;  // L^f: trains theta2
};

struct StepMetrics {
  double level_loss = 0;
  double overall_loss = 0;
  std::size_t pairs = 0;
};

namespace detail {

template <typename Scalar>
void ensure_finite(const Vector<Scalar>& g, const std::string& block) {
  if (!g.allFinite()) {
    throw NumericError("non-finite gradient in parameter block " + block);
  }
}

/// dL/draw from dL/dunit through e -> e/||e||.
template <typename Scalar>
Vector<Scalar> normalize_backprop(const Vector<Scalar>& raw, const Vector<Scalar>& unit,
                                  const Vector<Scalar>& g_unit) {
  const Scalar n = raw.norm();
  return (g_unit - unit * unit.dot(g_unit)) / n;
}

}  // namespace detail

/// One optimizer step of the split objective on a batch: level losses feed
/// theta1, the overall loss feeds theta2, then the edge store absorbs the
/// batch's correlation statistics. Gradient accumulation is a fixed-order
/// reduction, so identical inputs give identical steps.
template <typename Scalar>
StepMetrics objective_step(TrainState<Scalar>& state, const Dataset& data,
                           const std::vector<Index>& batch, const StepOptions& opts = {}) {
  const std::size_t depth = static_cast<std::size_t>(state.model.depth());
  const Index r = state.model.dim();
  const std::size_t b = batch.size();
  if (b < 2) throw ConfigError("objective_step: batch needs at least two samples");

  // Forward pass.
  EncodeOptions eopts;
  eopts.keep_rescaled = true;
  std::vector<EncodedSample<Scalar>> enc;
  enc.reserve(b);
  for (Index idx : batch) {
    enc.push_back(encode_sample(state.model, data[static_cast<std::size_t>(idx)], eopts));
    for (std::size_t l = 0; l < depth; ++l) {
      if (!enc.back().unit[l].allFinite()) {
        throw NumericError("non-finite forward pass for sample " + enc.back().id + " at level " +
                           std::to_string(l + 1));
      }
    }
  }
  const auto w_tilde = build_normalized_edges(state.model.edges, state.model.params.k);

  int distinct = 1;
  for (std::size_t i = 1; i < b; ++i) {
    if (enc[i].label != enc[0].label) {
      distinct = 2;
      break;
    }
  }
  if (state.cfg.loss == "margin" && distinct < 2) {
    throw ConfigError("objective_step: pair-based loss needs at least two classes in the batch");
  }

  std::vector<double> level_w(depth, 1.0);
  if (!state.cfg.level_loss_weights.empty()) level_w = state.cfg.level_loss_weights;

  // theta1 gradient buffers.
  std::vector<Matrix<Scalar>> grad_proj(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    grad_proj[l] = Matrix<Scalar>::Zero(r, state.model.projections[l].in_dim());
  }
  Vector<Scalar> grad_beta_class;
  if (!state.uses_proxies()) grad_beta_class = Vector<Scalar>::Zero(state.n_classes);
  std::vector<Matrix<Scalar>> grad_proxies(state.proxies.size());
  for (std::size_t l = 0; l < state.proxies.size(); ++l) {
    grad_proxies[l] = Matrix<Scalar>::Zero(state.proxies[l].rows(), state.proxies[l].cols());
  }
  // dL/dunit per sample per level; folded into grad_proj at the end.
  std::vector<std::vector<Vector<Scalar>>> g_unit(b, std::vector<Vector<Scalar>>(depth));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t l = 0; l < depth; ++l) g_unit[i][l] = Vector<Scalar>::Zero(r);
  }

  // theta2 gradient buffers.
  std::vector<Vector<Scalar>> grad_alpha(depth - 1), grad_beta2(depth - 1);
  for (std::size_t l = 0; l + 1 < depth; ++l) {
    grad_alpha[l] = Vector<Scalar>::Zero(r);
    grad_beta2[l] = Vector<Scalar>::Zero(r);
  }

  StepMetrics metrics;

  // Normalized proxies per level (shared by both objectives).
  std::vector<Matrix<Scalar>> unit_proxies(state.proxies.size());
  for (std::size_t l = 0; l < state.proxies.size(); ++l) {
    unit_proxies[l].resize(state.proxies[l].rows(), state.proxies[l].cols());
    for (Index c = 0; c < state.proxies[l].rows(); ++c) {
      const Vector<Scalar> row = state.proxies[l].row(c);
      unit_proxies[l].row(c) = normalize_embedding(row);
    }
  }

  // ----- Level losses (theta1) -----
  if (opts.level_loss) {
    if (!state.uses_proxies()) {
      // Pairwise margin loss per level on sqrt(d^l).
      for (std::size_t l = 0; l < depth; ++l) {
        if (level_w[l] == 0.0) continue;
        std::vector<PairDistance> items;
        std::vector<std::pair<std::size_t, std::size_t>> who;
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = i + 1; j < b; ++j) {
            const Scalar d2 = compute_similarity_nodes(enc[i].unit[l], enc[j].unit[l]).sum();
            PairDistance item;
            item.distance = std::sqrt(static_cast<double>(d2));
            item.positive = enc[i].label == enc[j].label;
            item.anchor_class = enc[i].label;
            items.push_back(item);
            who.emplace_back(i, j);
          }
        }
        const auto loss = margin_loss(items, state.beta_class, static_cast<Scalar>(state.cfg.margin_alpha));
        metrics.level_loss += level_w[l] * static_cast<double>(loss.value);
        grad_beta_class += static_cast<Scalar>(level_w[l]) * loss.grad_beta;
        for (std::size_t t = 0; t < items.size(); ++t) {
          const Scalar gd = loss.grad_distance[t];
          if (gd == Scalar(0) || items[t].distance == 0.0) continue;
          const Scalar gd2 = static_cast<Scalar>(level_w[l]) * gd /
                             (Scalar(2) * static_cast<Scalar>(items[t].distance));
          const auto [i, j] = who[t];
          const Vector<Scalar> diff = enc[i].unit[l] - enc[j].unit[l];
          g_unit[i][l] += gd2 * Scalar(2) * diff;
          g_unit[j][l] -= gd2 * Scalar(2) * diff;
        }
        metrics.pairs = items.size();
      }
    } else {
      // Proxy anchor per level on the raw squared dissimilarity.
      ProxyAnchorConfig pa;
      pa.scale = state.cfg.pa_scale;
      pa.beta = state.cfg.pa_beta;
      pa.tau = state.cfg.pa_tau;
      std::vector<int> labels(b);
      for (std::size_t i = 0; i < b; ++i) labels[i] = enc[i].label;
      for (std::size_t l = 0; l < depth; ++l) {
        if (level_w[l] == 0.0) continue;
        Matrix<Scalar> dist(b, state.n_classes);
        for (std::size_t i = 0; i < b; ++i) {
          for (Index c = 0; c < static_cast<Index>(state.n_classes); ++c) {
            const Vector<Scalar> proxy = unit_proxies[l].row(c);
            dist(static_cast<Index>(i), c) = compute_similarity_nodes(enc[i].unit[l], proxy).sum();
          }
        }
        const auto loss = proxy_anchor_loss(dist, labels, pa);
        metrics.level_loss += level_w[l] * static_cast<double>(loss.value);
        for (std::size_t i = 0; i < b; ++i) {
          for (Index c = 0; c < static_cast<Index>(state.n_classes); ++c) {
            const Scalar g = static_cast<Scalar>(level_w[l]) * loss.grad_dist(static_cast<Index>(i), c);
            if (g == Scalar(0)) continue;
            const Vector<Scalar> proxy = unit_proxies[l].row(c);
            const Vector<Scalar> diff = enc[i].unit[l] - proxy;
            g_unit[i][l] += g * Scalar(2) * diff;
            // Through the proxy's own normalization.
            const Vector<Scalar> raw = state.proxies[l].row(c);
            const Vector<Scalar> g_tilde = -g * Scalar(2) * diff;
            grad_proxies[l].row(c) += detail::normalize_backprop(raw, proxy, g_tilde).transpose();
          }
        }
        metrics.pairs = b * static_cast<std::size_t>(state.n_classes);
      }
    }
    // Fold embedding gradients through e -> e/||e|| and e = A v.
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t l = 0; l < depth; ++l) {
        if (g_unit[i][l].isZero(Scalar(0))) continue;
        const Vector<Scalar> g_raw = detail::normalize_backprop(enc[i].raw[l], enc[i].unit[l], g_unit[i][l]);
        grad_proj[l] += g_raw * enc[i].pooled[l].transpose();
      }
    }
  }

  // ----- Overall loss (theta2) -----
  if (opts.overall_loss && depth >= 2) {
    if (!state.uses_proxies()) {
      std::vector<PairDistance> items;
      struct Cached {
        std::vector<Vector<Scalar>> nodes;
        std::vector<ReliabilityVector<Scalar>> rel;
        RectifiedNodes<Scalar> rect;
      };
      std::vector<Cached> cache;
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = i + 1; j < b; ++j) {
          Cached c;
          c.nodes = pair_nodes(enc[i], enc[j]);
          c.rel = pair_reliabilities(state.model.params, enc[i], enc[j]);
          std::vector<Vector<Scalar>> p(c.rel.size());
          for (std::size_t l = 0; l < p.size(); ++l) p[l] = c.rel[l].values;
          c.rect = rectify(c.nodes, p, w_tilde);
          PairDistance item;
          item.distance = std::sqrt(static_cast<double>(c.rect.overall));
          item.positive = enc[i].label == enc[j].label;
          item.anchor_class = enc[i].label;
          items.push_back(item);
          cache.push_back(std::move(c));
        }
      }
      const auto loss = margin_loss(items, state.beta_class, static_cast<Scalar>(state.cfg.margin_alpha));
      metrics.overall_loss = static_cast<double>(loss.value);
      for (std::size_t t = 0; t < items.size(); ++t) {
        const Scalar gd = loss.grad_distance[t];
        if (gd == Scalar(0) || items[t].distance == 0.0) continue;
        const Scalar gdhat = gd / (Scalar(2) * static_cast<Scalar>(items[t].distance));
        accumulate_theta2_gradients(cache[t].nodes, cache[t].rel, cache[t].rect, w_tilde, gdhat,
                                    grad_alpha, grad_beta2);
      }
    } else {
      ProxyAnchorConfig pa;
      pa.scale = state.cfg.pa_scale;
      pa.beta = state.cfg.pa_beta;
      pa.tau = state.cfg.pa_tau;
      std::vector<int> labels(b);
      for (std::size_t i = 0; i < b; ++i) labels[i] = enc[i].label;
      struct Cached {
        std::vector<Vector<Scalar>> nodes;
        std::vector<ReliabilityVector<Scalar>> rel;
        RectifiedNodes<Scalar> rect;
      };
      Matrix<Scalar> dist(b, state.n_classes);
      std::vector<Cached> cache(b * static_cast<std::size_t>(state.n_classes));
      for (std::size_t i = 0; i < b; ++i) {
        for (Index c = 0; c < static_cast<Index>(state.n_classes); ++c) {
          Cached& entry = cache[i * static_cast<std::size_t>(state.n_classes) + static_cast<std::size_t>(c)];
          entry.nodes.resize(depth);
          for (std::size_t l = 0; l < depth; ++l) {
            const Vector<Scalar> proxy = unit_proxies[l].row(c);
            entry.nodes[l] = compute_similarity_nodes(enc[i].unit[l], proxy);
          }
          // Proxies carry no spatial signature, so the pair statistic
          // degenerates to the sample's own CAM spread.
          entry.rel.resize(depth - 1);
          std::vector<Vector<Scalar>> p(depth - 1);
          for (std::size_t l = 0; l + 1 < depth; ++l) {
            entry.rel[l] = compute_reliability(enc[i].cam_std[l], enc[i].cam_std[l],
                                               state.model.params.alpha[l], state.model.params.beta[l]);
            p[l] = entry.rel[l].values;
          }
          entry.rect = rectify(entry.nodes, p, w_tilde);
          dist(static_cast<Index>(i), c) = entry.rect.overall;
        }
      }
      const auto loss = proxy_anchor_loss(dist, labels, pa);
      metrics.overall_loss = static_cast<double>(loss.value);
      for (std::size_t i = 0; i < b; ++i) {
        for (Index c = 0; c < static_cast<Index>(state.n_classes); ++c) {
          const Scalar g = loss.grad_dist(static_cast<Index>(i), c);
          if (g == Scalar(0)) continue;
          const Cached& entry = cache[i * static_cast<std::size_t>(state.n_classes) + static_cast<std::size_t>(c)];
          accumulate_theta2_gradients(entry.nodes, entry.rel, entry.rect, w_tilde, g, grad_alpha,
                                      grad_beta2);
        }
      }
    }
  }

  // ----- NaN guard, then the two decoupled updates -----
  if (opts.level_loss) {
    for (std::size_t l = 0; l < depth; ++l) {
      const Vector<Scalar> flat = Eigen::Map<const Vector<Scalar>>(grad_proj[l].data(), grad_proj[l].size());
      detail::ensure_finite(flat, "theta1.projection[" + std::to_string(l + 1) + "]");
    }
    if (!state.uses_proxies()) {
      detail::ensure_finite(grad_beta_class, "theta1.beta_class");
    } else {
      for (std::size_t l = 0; l < state.proxies.size(); ++l) {
        const Vector<Scalar> flat =
            Eigen::Map<const Vector<Scalar>>(grad_proxies[l].data(), grad_proxies[l].size());
        detail::ensure_finite(flat, "theta1.proxies[" + std::to_string(l + 1) + "]");
      }
    }
  }
  if (opts.overall_loss) {
    for (std::size_t l = 0; l + 1 < depth; ++l) {
      detail::ensure_finite(grad_alpha[l], "theta2.alpha[" + std::to_string(l + 2) + "]");
      detail::ensure_finite(grad_beta2[l], "theta2.beta[" + std::to_string(l + 2) + "]");
    }
  }

  if (opts.level_loss) {
    std::vector<typename AdamW<Scalar>::Block> blocks;
    std::vector<Vector<Scalar>> grads;
    for (std::size_t l = 0; l < depth; ++l) {
      auto& wgt = state.model.projections[l].weights;
      blocks.push_back({wgt.data(), wgt.size()});
      grads.emplace_back(Eigen::Map<const Vector<Scalar>>(grad_proj[l].data(), grad_proj[l].size()));
    }
    if (!state.uses_proxies()) {
      blocks.push_back({state.beta_class.data(), state.beta_class.size()});
      grads.push_back(grad_beta_class);
    } else {
      for (std::size_t l = 0; l < state.proxies.size(); ++l) {
        blocks.push_back({state.proxies[l].data(), state.proxies[l].size()});
        grads.emplace_back(
            Eigen::Map<const Vector<Scalar>>(grad_proxies[l].data(), grad_proxies[l].size()));
      }
    }
    state.opt_theta1.step(blocks, grads);
  }
  if (opts.overall_loss && depth >= 2) {
    std::vector<typename AdamW<Scalar>::Block> blocks;
    std::vector<Vector<Scalar>> grads;
    for (std::size_t l = 0; l + 1 < depth; ++l) {
      blocks.push_back({state.model.params.alpha[l].data(), state.model.params.alpha[l].size()});
      grads.push_back(grad_alpha[l]);
      blocks.push_back({state.model.params.beta[l].data(), state.model.params.beta[l].size()});
      grads.push_back(grad_beta2[l]);
    }
    state.opt_theta2.step(blocks, grads);
  }

  // ----- Edge update, after the parameter step -----
  std::vector<std::vector<Matrix<Scalar>>> correlations;
  correlations.reserve(b);
  for (const auto& e : enc) correlations.push_back(sample_correlations(e));
  batch_edge_update(state.model.edges, correlations);

  ++state.step;
  return metrics;
}

/// Epoch-driving loop over deterministic class-balanced batches.
template <typename Scalar>
void train_run(TrainState<Scalar>& state, const Dataset& data, int epochs,
               const StepOptions& opts = {},
               const std::function<void(int, const StepMetrics&)>& on_epoch = nullptr) {
  BatchSampler sampler(dataset_labels(data), state.cfg.batch_size, state.cfg.classes_per_batch,
                       state.cfg.seed);
  for (int e = 0; e < epochs; ++e) {
    StepMetrics acc;
    const Index batches = sampler.batches_per_epoch();
    for (Index s = 0; s < batches; ++s) {
      const auto metrics = objective_step(state, data, sampler.next_batch(), opts);
      acc.level_loss += metrics.level_loss;
      acc.overall_loss += metrics.overall_loss;
      acc.pairs += metrics.pairs;
    }
    acc.level_loss /= static_cast<double>(batches);
    acc.overall_loss /= static_cast<double>(batches);
    if (on_epoch) on_epoch(e, acc);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: AVSP params, AVSE edges, theta1 tensor blob, step counter.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kThetaBlobVersion = 1;

template <typename Scalar>
void write_theta1_blob(std::ostream& out, const TrainState<Scalar>& state) {
  detail::ByteWriter w(out);
  w.raw("AVST", 4);
  w.u32(kThetaBlobVersion);
  w.u32(state.uses_proxies() ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(state.model.depth()));
  w.u32(static_cast<std::uint32_t>(state.model.dim()));
  w.u32(static_cast<std::uint32_t>(state.n_classes));
  for (const auto& proj : state.model.projections) {
    w.u32(static_cast<std::uint32_t>(proj.in_dim()));
    for (Index i = 0; i < proj.weights.rows(); ++i) {
      for (Index j = 0; j < proj.weights.cols(); ++j) {
        w.f64(static_cast<double>(proj.weights(i, j)));
      }
    }
  }
  if (!state.uses_proxies()) {
    for (Index c = 0; c < state.beta_class.size(); ++c) {
      w.f64(static_cast<double>(state.beta_class[c]));
    }
  } else {
    for (const auto& p : state.proxies) {
      for (Index i = 0; i < p.rows(); ++i) {
        for (Index j = 0; j < p.cols(); ++j) w.f64(static_cast<double>(p(i, j)));
      }
    }
  }
}

template <typename Scalar>
void write_checkpoint(std::ostream& out, const TrainState<Scalar>& state) {
  write_params(out, state.model.params);
  write_edges(out, state.model.edges);
  write_theta1_blob(out, state);
  detail::ByteWriter w(out);
  w.u64(state.step);
}

template <typename Scalar>
void write_checkpoint_file(const std::string& path, const TrainState<Scalar>& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  write_checkpoint(out, state);
  if (!out) throw IoError("checkpoint write failed: " + path);
}

template <typename Scalar = double>
TrainState<Scalar> read_checkpoint(std::istream& in, const Config& cfg) {
  TrainState<Scalar> state;
  state.cfg = cfg;
  state.model.params = read_params<Scalar>(in);
  state.model.edges = read_edges<Scalar>(in);

  detail::ByteReader r(in);
  detail::expect_magic(r, "AVST", "theta1 blob");
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kThetaBlobVersion) {
    throw ParseError("unsupported theta1 blob version " + std::to_string(version), version_at);
  }
  const std::uint32_t loss_kind = r.u32("loss kind");
  const std::uint32_t levels = r.u32("level count");
  const std::uint32_t dim = r.u32("node count");
  const std::uint32_t n_classes = r.u32("class count");
  if (loss_kind > 1 || levels == 0 || levels > kMaxLevels || dim == 0) {
    throw ParseError("theta1 blob header out of range", version_at);
  }
  state.n_classes = static_cast<int>(n_classes);
  state.cfg.loss = loss_kind == 1 ? "proxy_anchor" : "margin";
  state.model.projections.resize(levels);
  for (std::uint32_t l = 0; l < levels; ++l) {
    const std::uint64_t at = r.offset();
    const std::uint32_t c = r.u32("channel count");
    if (c == 0 || std::uint64_t(c) * dim > kMaxLevelElements) {
      throw ParseError("projection dimensions out of range", at);
    }
    auto& proj = state.model.projections[l];
    proj.level = static_cast<int>(l + 1);
    proj.weights.resize(dim, c);
    for (Index i = 0; i < proj.weights.rows(); ++i) {
      for (Index j = 0; j < proj.weights.cols(); ++j) {
        proj.weights(i, j) = static_cast<Scalar>(r.f64("projection"));
      }
    }
  }
  if (loss_kind == 0) {
    state.beta_class.resize(n_classes);
    for (std::uint32_t c = 0; c < n_classes; ++c) {
      state.beta_class[c] = static_cast<Scalar>(r.f64("beta_class"));
    }
  } else {
    state.proxies.resize(levels);
    for (auto& p : state.proxies) {
      p.resize(n_classes, dim);
      for (Index i = 0; i < p.rows(); ++i) {
        for (Index j = 0; j < p.cols(); ++j) p(i, j) = static_cast<Scalar>(r.f64("proxy"));
      }
    }
  }
  state.step = r.u64("step counter");
  state.opt_theta1 = AdamW<Scalar>(static_cast<Scalar>(cfg.lr), static_cast<Scalar>(cfg.weight_decay));
  state.opt_theta2 = AdamW<Scalar>(static_cast<Scalar>(cfg.theta2_lr()), static_cast<Scalar>(cfg.weight_decay));
  return state;
}

template <typename Scalar = double>
TrainState<Scalar> read_checkpoint_file(const std::string& path, const Config& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  return read_checkpoint<Scalar>(in, cfg);
}

/// Serialized parameter bytes, used to assert the gradient-flow split.
template <typename Scalar>
std::string theta1_bytes(const TrainState<Scalar>& state) {
  std::ostringstream out(std::ios::binary);
  write_theta1_blob(out, state);
  return out.str();
}

template <typename Scalar>
std::string theta2_bytes(const TrainState<Scalar>& state) {
  std::ostringstream out(std::ios::binary);
  write_params(out, state.model.params);
  return out.str();
}

}  // namespace simgraph
