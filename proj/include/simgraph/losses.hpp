#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/types.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace simgraph {

/// log(1 + e^x) without overflow.
template <typename Scalar>
Scalar softplus(Scalar x) {
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

/// One labeled pair distance for the margin loss.
struct PairDistance {
  double distance = 0;
  bool positive = false;
  int anchor_class = 0;
};

template <typename Scalar>
struct MarginLossResult {
  Scalar value = 0;
  std::vector<Scalar> grad_distance;  // dL/dd per input pair
  Vector<Scalar> grad_beta;           // dL/dbeta per class
};

/// Hinged pull/push on pair distances with a learnable per-class boundary:
///   mean over positives of [d - (beta_y - alpha)]_+
/// + mean over negatives of [(beta_y + alpha) - d]_+.
/// Subgradient at the hinge kink is 0.
template <typename Scalar>
MarginLossResult<Scalar> margin_loss(const std::vector<PairDistance>& pairs,
                                     const Vector<Scalar>& beta_class, Scalar alpha) {
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& p : pairs) {
    if (p.anchor_class < 0 || p.anchor_class >= beta_class.size()) {
      throw ShapeError("margin_loss: anchor class " + std::to_string(p.anchor_class) +
                       " outside beta table of size " + std::to_string(beta_class.size()));
    }
    (p.positive ? n_pos : n_neg)++;
  }
  if (n_pos == 0 && n_neg == 0) {
    throw ConfigError("margin_loss: no pairs given, mean undefined");
  }
  MarginLossResult<Scalar> out;
  out.grad_distance.assign(pairs.size(), Scalar(0));
  out.grad_beta = Vector<Scalar>::Zero(beta_class.size());
  const Scalar inv_pos = n_pos ? Scalar(1) / static_cast<Scalar>(n_pos) : Scalar(0);
  const Scalar inv_neg = n_neg ? Scalar(1) / static_cast<Scalar>(n_neg) : Scalar(0);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const Scalar beta = beta_class[p.anchor_class];
    const Scalar d = static_cast<Scalar>(p.distance);
    if (p.positive) {
      const Scalar slack = d - (beta - alpha);
      if (slack > Scalar(0)) {
        out.value += inv_pos * slack;
        out.grad_distance[i] = inv_pos;
        out.grad_beta[p.anchor_class] -= inv_pos;
      }
    } else {
      const Scalar slack = (beta + alpha) - d;
      if (slack > Scalar(0)) {
        out.value += inv_neg * slack;
        out.grad_distance[i] = -inv_neg;
        out.grad_beta[p.anchor_class] += inv_neg;
      }
    }
  }
  return out;
}

struct ProxyAnchorConfig {
  double scale = 16.0;  // exponent temperature
  double beta = 2.0;    // boundary center
  double tau = 0.2;     // half margin; positives target beta-tau, negatives beta+tau
};

template <typename Scalar>
struct ProxyAnchorResult {
  Scalar value = 0;
  Matrix<Scalar> grad_dist;  // dL/dd, same shape as the distance matrix
};

/// Dissimilarity-form proxy anchor loss over a samples x proxies distance
/// matrix. Batches without any positive proxy skip the positive term; inner
/// log-sums are evaluated through log-sum-exp so |scale * d| up to several
/// hundred stays finite.
template <typename Scalar>
ProxyAnchorResult<Scalar> proxy_anchor_loss(const Matrix<Scalar>& dist, const std::vector<int>& labels,
                                            const ProxyAnchorConfig& cfg) {
  const Index n = dist.rows();
  const Index n_proxies = dist.cols();
  if (n_proxies < 1) throw ConfigError("proxy_anchor_loss: no proxies");
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("proxy_anchor_loss: label count " + std::to_string(labels.size()) +
                     " differs from distance rows " + std::to_string(n));
  }
  for (int y : labels) {
    if (y < 0 || y >= n_proxies) {
      throw ShapeError("proxy_anchor_loss: label " + std::to_string(y) + " has no proxy");
    }
  }
  const Scalar a = static_cast<Scalar>(cfg.scale);
  const Scalar pos_target = static_cast<Scalar>(cfg.beta - cfg.tau);
  const Scalar neg_target = static_cast<Scalar>(cfg.beta + cfg.tau);

  ProxyAnchorResult<Scalar> out;
  out.grad_dist = Matrix<Scalar>::Zero(n, n_proxies);

  Index n_positive_proxies = 0;
  for (Index p = 0; p < n_proxies; ++p) {
    for (Index x = 0; x < n; ++x) {
      if (labels[static_cast<std::size_t>(x)] == p) {
        ++n_positive_proxies;
        break;
      }
    }
  }

  // One pass per proxy and sign; exponents t, term softplus(logsumexp(t)),
  // gradient sigmoid(lse) * softmax(t).
  auto accumulate = [&](Index p, bool positive, Scalar weight) {
    Scalar lse = -std::numeric_limits<Scalar>::infinity();
    std::vector<std::pair<Index, Scalar>> terms;
    for (Index x = 0; x < n; ++x) {
      const bool is_pos = labels[static_cast<std::size_t>(x)] == p;
      if (is_pos != positive) continue;
      const Scalar t = positive ? a * (dist(x, p) - pos_target) : -a * (dist(x, p) - neg_target);
      terms.emplace_back(x, t);
      lse = std::max(lse, t);
    }
    if (terms.empty()) return;  // log(1) = 0
    Scalar sum = 0;
    for (const auto& [x, t] : terms) sum += std::exp(t - lse);
    lse += std::log(sum);  // now log sum e^t
    out.value += weight * softplus(lse);
    const Scalar gate = Scalar(1) / (Scalar(1) + std::exp(-lse));  // sigmoid(lse)
    for (const auto& [x, t] : terms) {
      const Scalar share = std::exp(t - lse);  // softmax weight of this term
      out.grad_dist(x, p) += weight * gate * share * (positive ? a : -a);
    }
  };

  if (n_positive_proxies > 0) {
    const Scalar w_pos = Scalar(1) / static_cast<Scalar>(n_positive_proxies);
    for (Index p = 0; p < n_proxies; ++p) accumulate(p, true, w_pos);
  }
  const Scalar w_neg = Scalar(1) / static_cast<Scalar>(n_proxies);
  for (Index p = 0; p < n_proxies; ++p) accumulate(p, false, w_neg);
  return out;
}

}  // namespace simgraph
