#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/types.hpp>

#include <cstdint>
#include <vector>

namespace simgraph {

/// Adaptive-moment optimizer with decoupled weight decay. Operates on a
/// fixed-order list of flat parameter blocks; moments are allocated lazily
/// on the first step.
template <typename Scalar>
class AdamW {
 public:
  AdamW() = default;
  AdamW(Scalar lr, Scalar weight_decay) : lr_(lr), weight_decay_(weight_decay) {}

  struct Block {
    Scalar* data = nullptr;
    Index size = 0;
  };

  void step(const std::vector<Block>& params, const std::vector<Vector<Scalar>>& grads) {
    if (params.size() != grads.size()) {
      throw ShapeError("AdamW::step: block count mismatch");
    }
    if (m_.empty()) {
      for (const auto& b : params) {
        m_.push_back(Vector<Scalar>::Zero(b.size));
        v_.push_back(Vector<Scalar>::Zero(b.size));
      }
    }
    if (m_.size() != params.size()) {
      throw ShapeError("AdamW::step: block layout changed between steps");
    }
    ++t_;
    const Scalar bc1 = Scalar(1) - std::pow(beta1_, static_cast<Scalar>(t_));
    const Scalar bc2 = Scalar(1) - std::pow(beta2_, static_cast<Scalar>(t_));
    for (std::size_t b = 0; b < params.size(); ++b) {
      if (grads[b].size() != params[b].size || m_[b].size() != params[b].size) {
        throw ShapeError("AdamW::step: block size mismatch");
      }
      Eigen::Map<Vector<Scalar>> theta(params[b].data, params[b].size);
      m_[b] = beta1_ * m_[b] + (Scalar(1) - beta1_) * grads[b];
      v_[b] = beta2_ * v_[b].array().matrix() +
              (Scalar(1) - beta2_) * grads[b].array().square().matrix();
      const auto m_hat = m_[b].array() / bc1;
      const auto v_hat = v_[b].array() / bc2;
      theta.array() -= lr_ * (m_hat / (v_hat.sqrt() + eps_));
      theta.array() -= lr_ * weight_decay_ * theta.array();
    }
  }

  std::uint64_t steps() const { return t_; }
  Scalar learning_rate() const { return lr_; }
  void set_learning_rate(Scalar lr) { lr_ = lr; }

 private:
  Scalar lr_ = Scalar(1e-3);
  Scalar weight_decay_ = Scalar(0);
  Scalar beta1_ = Scalar(0.9);
  Scalar beta2_ = Scalar(0.999);
  Scalar eps_ = Scalar(1e-8);
  std::uint64_t t_ = 0;
  std::vector<Vector<Scalar>> m_, v_;
};

}  // namespace simgraph
