#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace simgraph {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Vector<Scalar, Eigen::Dynamic>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = Vector<double>;
using Mat = Matrix<double>;

}  // namespace simgraph
