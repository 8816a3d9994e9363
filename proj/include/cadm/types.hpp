#pragma once

#include <Eigen/Dense>

namespace cadm {

using Scalar = double;

template <typename S>
using MatrixT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VectorT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Rows index batch items, columns index representation dimensions.
using Matrix = MatrixT<Scalar>;
using Vector = VectorT<Scalar>;
using IntMatrix = MatrixT<int>;
using IntVector = VectorT<int>;
using Index = Eigen::Index;

}  // namespace cadm
