#pragma once

#include <Eigen/Dense>

namespace mtlvc {

// Time-major dense matrix used for features and network activations.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace mtlvc
