#pragma once

#include <Eigen/Dense>

namespace tagattack {

// Node-major dense matrices: row i is node i.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace tagattack
