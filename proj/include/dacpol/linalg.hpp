#pragma once

#include <Eigen/Dense>

namespace dacpol {

// Row-major so that one row is one sample and rows map onto contiguous spans.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace dacpol
