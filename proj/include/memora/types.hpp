#pragma once

#include <Eigen/Dense>

namespace memora {

// Batches are row-major in spirit: one sample per row.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace memora
