#pragma once

#include <Eigen/Dense>

namespace shiftcal {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;

}  // namespace shiftcal
