#pragma once

#include <Eigen/Dense>

namespace flatmin {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

}  // namespace flatmin
