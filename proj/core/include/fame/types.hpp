#pragma once

#include <Eigen/Core>

namespace fame {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

}  // namespace fame
