#pragma once

#include <Eigen/Dense>

namespace impulse {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

}  // namespace impulse
