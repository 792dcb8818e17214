#pragma once

#include <Eigen/Dense>
#include <complex>

namespace kvn {

using cd = std::complex<double>;

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

using VecIn = Eigen::Ref<const Eigen::VectorXd>;
using VecOut = Eigen::Ref<Eigen::VectorXd>;
using MatOut = Eigen::Ref<Eigen::MatrixXd>;

// Point sets are stored column-wise: a d x m matrix holds m states.
using Points = Eigen::MatrixXd;

}  // namespace kvn
