#include "flowgate/whitening.hpp"

#include <algorithm>
#include <cmath>

#include "flowgate/error.hpp"

namespace flowgate {

Whitening Whitening::identity(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  return {Eigen::RowVectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d), Eigen::MatrixXd::Identity(d, d), 0.0};
}

nn::Tensor Whitening::apply(const nn::Tensor& z) const { return (z.rowwise() - mean) * transform; }

nn::Tensor Whitening::restore(const nn::Tensor& u) const {
  nn::Tensor z = u * inverse;
  z.rowwise() += mean;
  return z;
}

Whitening fit_whitening(const nn::Tensor& z, NullPolicy policy) {
  if (z.rows() == 0) throw Error(ErrorCode::EmptyDataset, "cannot fit a whitening on no rows");
  Whitening w;
  w.mean = z.colwise().mean();
  const nn::Tensor centered = z.rowwise() - w.mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(z.rows());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const double top = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
  const double cut = top * kNullVariance;

  const Eigen::Index d = cov.rows();
  Eigen::VectorXd scale(d), unscale(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double v = eig.eigenvalues()(i);
    if (v > cut || policy == NullPolicy::Floor) {
      const double kept = std::max(v, cut);
      scale(i) = 1.0 / std::sqrt(kept);
      unscale(i) = std::sqrt(kept);
      w.log_det -= 0.5 * std::log(kept);
    } else {
      scale(i) = 0.0;
      unscale(i) = 0.0;
    }
  }
  if (policy == NullPolicy::Drop) w.log_det = 0.0;
  // The eigenvectors are orthonormal, so the inverse needs no factorization.
  w.transform = eig.eigenvectors() * scale.asDiagonal();
  w.inverse = unscale.asDiagonal() * eig.eigenvectors().transpose();
  return w;
}

}  // namespace flowgate
