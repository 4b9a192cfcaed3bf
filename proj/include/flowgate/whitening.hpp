#pragma once

// PCA whitening fitted on a sample of row vectors.
//
// Encoder latents are badly conditioned and, with dead ReLU units, confined
// to an affine subspace. Both the flow and the classifier see them through
// this transform.

#include <cstddef>

#include "flowgate/nn.hpp"

namespace flowgate {

/// Relative variance below which a direction counts as outside the span of
/// the fitted rows.
inline constexpr double kNullVariance = 1e-10;

enum class NullPolicy {
  Drop,   // map null directions to zero (rank-deficient, not invertible)
  Floor,  // scale them as if their variance were kNullVariance * max
};

struct Whitening {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd transform;  // u = (z - mean) * transform
  Eigen::MatrixXd inverse;    // z = u * inverse + mean, exact under Floor
  double log_det = 0.0;       // log|det transform|; 0 for Drop

  static Whitening identity(std::size_t dim);

  nn::Tensor apply(const nn::Tensor& z) const;
  nn::Tensor restore(const nn::Tensor& u) const;
};

/// u has identity covariance over the fitted rows, restricted to their span.
Whitening fit_whitening(const nn::Tensor& z, NullPolicy policy);

}  // namespace flowgate
