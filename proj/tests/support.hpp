#pragma once

// Shared helpers: finite-difference oracles and scratch directories.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <optional>

#include "flowgate/error.hpp"
#include "flowgate/nn.hpp"

namespace testing {

// |a - n| relative to the larger magnitude, floored so near-zero gradients
// are compared absolutely.
inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Worst relative error between `analytic` and central differences of `f`
/// taken with respect to every entry of `x` (perturbed in place).
inline double check_entries(flowgate::nn::Tensor& x, const flowgate::nn::Tensor& analytic,
                            const std::function<double()>& f, double h = 1e-4) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f();
    x.data()[i] = keep - h;
    const double down = f();
    x.data()[i] = keep;
    worst = std::max(worst, rel_err(analytic.data()[i], (up - down) / (2 * h)));
  }
  return worst;
}

/// Same over a parameter list, comparing against each Parameter::grad.
inline double check_params(const std::vector<flowgate::nn::Parameter*>& params,
                           const std::function<double()>& f, double h = 1e-4) {
  double worst = 0.0;
  for (auto* p : params) worst = std::max(worst, check_entries(p->value, p->grad, f, h));
  return worst;
}

inline flowgate::nn::Tensor random_tensor(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                                          double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  flowgate::nn::Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

/// Code of the flowgate::Error thrown by `f`, or nothing if it returns.
template <class F>
std::optional<flowgate::ErrorCode> error_code(F&& f) {
  try {
    f();
  } catch (const flowgate::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// Random nonzero biases, so no ReLU sits exactly on its kink because an
/// upstream layer went dark. Gradient checks use this after init.
inline void jitter_biases(std::vector<flowgate::nn::Parameter*> params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* p : params) {
    if (p->value.rows() != 1) continue;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
  }
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("flowgate-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
