#include "flowgate/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowgate/error.hpp"
#include "flowgate/rng.hpp"
#include "flowgate/training.hpp"

namespace flowgate::synthesis {

void SynthesisConfig::validate() const {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) {
    throw Error(ErrorCode::BadConfig, "synthesis ratio must be positive");
  }
  if (ratio > 1.0 && !allow_oversampling) {
    throw Error(ErrorCode::BadConfig, "ratio > 1 requires oversampling (ablation) mode");
  }
}

nn::Tensor sample_noise(const NoiseSpec& spec, std::size_t n, std::size_t dim) {
  if (spec.sigma < 0.0 || std::isnan(spec.sigma)) {
    throw Error(ErrorCode::NegativeSigma, "sigma = " + std::to_string(spec.sigma));
  }
  const std::uint64_t stream = derive_seed(spec.seed, "noise");
  nn::Tensor out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(stream, static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> eps(0.0, 1.0);
    for (std::size_t j = 0; j < dim; ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = spec.mu + spec.sigma * eps(rng);
    }
  }
  return out;
}

std::vector<std::size_t> select_normals(std::size_t n_normals, const SynthesisConfig& cfg,
                                        std::uint64_t seed) {
  cfg.validate();
  const auto m = static_cast<std::size_t>(std::floor(cfg.ratio * static_cast<double>(n_normals)));
  Rng rng(derive_seed(seed, "subset"));
  std::vector<std::size_t> out;
  out.reserve(m);
  std::vector<std::size_t> idx(n_normals);
  std::iota(idx.begin(), idx.end(), 0);
  while (out.size() + n_normals <= m) out.insert(out.end(), idx.begin(), idx.end());
  const std::size_t rest = m - out.size();
  // Partial Fisher-Yates: the first `rest` entries are a uniform sample.
  for (std::size_t i = 0; i < rest; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_normals - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(idx[i]);
  }
  return out;
}

nn::Tensor synthesize(const flow::FlowModel& flow, const nn::Tensor& normal_latents,
                      const NoiseSpec& spec, const SynthesisConfig& cfg) {
  if (normal_latents.rows() == 0) throw Error(ErrorCode::EmptyInput, "no normal latents to perturb");
  if (spec.sigma < 0.0) throw Error(ErrorCode::NegativeSigma, "sigma = " + std::to_string(spec.sigma));
  const auto chosen = select_normals(static_cast<std::size_t>(normal_latents.rows()), cfg, spec.seed);
  const nn::Tensor z = gather_rows(normal_latents, chosen);
  const nn::Tensor eta = sample_noise(spec, chosen.size(), static_cast<std::size_t>(normal_latents.cols()));
  if (cfg.bypass_flow) return z + eta;
  const nn::Tensor c = flow.normalize(z).c;
  return flow.generate(c + eta);
}

}  // namespace flowgate::synthesis
