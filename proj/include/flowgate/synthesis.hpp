#pragma once

// Pseudo-anomaly synthesis: perturb normalized representations with
// reparameterized Gaussian noise and map them back through the generation
// direction of the flow.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "flowgate/config.hpp"
#include "flowgate/flow.hpp"
#include "flowgate/nn.hpp"

namespace flowgate::synthesis {

struct NoiseSpec {
  double mu = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

struct SynthesisConfig {
  double ratio = 0.5;
  /// Permits ratio > 1; each normal is then reused floor(ratio) times plus a
  /// sampled remainder, each copy with its own noise draw.
  bool allow_oversampling = false;
  /// Ablation: add the noise to z directly and skip the flow.
  bool bypass_flow = false;

  void validate() const;
};

/// Row i is mu + sigma * eps_i, with eps_i ~ N(0, I) drawn from a stream
/// seeded by (seed, i). Deterministic per (seed, n).
nn::Tensor sample_noise(const NoiseSpec& spec, std::size_t n, std::size_t dim = 70);

/// floor(ratio * n_normals) selected normals, in selection order.
std::vector<std::size_t> select_normals(std::size_t n_normals, const SynthesisConfig& cfg,
                                        std::uint64_t seed);

/// z_hat = generate(normalize(z) + eta) for each selected normal z.
nn::Tensor synthesize(const flow::FlowModel& flow, const nn::Tensor& normal_latents,
                      const NoiseSpec& spec, const SynthesisConfig& cfg);

}  // namespace flowgate::synthesis
