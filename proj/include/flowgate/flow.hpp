#pragma once

// Bidirectional normalizing flow built from affine coupling blocks.
//
// Block k splits h by its mask into a pass-through half a and an active
// half b. Normalization: b' = b * exp(s(a)) + t(a); generation inverts it
// with b = (b' - t(a)) * exp(-s(a)). s(a) = clamp * tanh(s_net(a)), so the
// log-determinant of a block is the row sum of s(a). Consecutive blocks use
// complementary masks.
//
// A fixed affine whitening, fitted on the training latents, runs before the
// first block. The clamp bounds how far the couplings can rescale a
// direction; without the whitening, near-degenerate latent directions stay
// unnormalized and generation from perturbed c lands far off the data.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flowgate/checkpoint.hpp"
#include "flowgate/config.hpp"
#include "flowgate/nn.hpp"
#include "flowgate/training.hpp"
#include "flowgate/whitening.hpp"

namespace flowgate::flow {

struct FlowConfig {
  std::size_t dim = 70;
  std::size_t blocks = 8;
  std::vector<std::size_t> hidden = {128, 128};
  nn::Activation hidden_activation = nn::Activation::Tanh;
  double clamp = 2.0;
  /// Fit the input whitening during training (identity otherwise).
  bool whiten = true;
  OptimConfig optim;

  KeyValues to_kv() const;
  static FlowConfig from_kv(const KeyValues& kv);
  void validate() const;
};

struct CouplingBlock {
  std::vector<int> pass;    // mask == 1
  std::vector<int> active;  // mask == 0
  nn::Mlp s_net;
  nn::Mlp t_net;
  double clamp = 2.0;

  std::vector<std::uint8_t> mask(std::size_t dim) const;
  /// clamp * tanh(s_net(a)).
  nn::Tensor scale(const nn::Tensor& a) const;
  nn::Tensor shift(const nn::Tensor& a) const { return t_net.forward(a); }
};

struct Normalized {
  nn::Tensor c;
  Eigen::VectorXd log_det;
};

class FlowModel {
 public:
  explicit FlowModel(FlowConfig cfg = {});

  /// Glorot hidden layers; final subnet layers zeroed so the coupling stack
  /// starts as the identity. With `zero_final` false every layer is randomized.
  void init(std::uint64_t seed, bool zero_final = true);

  const FlowConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.dim; }

  /// z -> (c, log|det dc/dz|), one sample per row.
  Normalized normalize(const nn::Tensor& z) const;
  /// c -> z, the exact inverse of normalize().
  nn::Tensor generate(const nn::Tensor& c) const;
  /// Generation with the log-determinant of dz/dc.
  Normalized generate_with_log_det(const nn::Tensor& c) const;
  /// log N(c; 0, I) + log_det per row.
  Eigen::VectorXd log_likelihood(const nn::Tensor& z) const;

  /// Recorded normalization: returns (c, log_det as rows x 1).
  std::pair<nn::Var, nn::Var> normalize(nn::Tape& tape, nn::Var z);
  /// Recorded mean negative log-likelihood.
  nn::Var nll(nn::Tape& tape, nn::Var z);

  /// Affine map applied before the first block; identity until set.
  const Whitening& input_whitening() const { return input_; }
  void set_input_whitening(Whitening w);

  std::vector<CouplingBlock>& blocks() { return blocks_; }
  const std::vector<CouplingBlock>& blocks() const { return blocks_; }
  std::vector<nn::Parameter*> parameters();
  /// Trainable parameters only; the input whitening is fitted, not learned.
  std::size_t parameter_count() const;

  checkpoint::Checkpoint to_checkpoint(std::uint64_t seed, const std::string& metadata) const;
  static FlowModel from_checkpoint(const checkpoint::Checkpoint& ckpt);

 private:
  FlowConfig cfg_;
  Whitening input_;
  std::vector<CouplingBlock> blocks_;
};

/// -(d/2) ln(2 pi) - |c|^2 / 2 per row.
Eigen::VectorXd standard_normal_log_density(const nn::Tensor& c);

struct TrainedFlow {
  FlowModel model;
  TrainHistory history;
};

/// Minimizes mean NLL with Adam; early stopping on held-out NLL.
TrainedFlow train_flow(const nn::Tensor& latents, const FlowConfig& cfg, std::uint64_t seed,
                       const ProgressFn& progress = {});

double mean_nll(const FlowModel& model, const nn::Tensor& z);

}  // namespace flowgate::flow
