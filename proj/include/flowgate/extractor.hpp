#pragma once

// Adversarially trained reconstruction model. The encoder maps packet
// vectors to latent codes, the decoder reconstructs them, and the
// discriminator supplies both the real/fake score and a hidden-layer
// feature tap used by the generator's adversarial term.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flowgate/checkpoint.hpp"
#include "flowgate/config.hpp"
#include "flowgate/nn.hpp"
#include "flowgate/packet.hpp"
#include "flowgate/training.hpp"

namespace flowgate::extractor {

struct ExtractorConfig {
  std::size_t input_dim = 1600;
  std::size_t latent_dim = 70;
  double w_adv = 1.0;
  double w_rec = 50.0;
  std::vector<std::size_t> encoder_hidden = {512, 128};
  std::vector<std::size_t> disc_hidden = {256, 64};
  OptimConfig optim;

  std::vector<std::size_t> encoder_widths() const;
  std::vector<std::size_t> decoder_widths() const;
  std::vector<std::size_t> disc_widths() const;

  KeyValues to_kv() const;
  static ExtractorConfig from_kv(const KeyValues& kv);
  void validate() const;
};

/// Eq.-1 style objective from precomputed pieces:
/// w_adv * mse(phi_x, phi_xhat) + w_rec * mse(x, xhat).
double generator_objective(const nn::Tensor& x, const nn::Tensor& x_hat, const nn::Tensor& phi_x,
                           const nn::Tensor& phi_x_hat, double w_adv, double w_rec);
/// mean(1 - D(x)) + mean(D(G(x))).
double discriminator_objective(const nn::Tensor& d_real, const nn::Tensor& d_fake);

class FeatureExtractor {
 public:
  explicit FeatureExtractor(ExtractorConfig cfg = {});

  void init(std::uint64_t seed);

  const ExtractorConfig& config() const { return cfg_; }

  nn::Tensor encode(const nn::Tensor& x) const;
  nn::Tensor reconstruct(const nn::Tensor& x) const;
  /// Discriminator output, N x 1.
  nn::Tensor discriminate(const nn::Tensor& x) const;
  /// Last hidden layer of the discriminator.
  nn::Tensor features(const nn::Tensor& x) const;

  double generator_loss(const nn::Tensor& x) const;
  double discriminator_loss(const nn::Tensor& x) const;

  /// Recorded generator loss for input `x`. Gradients reach the encoder,
  /// decoder and `x`; the discriminator is held constant.
  nn::Var generator_loss(nn::Tape& tape, nn::Var x);
  /// Recorded discriminator loss; G(x) enters as a constant.
  nn::Var discriminator_loss(nn::Tape& tape, nn::Var x);

  std::vector<nn::Parameter*> generator_parameters();
  std::vector<nn::Parameter*> discriminator_parameters();

  nn::Mlp& encoder() { return encoder_; }
  nn::Mlp& decoder() { return decoder_; }
  nn::Mlp& discriminator() { return disc_; }
  const nn::Mlp& encoder() const { return encoder_; }
  const nn::Mlp& decoder() const { return decoder_; }
  const nn::Mlp& discriminator() const { return disc_; }

  std::size_t parameter_count() const;

  checkpoint::Checkpoint to_checkpoint(std::uint64_t seed, const std::string& metadata) const;
  static FeatureExtractor from_checkpoint(const checkpoint::Checkpoint& ckpt);

 private:
  ExtractorConfig cfg_;
  nn::Mlp encoder_;
  nn::Mlp decoder_;
  nn::Mlp disc_;
};

/// Encoder-only view used at inference time.
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const ExtractorConfig& cfg);

  nn::Tensor encode(const nn::Tensor& x) const { return net_.forward(x); }
  std::size_t input_dim() const { return net_.in_dim(); }
  std::size_t latent_dim() const { return net_.out_dim(); }
  std::size_t parameter_count() const { return net_.parameter_count(); }

  /// Reads only the "encoder" table; other tables are skipped unread.
  static Encoder load(const std::filesystem::path& path, checkpoint::LoadTrace* trace = nullptr);
  static Encoder from_table(const ExtractorConfig& cfg, const checkpoint::ParamTable& table);

 private:
  nn::Mlp net_;
};

struct TrainedExtractor {
  FeatureExtractor model;
  TrainHistory history;
};

/// Alternating discriminator/generator updates with separate Adam states and
/// early stopping on held-out generator loss. Unlabeled rows count as normal.
TrainedExtractor train_extractor(std::span<const packet::EncodedPacket> dataset,
                                 const ExtractorConfig& cfg, std::uint64_t seed,
                                 const ProgressFn& progress = {});
TrainedExtractor train_extractor(const nn::Tensor& data, const ExtractorConfig& cfg,
                                 std::uint64_t seed, const ProgressFn& progress = {});

/// Encodes in chunks to bound memory.
nn::Tensor encode_all(const nn::Tensor& data, const nn::Mlp& encoder);

}  // namespace flowgate::extractor
