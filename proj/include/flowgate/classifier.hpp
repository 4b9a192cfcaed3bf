#pragma once

// Binary classifier over latent vectors: normal -> 0, pseudo-anomaly -> 1.
// Its sigmoid output is the anomaly score.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flowgate/checkpoint.hpp"
#include "flowgate/config.hpp"
#include "flowgate/nn.hpp"
#include "flowgate/packet.hpp"
#include "flowgate/training.hpp"
#include "flowgate/whitening.hpp"

namespace flowgate::classifier {

struct ClassifierConfig {
  std::size_t input_dim = 70;
  std::vector<std::size_t> hidden = {64, 32};
  /// Train in coordinates whitened by the normal latents, then fold the
  /// transform into the first layer. The saved network still takes raw z.
  bool whiten = true;
  OptimConfig optim;

  KeyValues to_kv() const;
  static ClassifierConfig from_kv(const KeyValues& kv);
  void validate() const;
};

inline constexpr double kDefaultThreshold = 0.5;

class ClassifierModel {
 public:
  explicit ClassifierModel(ClassifierConfig cfg = {});

  void init(std::uint64_t seed);
  const ClassifierConfig& config() const { return cfg_; }

  /// Scores in (0, 1), one per row.
  Eigen::VectorXd score(const nn::Tensor& z) const;
  double score_one(std::span<const double> z) const;
  /// ANOMALY iff score >= threshold; threshold must lie in (0, 1).
  packet::Label predict(std::span<const double> z, double threshold = kDefaultThreshold) const;
  std::vector<packet::Label> predict(const nn::Tensor& z, double threshold = kDefaultThreshold) const;

  nn::Mlp& net() { return net_; }
  const nn::Mlp& net() const { return net_; }
  std::size_t parameter_count() const { return net_.parameter_count(); }

  checkpoint::Checkpoint to_checkpoint(std::uint64_t seed, const std::string& metadata) const;
  static ClassifierModel from_checkpoint(const checkpoint::Checkpoint& ckpt);
  static ClassifierModel load(const std::filesystem::path& path, checkpoint::LoadTrace* trace = nullptr);

 private:
  ClassifierConfig cfg_;
  nn::Mlp net_;
};

/// Rewrites `layer` so that layer(z) equals the original layer((z - mean) * transform).
void fold_whitening(const Whitening& w, nn::DenseLayer& layer);

struct TrainedClassifier {
  ClassifierModel model;
  TrainHistory history;
};

/// Binary cross-entropy on shuffled mixed batches; early stopping on held-out loss.
TrainedClassifier train_classifier(const nn::Tensor& normals, const nn::Tensor& pseudo,
                                   const ClassifierConfig& cfg, std::uint64_t seed,
                                   const ProgressFn& progress = {});

}  // namespace flowgate::classifier
