#pragma once

// Shared pieces of the three training loops.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "flowgate/config.hpp"
#include "flowgate/nn.hpp"
#include "flowgate/rng.hpp"

namespace flowgate {

struct OptimConfig {
  int epochs = 100;
  std::size_t batch_size = 64;
  int patience = 10;
  double holdout = 0.1;
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;

  void to_kv(KeyValues& kv) const;
  static OptimConfig from_kv(const KeyValues& kv);
  nn::AdamState adam() const;
  void validate() const;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

/// Seeded permutation; the first round(fraction * n) indices are held out,
/// with at least one training row kept.
Split holdout_split(std::size_t n, double fraction, Rng& rng);

nn::Tensor gather_rows(const nn::Tensor& m, std::span<const std::size_t> rows);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double holdout_loss = 0.0;
};

struct TrainHistory {
  double initial_holdout = 0.0;
  int best_epoch = -1;
  double best_holdout = std::numeric_limits<double>::infinity();
  std::vector<EpochRecord> epochs;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Returns true when `loss` is a new best.
  bool update(double loss) {
    if (loss < best_) {
      best_ = loss;
      bad_epochs_ = 0;
      return true;
    }
    ++bad_epochs_;
    return false;
  }
  bool should_stop() const { return bad_epochs_ >= patience_; }
  double best() const { return best_; }

 private:
  int patience_;
  int bad_epochs_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

}  // namespace flowgate
