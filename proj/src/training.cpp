#include "flowgate/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowgate/error.hpp"

namespace flowgate {

void OptimConfig::to_kv(KeyValues& kv) const {
  kv.set("epochs", epochs);
  kv.set("batch_size", batch_size);
  kv.set("patience", patience);
  kv.set("holdout", holdout);
  kv.set("lr", lr);
  kv.set("beta1", beta1);
  kv.set("beta2", beta2);
}

OptimConfig OptimConfig::from_kv(const KeyValues& kv) {
  OptimConfig c;
  c.epochs = kv.get("epochs", c.epochs);
  c.batch_size = kv.get("batch_size", c.batch_size);
  c.patience = kv.get("patience", c.patience);
  c.holdout = kv.get("holdout", c.holdout);
  c.lr = kv.get("lr", c.lr);
  c.beta1 = kv.get("beta1", c.beta1);
  c.beta2 = kv.get("beta2", c.beta2);
  c.validate();
  return c;
}

nn::AdamState OptimConfig::adam() const {
  nn::AdamState s;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  return s;
}

void OptimConfig::validate() const {
  if (epochs < 0 || batch_size == 0 || patience < 1 || holdout < 0.0 || holdout >= 1.0 ||
      !(lr > 0.0) || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw Error(ErrorCode::BadConfig, "optimizer settings out of range");
  }
}

Split holdout_split(std::size_t n, double fraction, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_hold = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_hold >= n) n_hold = n > 0 ? n - 1 : 0;
  Split s;
  s.holdout.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
  return s;
}

nn::Tensor gather_rows(const nn::Tensor& m, std::span<const std::size_t> rows) {
  nn::Tensor out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace flowgate
