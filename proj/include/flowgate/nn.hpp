#pragma once

// Dense-network substrate: tensors, layers, a reverse-mode tape and Adam.
// Tensors are row-major matrices with one sample per row.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace flowgate::nn {

using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { Linear, Relu, LeakyRelu, Tanh, Sigmoid };

inline constexpr double kLeakySlope = 0.2;

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

Tensor apply_activation(const Tensor& pre, Activation a);

struct Parameter {
  Tensor value;
  Tensor grad;

  void zero_grad();
};

struct DenseLayer {
  Parameter weight;  // out x in
  Parameter bias;    // 1 x out
  Activation activation = Activation::Linear;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act);

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.value.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.value.rows()); }

  /// activation(x * W^T + b), one sample per row of `x`.
  Tensor forward(const Tensor& x) const;

  /// Uniform in +-sqrt(6 / (in + out)), bias zero.
  void init_glorot(std::mt19937_64& rng);
  void set_zero();
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::span<const std::size_t> widths, Activation hidden, Activation output);

  Tensor forward(const Tensor& x) const;
  /// Runs only the first `n_layers` layers.
  Tensor forward_prefix(const Tensor& x, std::size_t n_layers) const;

  void init_glorot(std::mt19937_64& rng);
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }

 private:
  std::vector<DenseLayer> layers_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  const Tape* owner = nullptr;
  std::size_t id = 0;
};

// Records forward operations and replays them in reverse. Every node is
// visited at most once by backward(). Parameter gradients accumulate into
// Parameter::grad; callers zero them between steps.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf without gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept and readable through grad().
  Var variable(Tensor value);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() loss w.r.t. `v`; zeros if unreached.
  Tensor grad(Var v) const;

  /// activation(x * W^T + b). With `train_params` false the layer is treated
  /// as constant: gradients flow to `x` only.
  Var dense(Var x, DenseLayer& layer, bool train_params = true);
  /// Chains Mlp layers; see dense().
  Var mlp(Var x, Mlp& net, bool train_params = true, std::size_t n_layers = SIZE_MAX);

  Var activate(Var x, Activation a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double k);
  Var add_scalar(Var a, double k);
  /// (a - shift) * m with constant `shift` (1 x in) and `m` (in x out).
  Var affine(Var a, const Eigen::RowVectorXd& shift, const Eigen::MatrixXd& m);
  Var exp(Var a);
  Var tanh(Var a);
  Var square(Var a);
  /// Columns `cols` of `a`, in order.
  Var gather_cols(Var a, const std::vector<int>& cols);
  /// Width-`width` tensor with a's columns at a_cols and b's at b_cols.
  Var merge_cols(Var a, const std::vector<int>& a_cols, Var b, const std::vector<int>& b_cols,
                 int width);
  /// Per-row sum, shape rows x 1.
  Var row_sum(Var a);
  Var sum(Var a);
  Var mean(Var a);
  Var mse(Var a, Var b);
  Var bce(Var pred, const Tensor& target);

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Tape&, std::size_t)> backward);
  void check(Var v) const;
  void accumulate(std::size_t id, const Tensor& g);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  std::vector<Node> nodes_;
};

/// Mean of squared element differences.
double mse(const Tensor& a, const Tensor& b);
/// Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7].
double bce(const Tensor& pred, const Tensor& target);

inline constexpr double kBceClamp = 1e-7;

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update of `params` from their `grad` fields.
/// Moments are zero-initialized on the first call and shape-checked after.
void adam_step(AdamState& state, std::span<Parameter* const> params);

}  // namespace flowgate::nn
