#include "flowgate/nn.hpp"

#include <algorithm>
#include <cmath>

#include "flowgate/error.hpp"

namespace flowgate::nn {

namespace {

std::string shape_of(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + shape_of(a) + " vs " + shape_of(b));
  }
}

// Activation derivative expressed through the activation output.
Tensor activation_slope(const Tensor& out, Activation a) {
  switch (a) {
    case Activation::Linear: return Tensor::Ones(out.rows(), out.cols());
    case Activation::Relu: return (out.array() > 0.0).cast<double>().matrix();
    case Activation::LeakyRelu:
      return (out.array() > 0.0).select(1.0, Tensor::Constant(out.rows(), out.cols(), kLeakySlope));
    case Activation::Tanh: return (1.0 - out.array().square()).matrix();
    case Activation::Sigmoid: return (out.array() * (1.0 - out.array())).matrix();
  }
  return Tensor::Ones(out.rows(), out.cols());
}

void add_into(Tensor& dst, const Tensor& src) {
  if (dst.size() == 0) {
    dst = src;
  } else {
    dst += src;
  }
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "linear";
}

Activation activation_from_string(const std::string& name) {
  for (auto a : {Activation::Linear, Activation::Relu, Activation::LeakyRelu, Activation::Tanh,
                 Activation::Sigmoid}) {
    if (name == to_string(a)) return a;
  }
  throw Error(ErrorCode::BadConfig, "unknown activation '" + name + "'");
}

Tensor apply_activation(const Tensor& pre, Activation a) {
  switch (a) {
    case Activation::Linear: return pre;
    case Activation::Relu: return pre.cwiseMax(0.0);
    case Activation::LeakyRelu: return (pre.array() > 0.0).select(pre, kLeakySlope * pre);
    case Activation::Tanh: return pre.array().tanh().matrix();
    case Activation::Sigmoid: return (1.0 / (1.0 + (-pre.array()).exp())).matrix();
  }
  return pre;
}

void Parameter::zero_grad() { grad.setZero(value.rows(), value.cols()); }

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Activation act) : activation(act) {
  weight.value.setZero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  bias.value.setZero(1, static_cast<Eigen::Index>(out));
  weight.zero_grad();
  bias.zero_grad();
}

Tensor DenseLayer::forward(const Tensor& x) const {
  if (static_cast<std::size_t>(x.cols()) != in_dim()) {
    throw Error(ErrorCode::ShapeMismatch,
                "dense input " + shape_of(x) + " for layer in=" + std::to_string(in_dim()));
  }
  Tensor pre = x * weight.value.transpose();
  pre.rowwise() += bias.value.row(0);
  return apply_activation(pre, activation);
}

void DenseLayer::init_glorot(std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim() + out_dim()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = dist(rng);
  bias.value.setZero();
}

void DenseLayer::set_zero() {
  weight.value.setZero();
  bias.value.setZero();
}

Mlp::Mlp(std::span<const std::size_t> widths, Activation hidden, Activation output) {
  if (widths.size() < 2) throw Error(ErrorCode::BadConfig, "mlp needs at least two widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers_.emplace_back(widths[i], widths[i + 1], last ? output : hidden);
  }
}

Tensor Mlp::forward(const Tensor& x) const { return forward_prefix(x, layers_.size()); }

Tensor Mlp::forward_prefix(const Tensor& x, std::size_t n_layers) const {
  Tensor h = x;
  for (std::size_t i = 0; i < std::min(n_layers, layers_.size()); ++i) h = layers_[i].forward(h);
  return h;
}

void Mlp::init_glorot(std::mt19937_64& rng) {
  for (auto& layer : layers_) layer.init_glorot(rng);
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) {
    n += static_cast<std::size_t>(layer.weight.value.size() + layer.bias.value.size());
  }
  return n;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, std::size_t)> backward) {
  nodes_.push_back(Node{std::move(value), Tensor(), needs_grad, std::move(backward)});
  return Var{this, nodes_.size() - 1};
}

void Tape::check(Var v) const {
  if (v.owner != this || v.id >= nodes_.size()) {
    throw Error(ErrorCode::DetachedLoss, "value was not recorded on this tape");
  }
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  if (nodes_[id].needs_grad) add_into(nodes_[id].grad, g);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::variable(Tensor value) { return push(std::move(value), true, nullptr); }

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

Tensor Tape::grad(Var v) const {
  check(v);
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Tensor::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::dense(Var x, DenseLayer& layer, bool train_params) {
  check(x);
  Tensor out = layer.forward(nodes_[x.id].value);
  const std::size_t xid = x.id;
  DenseLayer* lp = &layer;
  return push(std::move(out), needs(x) || train_params,
              [xid, lp, train_params](Tape& t, std::size_t self) {
                const Node& n = t.nodes_[self];
                Tensor gp = n.grad.cwiseProduct(activation_slope(n.value, lp->activation));
                if (train_params) {
                  const Tensor& xin = t.nodes_[xid].value;
                  if (lp->weight.grad.size() != lp->weight.value.size()) lp->weight.zero_grad();
                  if (lp->bias.grad.size() != lp->bias.value.size()) lp->bias.zero_grad();
                  lp->weight.grad.noalias() += gp.transpose() * xin;
                  lp->bias.grad += gp.colwise().sum();
                }
                if (t.nodes_[xid].needs_grad) t.accumulate(xid, gp * lp->weight.value);
              });
}

Var Tape::mlp(Var x, Mlp& net, bool train_params, std::size_t n_layers) {
  Var h = x;
  auto& layers = net.layers();
  for (std::size_t i = 0; i < std::min(n_layers, layers.size()); ++i) {
    h = dense(h, layers[i], train_params);
  }
  return h;
}

Var Tape::activate(Var x, Activation a) {
  check(x);
  Tensor out = apply_activation(nodes_[x.id].value, a);
  const std::size_t xid = x.id;
  return push(std::move(out), needs(x), [xid, a](Tape& t, std::size_t self) {
    const Node& n = t.nodes_[self];
    t.accumulate(xid, n.grad.cwiseProduct(activation_slope(n.value, a)));
  });
}

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  require_same_shape(nodes_[a.id].value, nodes_[b.id].value, "add");
  const std::size_t ai = a.id, bi = b.id;
  return push(nodes_[a.id].value + nodes_[b.id].value, needs(a) || needs(b),
              [ai, bi](Tape& t, std::size_t self) {
                const Tensor g = t.nodes_[self].grad;
                t.accumulate(ai, g);
                t.accumulate(bi, g);
              });
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  require_same_shape(nodes_[a.id].value, nodes_[b.id].value, "sub");
  const std::size_t ai = a.id, bi = b.id;
  return push(nodes_[a.id].value - nodes_[b.id].value, needs(a) || needs(b),
              [ai, bi](Tape& t, std::size_t self) {
                const Tensor g = t.nodes_[self].grad;
                t.accumulate(ai, g);
                t.accumulate(bi, -g);
              });
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  require_same_shape(nodes_[a.id].value, nodes_[b.id].value, "mul");
  const std::size_t ai = a.id, bi = b.id;
  return push(nodes_[a.id].value.cwiseProduct(nodes_[b.id].value), needs(a) || needs(b),
              [ai, bi](Tape& t, std::size_t self) {
                const Tensor g = t.nodes_[self].grad;
                if (t.nodes_[ai].needs_grad) t.accumulate(ai, g.cwiseProduct(t.nodes_[bi].value));
                if (t.nodes_[bi].needs_grad) t.accumulate(bi, g.cwiseProduct(t.nodes_[ai].value));
              });
}

Var Tape::scale(Var a, double k) {
  check(a);
  const std::size_t ai = a.id;
  return push(nodes_[a.id].value * k, needs(a), [ai, k](Tape& t, std::size_t self) {
    t.accumulate(ai, t.nodes_[self].grad * k);
  });
}

Var Tape::add_scalar(Var a, double k) {
  check(a);
  const std::size_t ai = a.id;
  return push(nodes_[a.id].value.array() + k, needs(a), [ai](Tape& t, std::size_t self) {
    t.accumulate(ai, t.nodes_[self].grad);
  });
}

Var Tape::affine(Var a, const Eigen::RowVectorXd& shift, const Eigen::MatrixXd& m) {
  check(a);
  const Tensor& x = nodes_[a.id].value;
  if (x.cols() != shift.cols() || x.cols() != m.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "affine: input width does not match the transform");
  }
  const std::size_t ai = a.id;
  Tensor y = (x.rowwise() - shift) * m;
  return push(std::move(y), needs(a), [ai, m](Tape& t, std::size_t self) {
    t.accumulate(ai, t.nodes_[self].grad * m.transpose());
  });
}

Var Tape::exp(Var a) {
  check(a);
  const std::size_t ai = a.id;
  return push(nodes_[a.id].value.array().exp().matrix(), needs(a),
              [ai](Tape& t, std::size_t self) {
                const Node& n = t.nodes_[self];
                t.accumulate(ai, n.grad.cwiseProduct(n.value));
              });
}

Var Tape::tanh(Var a) { return activate(a, Activation::Tanh); }

Var Tape::square(Var a) {
  check(a);
  const std::size_t ai = a.id;
  return push(nodes_[a.id].value.array().square().matrix(), needs(a),
              [ai](Tape& t, std::size_t self) {
                t.accumulate(ai, 2.0 * t.nodes_[self].grad.cwiseProduct(t.nodes_[ai].value));
              });
}

Var Tape::gather_cols(Var a, const std::vector<int>& cols) {
  check(a);
  const Tensor& src = nodes_[a.id].value;
  Tensor out(src.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= src.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "gather_cols index out of range");
    }
    out.col(static_cast<Eigen::Index>(j)) = src.col(cols[j]);
  }
  const std::size_t ai = a.id;
  return push(std::move(out), needs(a), [ai, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.nodes_[self].grad;
    Tensor full = Tensor::Zero(t.nodes_[ai].value.rows(), t.nodes_[ai].value.cols());
    for (std::size_t j = 0; j < cols.size(); ++j) {
      full.col(cols[j]) += g.col(static_cast<Eigen::Index>(j));
    }
    t.accumulate(ai, full);
  });
}

Var Tape::merge_cols(Var a, const std::vector<int>& a_cols, Var b, const std::vector<int>& b_cols,
                     int width) {
  check(a);
  check(b);
  const Tensor& av = nodes_[a.id].value;
  const Tensor& bv = nodes_[b.id].value;
  if (av.cols() != static_cast<Eigen::Index>(a_cols.size()) ||
      bv.cols() != static_cast<Eigen::Index>(b_cols.size()) || av.rows() != bv.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "merge_cols operand shapes");
  }
  Tensor out = Tensor::Zero(av.rows(), width);
  for (std::size_t j = 0; j < a_cols.size(); ++j) out.col(a_cols[j]) = av.col(static_cast<Eigen::Index>(j));
  for (std::size_t j = 0; j < b_cols.size(); ++j) out.col(b_cols[j]) = bv.col(static_cast<Eigen::Index>(j));
  const std::size_t ai = a.id, bi = b.id;
  return push(std::move(out), needs(a) || needs(b),
              [ai, bi, a_cols, b_cols](Tape& t, std::size_t self) {
                const Tensor& g = t.nodes_[self].grad;
                if (t.nodes_[ai].needs_grad) {
                  Tensor ga(g.rows(), static_cast<Eigen::Index>(a_cols.size()));
                  for (std::size_t j = 0; j < a_cols.size(); ++j) ga.col(static_cast<Eigen::Index>(j)) = g.col(a_cols[j]);
                  t.accumulate(ai, ga);
                }
                if (t.nodes_[bi].needs_grad) {
                  Tensor gb(g.rows(), static_cast<Eigen::Index>(b_cols.size()));
                  for (std::size_t j = 0; j < b_cols.size(); ++j) gb.col(static_cast<Eigen::Index>(j)) = g.col(b_cols[j]);
                  t.accumulate(bi, gb);
                }
              });
}

Var Tape::row_sum(Var a) {
  check(a);
  const std::size_t ai = a.id;
  Tensor out = nodes_[a.id].value.rowwise().sum();
  return push(std::move(out), needs(a), [ai](Tape& t, std::size_t self) {
    const Tensor& g = t.nodes_[self].grad;
    const Eigen::Index cols = t.nodes_[ai].value.cols();
    t.accumulate(ai, g.replicate(1, cols));
  });
}

Var Tape::sum(Var a) {
  check(a);
  const std::size_t ai = a.id;
  Tensor out(1, 1);
  out(0, 0) = nodes_[a.id].value.sum();
  return push(std::move(out), needs(a), [ai](Tape& t, std::size_t self) {
    const Tensor& v = t.nodes_[ai].value;
    t.accumulate(ai, Tensor::Constant(v.rows(), v.cols(), t.nodes_[self].grad(0, 0)));
  });
}

Var Tape::mean(Var a) {
  check(a);
  const double n = static_cast<double>(nodes_[a.id].value.size());
  return scale(sum(a), 1.0 / n);
}

Var Tape::mse(Var a, Var b) {
  check(a);
  check(b);
  require_same_shape(nodes_[a.id].value, nodes_[b.id].value, "mse");
  return mean(square(sub(a, b)));
}

Var Tape::bce(Var pred, const Tensor& target) {
  check(pred);
  const Tensor& p = nodes_[pred.id].value;
  require_same_shape(p, target, "bce");
  Tensor out(1, 1);
  out(0, 0) = nn::bce(p, target);
  const std::size_t pi = pred.id;
  return push(std::move(out), needs(pred), [pi, target](Tape& t, std::size_t self) {
    const Tensor& pv = t.nodes_[pi].value;
    const double n = static_cast<double>(pv.size());
    const double g = t.nodes_[self].grad(0, 0);
    Tensor gp(pv.rows(), pv.cols());
    for (Eigen::Index i = 0; i < pv.size(); ++i) {
      const double raw = pv.data()[i];
      if (raw < kBceClamp || raw > 1.0 - kBceClamp) {
        gp.data()[i] = 0.0;
        continue;
      }
      const double y = target.data()[i];
      gp.data()[i] = g * (-(y / raw) + (1.0 - y) / (1.0 - raw)) / n;
    }
    t.accumulate(pi, gp);
  });
}

void Tape::backward(Var loss) {
  check(loss);
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "loss must be scalar, got " + shape_of(lv));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id].grad = Tensor::Ones(1, 1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------

double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  if (a.size() == 0) return 0.0;
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

double bce(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "bce");
  if (pred.size() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred.data()[i], kBceClamp, 1.0 - kBceClamp);
    const double y = target.data()[i];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return total / static_cast<double>(pred.size());
}

void adam_step(AdamState& state, std::span<Parameter* const> params) {
  if (!(state.lr > 0.0) || state.beta1 < 0.0 || state.beta1 >= 1.0 || state.beta2 < 0.0 ||
      state.beta2 >= 1.0) {
    throw Error(ErrorCode::BadConfig, "adam hyperparameters out of range");
  }
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.m.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam state tracks a different parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (p.grad.size() != 0) require_same_shape(p.value, p.grad, "adam grad");
    require_same_shape(p.value, state.m[i], "adam moment");
  }

  const long t = state.step_count + 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.grad.size() == 0) continue;
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * p.grad;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= state.lr * (state.m[i].array() / c1) /
                       ((state.v[i].array() / c2).sqrt() + state.eps);
  }
  state.step_count = t;
}

}  // namespace flowgate::nn
