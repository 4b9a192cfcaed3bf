#include "flowgate/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flowgate/error.hpp"
#include "flowgate/rng.hpp"

namespace flowgate::flow {

namespace {

nn::Tensor columns(const nn::Tensor& m, const std::vector<int>& cols) {
  nn::Tensor out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(cols[j]);
  return out;
}

void set_columns(nn::Tensor& m, const std::vector<int>& cols, const nn::Tensor& src) {
  for (std::size_t j = 0; j < cols.size(); ++j) m.col(cols[j]) = src.col(static_cast<Eigen::Index>(j));
}

void require_finite(const nn::Tensor& m, ErrorCode code, const char* what) {
  if (!m.allFinite()) throw Error(code, what);
}

void require_input(const nn::Tensor& m, std::size_t dim) {
  if (static_cast<std::size_t>(m.cols()) != dim) {
    throw Error(ErrorCode::ShapeMismatch, "flow input has " + std::to_string(m.cols()) +
                                              " columns, expected " + std::to_string(dim));
  }
  require_finite(m, ErrorCode::NonFiniteInput, "flow input contains NaN or infinity");
}

}  // namespace

KeyValues FlowConfig::to_kv() const {
  KeyValues kv;
  kv.set("dim", dim);
  kv.set("blocks", blocks);
  kv.set("hidden", hidden);
  kv.set("hidden_activation", nn::to_string(hidden_activation));
  kv.set("clamp", clamp);
  kv.set("whiten", whiten);
  optim.to_kv(kv);
  return kv;
}

FlowConfig FlowConfig::from_kv(const KeyValues& kv) {
  FlowConfig c;
  c.dim = kv.get("dim", c.dim);
  c.blocks = kv.get("blocks", c.blocks);
  c.hidden = kv.get("hidden", c.hidden);
  c.hidden_activation = nn::activation_from_string(kv.get("hidden_activation", nn::to_string(c.hidden_activation)));
  c.clamp = kv.get("clamp", c.clamp);
  c.whiten = kv.get("whiten", c.whiten);
  c.optim = OptimConfig::from_kv(kv);
  c.validate();
  return c;
}

void FlowConfig::validate() const {
  if (dim < 2 || blocks == 0 || !(clamp > 0.0)) {
    throw Error(ErrorCode::BadConfig, "flow config out of range");
  }
  optim.validate();
}

std::vector<std::uint8_t> CouplingBlock::mask(std::size_t dim) const {
  std::vector<std::uint8_t> m(dim, 0);
  for (int i : pass) m[static_cast<std::size_t>(i)] = 1;
  return m;
}

nn::Tensor CouplingBlock::scale(const nn::Tensor& a) const {
  return (clamp * s_net.forward(a).array().tanh()).matrix();
}

FlowModel::FlowModel(FlowConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  input_ = Whitening::identity(cfg_.dim);
  for (std::size_t k = 0; k < cfg_.blocks; ++k) {
    CouplingBlock b;
    b.clamp = cfg_.clamp;
    // Parity masks: even blocks pass the even coordinates through.
    for (std::size_t i = 0; i < cfg_.dim; ++i) {
      ((i % 2 == k % 2) ? b.pass : b.active).push_back(static_cast<int>(i));
    }
    std::vector<std::size_t> widths{b.pass.size()};
    widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    widths.push_back(b.active.size());
    b.s_net = nn::Mlp(widths, cfg_.hidden_activation, nn::Activation::Linear);
    b.t_net = nn::Mlp(widths, cfg_.hidden_activation, nn::Activation::Linear);
    blocks_.push_back(std::move(b));
  }
}

void FlowModel::init(std::uint64_t seed, bool zero_final) {
  Rng rng(seed);
  for (auto& b : blocks_) {
    b.s_net.init_glorot(rng);
    b.t_net.init_glorot(rng);
    if (zero_final) {
      b.s_net.layers().back().set_zero();
      b.t_net.layers().back().set_zero();
    }
  }
}

void FlowModel::set_input_whitening(Whitening w) {
  const auto d = static_cast<Eigen::Index>(cfg_.dim);
  if (w.mean.cols() != d || w.transform.rows() != d || w.transform.cols() != d || w.inverse.rows() != d ||
      w.inverse.cols() != d) {
    throw Error(ErrorCode::ShapeMismatch, "input whitening does not match the flow width");
  }
  input_ = std::move(w);
}

Normalized FlowModel::normalize(const nn::Tensor& z) const {
  require_input(z, cfg_.dim);
  Normalized out{input_.apply(z), Eigen::VectorXd::Constant(z.rows(), input_.log_det)};
  for (const auto& b : blocks_) {
    const nn::Tensor a = columns(out.c, b.pass);
    const nn::Tensor s = b.scale(a);
    const nn::Tensor moved =
        (columns(out.c, b.active).array() * s.array().exp()).matrix() + b.shift(a);
    set_columns(out.c, b.active, moved);
    out.log_det += s.rowwise().sum();
    require_finite(out.c, ErrorCode::NonFiniteIntermediate, "non-finite value inside the flow");
  }
  return out;
}

Normalized FlowModel::generate_with_log_det(const nn::Tensor& c) const {
  require_input(c, cfg_.dim);
  Normalized out{c, Eigen::VectorXd::Zero(c.rows())};
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    const auto& b = *it;
    const nn::Tensor a = columns(out.c, b.pass);
    const nn::Tensor s = b.scale(a);
    const nn::Tensor restored =
        ((columns(out.c, b.active) - b.shift(a)).array() * (-s.array()).exp()).matrix();
    set_columns(out.c, b.active, restored);
    out.log_det -= s.rowwise().sum();
    require_finite(out.c, ErrorCode::NonFiniteIntermediate, "non-finite value inside the flow");
  }
  out.c = input_.restore(out.c);
  out.log_det.array() -= input_.log_det;
  return out;
}

nn::Tensor FlowModel::generate(const nn::Tensor& c) const { return generate_with_log_det(c).c; }

Eigen::VectorXd standard_normal_log_density(const nn::Tensor& c) {
  const double norm = -0.5 * static_cast<double>(c.cols()) * std::log(2.0 * std::numbers::pi);
  return (norm - 0.5 * c.rowwise().squaredNorm().array()).matrix();
}

Eigen::VectorXd FlowModel::log_likelihood(const nn::Tensor& z) const {
  const Normalized n = normalize(z);
  return standard_normal_log_density(n.c) + n.log_det;
}

std::pair<nn::Var, nn::Var> FlowModel::normalize(nn::Tape& tape, nn::Var z) {
  require_input(tape.value(z), cfg_.dim);
  nn::Var h = tape.affine(z, input_.mean, input_.transform);
  nn::Var log_det{};
  bool have_log_det = false;
  const int width = static_cast<int>(cfg_.dim);
  for (auto& b : blocks_) {
    const nn::Var a = tape.gather_cols(h, b.pass);
    const nn::Var s = tape.scale(tape.tanh(tape.mlp(a, b.s_net)), b.clamp);
    const nn::Var t = tape.mlp(a, b.t_net);
    const nn::Var moved = tape.add(tape.mul(tape.gather_cols(h, b.active), tape.exp(s)), t);
    h = tape.merge_cols(a, b.pass, moved, b.active, width);
    const nn::Var block_log_det = tape.row_sum(s);
    log_det = have_log_det ? tape.add(log_det, block_log_det) : block_log_det;
    have_log_det = true;
  }
  return {h, tape.add_scalar(log_det, input_.log_det)};
}

nn::Var FlowModel::nll(nn::Tape& tape, nn::Var z) {
  auto [c, log_det] = normalize(tape, z);
  const double norm = 0.5 * static_cast<double>(cfg_.dim) * std::log(2.0 * std::numbers::pi);
  // mean over rows of |c|^2 / 2 - log_det, plus the constant.
  const nn::Var quad = tape.scale(tape.row_sum(tape.square(c)), 0.5);
  return tape.add_scalar(tape.mean(tape.sub(quad, log_det)), norm);
}

std::vector<nn::Parameter*> FlowModel::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& b : blocks_) {
    for (auto* p : b.s_net.parameters()) out.push_back(p);
    for (auto* p : b.t_net.parameters()) out.push_back(p);
  }
  return out;
}

std::size_t FlowModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.s_net.parameter_count() + b.t_net.parameter_count();
  return n;
}

checkpoint::Checkpoint FlowModel::to_checkpoint(std::uint64_t seed, const std::string& metadata) const {
  checkpoint::Checkpoint c;
  c.stage = checkpoint::Stage::Flow;
  c.config = cfg_.to_kv();
  c.fingerprint = checkpoint::fingerprint(c.config);
  c.seed = seed;
  c.metadata = metadata;
  checkpoint::ParamTable w{"whitening", {}};
  w.tensors.push_back({"mean", input_.mean});
  w.tensors.push_back({"transform", input_.transform});
  w.tensors.push_back({"inverse", input_.inverse});
  w.tensors.push_back({"log_det", nn::Tensor::Constant(1, 1, input_.log_det)});
  c.tables.push_back(std::move(w));
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const std::string prefix = "block" + std::to_string(k);
    c.tables.push_back(checkpoint::table_from_mlp(prefix + ".s", blocks_[k].s_net));
    c.tables.push_back(checkpoint::table_from_mlp(prefix + ".t", blocks_[k].t_net));
  }
  return c;
}

FlowModel FlowModel::from_checkpoint(const checkpoint::Checkpoint& ckpt) {
  if (ckpt.stage != checkpoint::Stage::Flow) {
    throw Error(ErrorCode::CheckpointMismatch, "not a flow checkpoint");
  }
  FlowModel m(FlowConfig::from_kv(ckpt.config));
  const auto& t = ckpt.table("whitening");
  auto tensor = [&](const std::string& name) -> const nn::Tensor& {
    for (const auto& nt : t.tensors) {
      if (nt.name == name) return nt.value;
    }
    throw Error(ErrorCode::BadCheckpoint, "whitening table lacks '" + name + "'");
  };
  const nn::Tensor& log_det = tensor("log_det");
  if (log_det.size() != 1) throw Error(ErrorCode::BadCheckpoint, "whitening log_det must be 1x1");
  m.set_input_whitening({tensor("mean"), tensor("transform"), tensor("inverse"), log_det(0, 0)});
  for (std::size_t k = 0; k < m.blocks_.size(); ++k) {
    const std::string prefix = "block" + std::to_string(k);
    checkpoint::load_mlp(ckpt.table(prefix + ".s"), m.blocks_[k].s_net);
    checkpoint::load_mlp(ckpt.table(prefix + ".t"), m.blocks_[k].t_net);
  }
  return m;
}

double mean_nll(const FlowModel& model, const nn::Tensor& z) {
  if (z.rows() == 0) return 0.0;
  return -model.log_likelihood(z).mean();
}

TrainedFlow train_flow(const nn::Tensor& latents, const FlowConfig& cfg, std::uint64_t seed,
                       const ProgressFn& progress) {
  if (latents.rows() == 0) throw Error(ErrorCode::EmptyDataset, "flow training set is empty");
  require_input(latents, cfg.dim);
  Rng rng(seed);
  TrainedFlow out{FlowModel(cfg), {}};
  FlowModel& model = out.model;
  model.init(derive_seed(seed, "init"));

  const Split split = holdout_split(static_cast<std::size_t>(latents.rows()), cfg.optim.holdout, rng);
  if (cfg.whiten) model.set_input_whitening(fit_whitening(gather_rows(latents, split.train), NullPolicy::Floor));
  const nn::Tensor holdout = gather_rows(latents, split.holdout);
  const nn::Tensor& monitor = split.holdout.empty() ? latents : holdout;

  auto params = model.parameters();
  nn::AdamState opt = cfg.optim.adam();
  out.history.initial_holdout = mean_nll(model, monitor);
  FlowModel best = model;
  EarlyStopping stopper(cfg.optim.patience);
  std::vector<std::size_t> order = split.train;

  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.optim.batch_size) {
      const std::size_t n = std::min(cfg.optim.batch_size, order.size() - start);
      for (auto* p : params) p->zero_grad();
      nn::Tape tape;
      const nn::Var loss =
          model.nll(tape, tape.constant(gather_rows(latents, std::span(order).subspan(start, n))));
      tape.backward(loss);
      train_total += tape.value(loss)(0, 0) * static_cast<double>(n);
      nn::adam_step(opt, params);
    }
    EpochRecord rec{epoch, train_total / static_cast<double>(std::max<std::size_t>(order.size(), 1)),
                    mean_nll(model, monitor)};
    out.history.epochs.push_back(rec);
    if (progress) progress(rec);
    if (stopper.update(rec.holdout_loss)) {
      best = model;
      out.history.best_epoch = epoch;
      out.history.best_holdout = rec.holdout_loss;
    }
    if (stopper.should_stop()) break;
  }
  if (out.history.best_epoch >= 0) out.model = std::move(best);
  return out;
}

}  // namespace flowgate::flow
