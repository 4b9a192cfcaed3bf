#include "flowgate/classifier.hpp"

#include <algorithm>
#include <optional>

#include "flowgate/error.hpp"
#include "flowgate/rng.hpp"

namespace flowgate::classifier {

namespace {

void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::BadThreshold, "threshold must lie in (0, 1)");
  }
}

}  // namespace

KeyValues ClassifierConfig::to_kv() const {
  KeyValues kv;
  kv.set("input_dim", input_dim);
  kv.set("hidden", hidden);
  kv.set("whiten", whiten);
  optim.to_kv(kv);
  return kv;
}

ClassifierConfig ClassifierConfig::from_kv(const KeyValues& kv) {
  ClassifierConfig c;
  c.input_dim = kv.get("input_dim", c.input_dim);
  c.hidden = kv.get("hidden", c.hidden);
  c.whiten = kv.get("whiten", c.whiten);
  c.optim = OptimConfig::from_kv(kv);
  c.validate();
  return c;
}

void ClassifierConfig::validate() const {
  if (input_dim == 0) throw Error(ErrorCode::BadConfig, "classifier input_dim must be positive");
  optim.validate();
}

ClassifierModel::ClassifierModel(ClassifierConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::vector<std::size_t> widths{cfg_.input_dim};
  widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  widths.push_back(1);
  net_ = nn::Mlp(widths, nn::Activation::Relu, nn::Activation::Sigmoid);
}

void ClassifierModel::init(std::uint64_t seed) {
  Rng rng(seed);
  net_.init_glorot(rng);
}

Eigen::VectorXd ClassifierModel::score(const nn::Tensor& z) const {
  if (static_cast<std::size_t>(z.cols()) != cfg_.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "classifier expects " + std::to_string(cfg_.input_dim) +
                                              " columns, got " + std::to_string(z.cols()));
  }
  return net_.forward(z).col(0);
}

double ClassifierModel::score_one(std::span<const double> z) const {
  nn::Tensor row = Eigen::Map<const Eigen::RowVectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
  return score(row)(0);
}

packet::Label ClassifierModel::predict(std::span<const double> z, double threshold) const {
  check_threshold(threshold);
  return score_one(z) >= threshold ? packet::Label::Anomaly : packet::Label::Normal;
}

std::vector<packet::Label> ClassifierModel::predict(const nn::Tensor& z, double threshold) const {
  check_threshold(threshold);
  const Eigen::VectorXd s = score(z);
  std::vector<packet::Label> out;
  out.reserve(static_cast<std::size_t>(s.size()));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    out.push_back(s(i) >= threshold ? packet::Label::Anomaly : packet::Label::Normal);
  }
  return out;
}

checkpoint::Checkpoint ClassifierModel::to_checkpoint(std::uint64_t seed,
                                                      const std::string& metadata) const {
  checkpoint::Checkpoint c;
  c.stage = checkpoint::Stage::Classifier;
  c.config = cfg_.to_kv();
  c.fingerprint = checkpoint::fingerprint(c.config);
  c.seed = seed;
  c.metadata = metadata;
  c.tables.push_back(checkpoint::table_from_mlp("classifier", net_));
  return c;
}

ClassifierModel ClassifierModel::from_checkpoint(const checkpoint::Checkpoint& ckpt) {
  if (ckpt.stage != checkpoint::Stage::Classifier) {
    throw Error(ErrorCode::CheckpointMismatch, "not a classifier checkpoint");
  }
  ClassifierModel m(ClassifierConfig::from_kv(ckpt.config));
  checkpoint::load_mlp(ckpt.table("classifier"), m.net_);
  return m;
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& path, checkpoint::LoadTrace* trace) {
  checkpoint::LoadOptions opts;
  opts.expected_stage = checkpoint::Stage::Classifier;
  opts.only_tables = std::set<std::string>{"classifier"};
  opts.trace = trace;
  return from_checkpoint(checkpoint::load(path, opts));
}

void fold_whitening(const Whitening& w, nn::DenseLayer& layer) {
  // u W^T + b with u = (z - m) P  ==  z (W P^T)^T + (b - m P W^T).
  const nn::Tensor folded = layer.weight.value * w.transform.transpose();
  layer.bias.value -= w.mean * folded.transpose();
  layer.weight.value = folded;
}

TrainedClassifier train_classifier(const nn::Tensor& normals, const nn::Tensor& pseudo,
                                   const ClassifierConfig& cfg, std::uint64_t seed,
                                   const ProgressFn& progress) {
  if (normals.rows() == 0 || pseudo.rows() == 0) {
    throw Error(ErrorCode::EmptyClass, "classifier needs both normal and pseudo-anomaly samples");
  }
  if (normals.cols() != pseudo.cols() || static_cast<std::size_t>(normals.cols()) != cfg.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "latent widths do not match classifier input_dim");
  }
  std::optional<Whitening> whitening;
  if (cfg.whiten) whitening = fit_whitening(normals, NullPolicy::Drop);
  nn::Tensor all(normals.rows() + pseudo.rows(), normals.cols());
  all << normals, pseudo;
  if (whitening) all = whitening->apply(all);
  nn::Tensor labels(all.rows(), 1);
  labels.topRows(normals.rows()).setZero();
  labels.bottomRows(pseudo.rows()).setOnes();

  Rng rng(seed);
  TrainedClassifier out{ClassifierModel(cfg), {}};
  ClassifierModel& model = out.model;
  model.init(derive_seed(seed, "init"));

  const Split split = holdout_split(static_cast<std::size_t>(all.rows()), cfg.optim.holdout, rng);
  const std::vector<std::size_t>& monitor_rows = split.holdout.empty() ? split.train : split.holdout;
  const nn::Tensor monitor_x = gather_rows(all, monitor_rows);
  const nn::Tensor monitor_y = gather_rows(labels, monitor_rows);
  auto monitor_loss = [&] { return nn::bce(model.net().forward(monitor_x), monitor_y); };

  auto params = model.net().parameters();
  nn::AdamState opt = cfg.optim.adam();
  out.history.initial_holdout = monitor_loss();
  ClassifierModel best = model;
  EarlyStopping stopper(cfg.optim.patience);
  std::vector<std::size_t> order = split.train;

  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.optim.batch_size) {
      const std::size_t n = std::min(cfg.optim.batch_size, order.size() - start);
      const auto rows = std::span(order).subspan(start, n);
      for (auto* p : params) p->zero_grad();
      nn::Tape tape;
      const nn::Var pred = tape.mlp(tape.constant(gather_rows(all, rows)), model.net());
      const nn::Var loss = tape.bce(pred, gather_rows(labels, rows));
      tape.backward(loss);
      train_total += tape.value(loss)(0, 0) * static_cast<double>(n);
      nn::adam_step(opt, params);
    }
    EpochRecord rec{epoch, train_total / static_cast<double>(std::max<std::size_t>(order.size(), 1)),
                    monitor_loss()};
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
  if (whitening) fold_whitening(*whitening, out.model.net().layers().front());
  return out;
}

}  // namespace flowgate::classifier
