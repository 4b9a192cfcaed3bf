#include "flowgate/extractor.hpp"

#include <algorithm>

#include "flowgate/dataset.hpp"
#include "flowgate/error.hpp"
#include "flowgate/rng.hpp"

namespace flowgate::extractor {

namespace {

constexpr Eigen::Index kEvalChunk = 512;

std::vector<nn::Parameter*> concat(std::vector<nn::Parameter*> a, const std::vector<nn::Parameter*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::vector<std::size_t> ExtractorConfig::encoder_widths() const {
  std::vector<std::size_t> w{input_dim};
  w.insert(w.end(), encoder_hidden.begin(), encoder_hidden.end());
  w.push_back(latent_dim);
  return w;
}

std::vector<std::size_t> ExtractorConfig::decoder_widths() const {
  auto w = encoder_widths();
  std::reverse(w.begin(), w.end());
  return w;
}

std::vector<std::size_t> ExtractorConfig::disc_widths() const {
  std::vector<std::size_t> w{input_dim};
  w.insert(w.end(), disc_hidden.begin(), disc_hidden.end());
  w.push_back(1);
  return w;
}

KeyValues ExtractorConfig::to_kv() const {
  KeyValues kv;
  kv.set("input_dim", input_dim);
  kv.set("latent_dim", latent_dim);
  kv.set("w_adv", w_adv);
  kv.set("w_rec", w_rec);
  kv.set("encoder_hidden", encoder_hidden);
  kv.set("disc_hidden", disc_hidden);
  optim.to_kv(kv);
  return kv;
}

ExtractorConfig ExtractorConfig::from_kv(const KeyValues& kv) {
  ExtractorConfig c;
  c.input_dim = kv.get("input_dim", c.input_dim);
  c.latent_dim = kv.get("latent_dim", c.latent_dim);
  c.w_adv = kv.get("w_adv", c.w_adv);
  c.w_rec = kv.get("w_rec", c.w_rec);
  c.encoder_hidden = kv.get("encoder_hidden", c.encoder_hidden);
  c.disc_hidden = kv.get("disc_hidden", c.disc_hidden);
  c.optim = OptimConfig::from_kv(kv);
  c.validate();
  return c;
}

void ExtractorConfig::validate() const {
  if (input_dim == 0 || latent_dim == 0 || w_adv < 0.0 || w_rec < 0.0 || disc_hidden.empty()) {
    throw Error(ErrorCode::BadConfig, "extractor config out of range");
  }
  optim.validate();
}

double generator_objective(const nn::Tensor& x, const nn::Tensor& x_hat, const nn::Tensor& phi_x,
                           const nn::Tensor& phi_x_hat, double w_adv, double w_rec) {
  return w_adv * nn::mse(phi_x, phi_x_hat) + w_rec * nn::mse(x, x_hat);
}

double discriminator_objective(const nn::Tensor& d_real, const nn::Tensor& d_fake) {
  return (1.0 - d_real.mean()) + d_fake.mean();
}

FeatureExtractor::FeatureExtractor(ExtractorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto enc = cfg_.encoder_widths();
  const auto dec = cfg_.decoder_widths();
  const auto dis = cfg_.disc_widths();
  encoder_ = nn::Mlp(enc, nn::Activation::Relu, nn::Activation::Linear);
  decoder_ = nn::Mlp(dec, nn::Activation::Relu, nn::Activation::Sigmoid);
  disc_ = nn::Mlp(dis, nn::Activation::LeakyRelu, nn::Activation::Sigmoid);
}

void FeatureExtractor::init(std::uint64_t seed) {
  Rng rng(seed);
  encoder_.init_glorot(rng);
  decoder_.init_glorot(rng);
  disc_.init_glorot(rng);
}

nn::Tensor FeatureExtractor::encode(const nn::Tensor& x) const { return encoder_.forward(x); }

nn::Tensor FeatureExtractor::reconstruct(const nn::Tensor& x) const {
  return decoder_.forward(encoder_.forward(x));
}

nn::Tensor FeatureExtractor::discriminate(const nn::Tensor& x) const { return disc_.forward(x); }

nn::Tensor FeatureExtractor::features(const nn::Tensor& x) const {
  return disc_.forward_prefix(x, disc_.layers().size() - 1);
}

double FeatureExtractor::generator_loss(const nn::Tensor& x) const {
  const nn::Tensor x_hat = reconstruct(x);
  return generator_objective(x, x_hat, features(x), features(x_hat), cfg_.w_adv, cfg_.w_rec);
}

double FeatureExtractor::discriminator_loss(const nn::Tensor& x) const {
  return discriminator_objective(discriminate(x), discriminate(reconstruct(x)));
}

nn::Var FeatureExtractor::generator_loss(nn::Tape& tape, nn::Var x) {
  const std::size_t tap = disc_.layers().size() - 1;
  const nn::Var z = tape.mlp(x, encoder_);
  const nn::Var x_hat = tape.mlp(z, decoder_);
  const nn::Var phi_x = tape.mlp(x, disc_, false, tap);
  const nn::Var phi_hat = tape.mlp(x_hat, disc_, false, tap);
  const nn::Var adv = tape.scale(tape.mse(phi_x, phi_hat), cfg_.w_adv);
  const nn::Var rec = tape.scale(tape.mse(x, x_hat), cfg_.w_rec);
  return tape.add(adv, rec);
}

nn::Var FeatureExtractor::discriminator_loss(nn::Tape& tape, nn::Var x) {
  const nn::Var fake = tape.constant(reconstruct(tape.value(x)));
  const nn::Var d_real = tape.mlp(x, disc_);
  const nn::Var d_fake = tape.mlp(fake, disc_);
  return tape.add(tape.add_scalar(tape.scale(tape.mean(d_real), -1.0), 1.0), tape.mean(d_fake));
}

std::vector<nn::Parameter*> FeatureExtractor::generator_parameters() {
  return concat(encoder_.parameters(), decoder_.parameters());
}

std::vector<nn::Parameter*> FeatureExtractor::discriminator_parameters() { return disc_.parameters(); }

std::size_t FeatureExtractor::parameter_count() const {
  return encoder_.parameter_count() + decoder_.parameter_count() + disc_.parameter_count();
}

checkpoint::Checkpoint FeatureExtractor::to_checkpoint(std::uint64_t seed,
                                                       const std::string& metadata) const {
  checkpoint::Checkpoint c;
  c.stage = checkpoint::Stage::Extractor;
  c.config = cfg_.to_kv();
  c.fingerprint = checkpoint::fingerprint(c.config);
  c.seed = seed;
  c.metadata = metadata;
  c.tables.push_back(checkpoint::table_from_mlp("encoder", encoder_));
  c.tables.push_back(checkpoint::table_from_mlp("decoder", decoder_));
  c.tables.push_back(checkpoint::table_from_mlp("discriminator", disc_));
  return c;
}

FeatureExtractor FeatureExtractor::from_checkpoint(const checkpoint::Checkpoint& ckpt) {
  if (ckpt.stage != checkpoint::Stage::Extractor) {
    throw Error(ErrorCode::CheckpointMismatch, "not an extractor checkpoint");
  }
  FeatureExtractor fx(ExtractorConfig::from_kv(ckpt.config));
  checkpoint::load_mlp(ckpt.table("encoder"), fx.encoder_);
  checkpoint::load_mlp(ckpt.table("decoder"), fx.decoder_);
  checkpoint::load_mlp(ckpt.table("discriminator"), fx.disc_);
  return fx;
}

Encoder::Encoder(const ExtractorConfig& cfg) {
  const auto widths = cfg.encoder_widths();
  net_ = nn::Mlp(widths, nn::Activation::Relu, nn::Activation::Linear);
}

Encoder Encoder::from_table(const ExtractorConfig& cfg, const checkpoint::ParamTable& table) {
  Encoder e(cfg);
  checkpoint::load_mlp(table, e.net_);
  return e;
}

Encoder Encoder::load(const std::filesystem::path& path, checkpoint::LoadTrace* trace) {
  checkpoint::LoadOptions opts;
  opts.expected_stage = checkpoint::Stage::Extractor;
  opts.only_tables = std::set<std::string>{"encoder"};
  opts.trace = trace;
  const auto ckpt = checkpoint::load(path, opts);
  return from_table(ExtractorConfig::from_kv(ckpt.config), ckpt.table("encoder"));
}

nn::Tensor encode_all(const nn::Tensor& data, const nn::Mlp& encoder) {
  nn::Tensor out(data.rows(), static_cast<Eigen::Index>(encoder.out_dim()));
  for (Eigen::Index start = 0; start < data.rows(); start += kEvalChunk) {
    const Eigen::Index n = std::min(kEvalChunk, data.rows() - start);
    out.middleRows(start, n) = encoder.forward(data.middleRows(start, n));
  }
  return out;
}

namespace {

double chunked_generator_loss(const FeatureExtractor& fx, const nn::Tensor& data) {
  if (data.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index start = 0; start < data.rows(); start += kEvalChunk) {
    const Eigen::Index n = std::min(kEvalChunk, data.rows() - start);
    total += fx.generator_loss(data.middleRows(start, n)) * static_cast<double>(n);
  }
  return total / static_cast<double>(data.rows());
}

}  // namespace

TrainedExtractor train_extractor(std::span<const packet::EncodedPacket> dataset,
                                 const ExtractorConfig& cfg, std::uint64_t seed,
                                 const ProgressFn& progress) {
  dataset::require_normal_only(dataset, "train_extractor");
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "extractor training set is empty");
  return train_extractor(dataset::to_matrix(dataset), cfg, seed, progress);
}

TrainedExtractor train_extractor(const nn::Tensor& data, const ExtractorConfig& cfg,
                                 std::uint64_t seed, const ProgressFn& progress) {
  if (data.rows() == 0) throw Error(ErrorCode::EmptyDataset, "extractor training set is empty");
  if (static_cast<std::size_t>(data.cols()) != cfg.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "training data width does not match input_dim");
  }
  Rng rng(seed);
  TrainedExtractor out{FeatureExtractor(cfg), {}};
  FeatureExtractor& fx = out.model;
  fx.init(derive_seed(seed, "init"));

  const Split split = holdout_split(static_cast<std::size_t>(data.rows()), cfg.optim.holdout, rng);
  const nn::Tensor holdout = gather_rows(data, split.holdout);
  const nn::Tensor& monitor = split.holdout.empty() ? data : holdout;

  auto gen_params = fx.generator_parameters();
  auto disc_params = fx.discriminator_parameters();
  nn::AdamState gen_opt = cfg.optim.adam();
  nn::AdamState disc_opt = cfg.optim.adam();

  out.history.initial_holdout = chunked_generator_loss(fx, monitor);
  FeatureExtractor best = fx;
  EarlyStopping stopper(cfg.optim.patience);
  std::vector<std::size_t> order = split.train;

  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.optim.batch_size) {
      const std::size_t n = std::min(cfg.optim.batch_size, order.size() - start);
      const nn::Tensor batch = gather_rows(data, std::span(order).subspan(start, n));

      for (auto* p : disc_params) p->zero_grad();
      {
        nn::Tape tape;
        const nn::Var loss = fx.discriminator_loss(tape, tape.constant(batch));
        tape.backward(loss);
      }
      nn::adam_step(disc_opt, disc_params);

      for (auto* p : gen_params) p->zero_grad();
      {
        nn::Tape tape;
        const nn::Var loss = fx.generator_loss(tape, tape.constant(batch));
        tape.backward(loss);
        train_total += tape.value(loss)(0, 0) * static_cast<double>(n);
      }
      nn::adam_step(gen_opt, gen_params);
    }

    EpochRecord rec{epoch, train_total / static_cast<double>(std::max<std::size_t>(order.size(), 1)),
                    chunked_generator_loss(fx, monitor)};
    out.history.epochs.push_back(rec);
    if (progress) progress(rec);
    if (stopper.update(rec.holdout_loss)) {
      best = fx;
      out.history.best_epoch = epoch;
      out.history.best_holdout = rec.holdout_loss;
    }
    if (stopper.should_stop()) break;
  }
  if (out.history.best_epoch >= 0) out.model = std::move(best);
  return out;
}

}  // namespace flowgate::extractor
