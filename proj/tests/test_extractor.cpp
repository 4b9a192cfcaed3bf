#include <doctest.h>

#include "flowgate/corpus.hpp"
#include "flowgate/dataset.hpp"
#include "flowgate/error.hpp"
#include "flowgate/extractor.hpp"
#include "support.hpp"

using namespace flowgate;
using namespace flowgate::extractor;
using nn::Tensor;

namespace {

ExtractorConfig toy_config() {
  ExtractorConfig c;
  c.input_dim = 8;
  c.latent_dim = 3;
  c.encoder_hidden = {6, 4};
  c.disc_hidden = {5, 4};
  return c;
}

Tensor unit_batch(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d) {
  return testing::random_tensor(rng, n, d, 0.0, 1.0);
}

}  // namespace

TEST_CASE("default widths") {
  const ExtractorConfig c;
  CHECK(c.encoder_widths() == std::vector<std::size_t>{1600, 512, 128, 70});
  CHECK(c.decoder_widths() == std::vector<std::size_t>{70, 128, 512, 1600});
  CHECK(c.disc_widths() == std::vector<std::size_t>{1600, 256, 64, 1});
  CHECK(c.w_adv == 1.0);
  CHECK(c.w_rec == 50.0);
  CHECK(c.optim.epochs == 100);
  CHECK(c.optim.lr == 1e-3);
  CHECK(c.optim.beta1 == 0.5);
  CHECK(c.optim.beta2 == 0.999);
  CHECK(c.optim.patience == 10);
}

TEST_CASE("objective hand values") {
  auto row = [](std::initializer_list<double> v) {
    Tensor t(1, static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) t(0, i++) = x;
    return t;
  };
  // x=[1,0], G(x)=[0,0], phi(x)=[1], phi(G(x))=[0]: 1*1 + 50*0.5.
  CHECK(generator_objective(row({1, 0}), row({0, 0}), row({1}), row({0}), 1.0, 50.0) == doctest::Approx(26.0));
  CHECK(generator_objective(row({1, 0}), row({1, 0}), row({1}), row({1}), 1.0, 50.0) == 0.0);
  CHECK(generator_objective(row({1, 0}), row({0, 0}), row({1}), row({0}), 0.0, 50.0) == doctest::Approx(25.0));
  CHECK(discriminator_objective(row({1}), row({0})) == 0.0);
  CHECK(discriminator_objective(row({0.5}), row({0.5})) == doctest::Approx(1.0));
  CHECK(discriminator_objective(row({0.8}), row({0.3})) == doctest::Approx(0.5));
}

TEST_CASE("encode and reconstruct shapes, ranges and determinism") {
  FeatureExtractor fx;
  fx.init(1);
  std::mt19937_64 rng(2);
  Tensor x = unit_batch(rng, 3, 1600);
  const Tensor z = fx.encode(x);
  CHECK(z.cols() == 70);
  CHECK(fx.encode(x) == z);
  const Tensor xh = fx.reconstruct(x);
  CHECK(xh.cols() == 1600);
  CHECK(xh.minCoeff() >= 0.0);
  CHECK(xh.maxCoeff() <= 1.0);
  CHECK(fx.features(x).cols() == 64);
  const Tensor d = fx.discriminate(x);
  CHECK(d.cols() == 1);
  x(0, 100) = 1.0 - x(0, 100);
  CHECK(fx.encode(x).row(0) != z.row(0));
  CHECK(testing::error_code([&] { fx.encode(Tensor::Zero(1, 1599)); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("recorded losses match the plain ones") {
  FeatureExtractor fx(toy_config());
  fx.init(3);
  std::mt19937_64 rng(4);
  const Tensor x = unit_batch(rng, 5, 8);
  nn::Tape t1;
  CHECK(t1.value(fx.generator_loss(t1, t1.constant(x)))(0, 0) == doctest::Approx(fx.generator_loss(x)).epsilon(1e-12));
  nn::Tape t2;
  CHECK(t2.value(fx.discriminator_loss(t2, t2.constant(x)))(0, 0) ==
        doctest::Approx(fx.discriminator_loss(x)).epsilon(1e-12));
}

TEST_CASE("gradient check on a toy extractor: both losses, all networks") {
  FeatureExtractor fx(toy_config());
  fx.init(5);
  testing::jitter_biases(fx.generator_parameters(), 50);
  testing::jitter_biases(fx.discriminator_parameters(), 51);
  std::mt19937_64 rng(6);
  Tensor x = unit_batch(rng, 6, 8);

  auto gen = fx.generator_parameters();
  auto dis = fx.discriminator_parameters();
  for (auto* p : gen) p->zero_grad();
  for (auto* p : dis) p->zero_grad();
  nn::Tape tg;
  const auto xv = tg.variable(x);
  tg.backward(fx.generator_loss(tg, xv));
  const Tensor gx = tg.grad(xv);
  // The generator step leaves the discriminator untouched.
  for (auto* p : dis) CHECK(p->grad.cwiseAbs().sum() == 0.0);
  auto gen_loss = [&] { return fx.generator_loss(x); };
  CHECK(testing::check_params(gen, gen_loss) < 1e-4);
  CHECK(testing::check_entries(x, gx, gen_loss) < 1e-4);

  for (auto* p : gen) p->zero_grad();
  nn::Tape td;
  td.backward(fx.discriminator_loss(td, td.constant(x)));
  // ... and the discriminator step leaves the generator untouched.
  for (auto* p : gen) CHECK(p->grad.cwiseAbs().sum() == 0.0);
  CHECK(testing::check_params(dis, [&] { return fx.discriminator_loss(x); }) < 1e-4);
}

TEST_CASE("checkpoint round trip and encoder-only loading") {
  FeatureExtractor fx(toy_config());
  fx.init(7);
  const auto dir = testing::scratch_dir("extractor");
  checkpoint::save(fx.to_checkpoint(7, "m"), dir / "fx.ckpt");
  const auto back = FeatureExtractor::from_checkpoint(checkpoint::load(dir / "fx.ckpt"));
  std::mt19937_64 rng(1);
  const Tensor x = unit_batch(rng, 4, 8);
  CHECK(back.reconstruct(x) == fx.reconstruct(x));
  CHECK(back.discriminate(x) == fx.discriminate(x));

  checkpoint::LoadTrace trace;
  const auto enc = Encoder::load(dir / "fx.ckpt", &trace);
  CHECK(enc.encode(x) == fx.encode(x));
  CHECK(trace.tables_read == std::vector<std::string>{"encoder"});
  CHECK(trace.tables_skipped.size() == 2);
  CHECK(enc.parameter_count() == fx.encoder().parameter_count());
  CHECK(enc.parameter_count() < fx.parameter_count());
}

TEST_CASE("training: held-out loss improves, deterministic, guards") {
  ExtractorConfig c = toy_config();
  c.input_dim = 1600;
  c.latent_dim = 8;
  c.encoder_hidden = {32};
  c.disc_hidden = {16, 8};
  c.optim.epochs = 4;
  c.optim.batch_size = 32;
  const auto corpus = corpus::make_synthetic_corpus(1, 300, 0);
  const auto a = train_extractor(corpus.normal, c, 11);
  const auto b = train_extractor(corpus.normal, c, 11);
  CHECK(a.history.best_holdout < a.history.initial_holdout);
  CHECK(a.history.epochs.size() == 4);
  CHECK(checkpoint::serialize(a.model.to_checkpoint(11, "")) == checkpoint::serialize(b.model.to_checkpoint(11, "")));

  const std::vector<packet::EncodedPacket> empty;
  CHECK(testing::error_code([&] { train_extractor(empty, c, 1); }) == ErrorCode::EmptyDataset);
  auto tainted = corpus.normal;
  tainted[5].label = packet::Label::Anomaly;
  CHECK(testing::error_code([&] { train_extractor(tainted, c, 1); }) == ErrorCode::AnomalyInTrainingSet);
}
