#include <doctest.h>

#include <algorithm>

#include "flowgate/classifier.hpp"
#include "flowgate/error.hpp"
#include "support.hpp"

using namespace flowgate;
using namespace flowgate::classifier;
using nn::Tensor;

namespace {

ClassifierModel zero_model() {
  ClassifierModel m;
  for (auto* p : m.net().parameters()) p->value.setZero();
  return m;
}

// Two clusters at -5 and +5 on every axis with unit noise.
std::pair<Tensor, Tensor> toy_clusters(std::uint64_t seed, Eigen::Index n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Tensor a(n, 70), b(n, 70);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = -5.0 + g(rng);
    b.data()[i] = 5.0 + g(rng);
  }
  return {a, b};
}

double median(Eigen::VectorXd v) {
  std::sort(v.data(), v.data() + v.size());
  return v(v.size() / 2);
}

}  // namespace

TEST_CASE("zero weights score one half and the threshold convention is >=") {
  const auto m = zero_model();
  std::mt19937_64 rng(1);
  const Tensor z = testing::random_tensor(rng, 5, 70, -100, 100);
  CHECK((m.score(z).array() == 0.5).all());
  const std::vector<double> row(70, 1.0);
  CHECK(m.predict(row) == packet::Label::Anomaly);
  CHECK(m.predict(row, 0.99) == packet::Label::Normal);
  for (auto l : m.predict(z, 0.99)) CHECK(l == packet::Label::Normal);
  CHECK(testing::error_code([&] { m.predict(row, 0.0); }) == ErrorCode::BadThreshold);
  CHECK(testing::error_code([&] { m.predict(row, 1.0); }) == ErrorCode::BadThreshold);
  CHECK(testing::error_code([&] { m.score(Tensor::Zero(1, 69)); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("scores stay inside (0, 1)") {
  ClassifierModel m;
  m.init(2);
  std::mt19937_64 rng(3);
  const auto s = m.score(testing::random_tensor(rng, 50, 70, -1e3, 1e3));
  CHECK(s.minCoeff() >= 0.0);
  CHECK(s.maxCoeff() <= 1.0);
  CHECK(m.score_one(std::vector<double>(70, 0.1)) == m.score(Tensor::Constant(1, 70, 0.1))(0));
}

TEST_CASE("classifier gradient check") {
  ClassifierConfig c;
  c.input_dim = 6;
  c.hidden = {5, 4};
  ClassifierModel m(c);
  m.init(4);
  testing::jitter_biases(m.net().parameters(), 40);
  std::mt19937_64 rng(5);
  Tensor z = testing::random_tensor(rng, 8, 6);
  Tensor y(8, 1);
  y << 0, 1, 1, 0, 1, 0, 0, 1;
  auto params = m.net().parameters();
  for (auto* p : params) p->zero_grad();
  nn::Tape tape;
  const auto zv = tape.variable(z);
  tape.backward(tape.bce(tape.mlp(zv, m.net()), y));
  const Tensor gz = tape.grad(zv);
  auto f = [&] { return nn::bce(m.net().forward(z), y); };
  CHECK(testing::check_params(params, f) < 1e-4);
  CHECK(testing::check_entries(z, gz, f) < 1e-4);
}

TEST_CASE("separable toy: accuracy, medians, determinism") {
  const auto [normal, pseudo] = toy_clusters(6, 500);
  ClassifierConfig c;
  c.optim.epochs = 50;
  const auto t = train_classifier(normal, pseudo, c, 7);
  const auto sn = t.model.score(normal);
  const auto sp = t.model.score(pseudo);
  const double correct = static_cast<double>((sn.array() < 0.5).count() + (sp.array() >= 0.5).count());
  CHECK(correct / 1000.0 >= 0.99);
  CHECK(median(sp) > 0.9);
  CHECK(median(sn) < 0.1);
  CHECK(t.history.best_holdout < t.history.initial_holdout);

  const auto again = train_classifier(normal, pseudo, c, 7);
  CHECK(checkpoint::serialize(again.model.to_checkpoint(7, "")) == checkpoint::serialize(t.model.to_checkpoint(7, "")));
}

TEST_CASE("training input checks") {
  const ClassifierConfig c;
  const Tensor some = Tensor::Zero(4, 70);
  CHECK(testing::error_code([&] { train_classifier(Tensor(0, 70), some, c, 1); }) == ErrorCode::EmptyClass);
  CHECK(testing::error_code([&] { train_classifier(some, Tensor(0, 70), c, 1); }) == ErrorCode::EmptyClass);
  CHECK(testing::error_code([&] { train_classifier(some, Tensor::Zero(4, 69), c, 1); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("classifier checkpoint: load reads one table") {
  ClassifierModel m;
  m.init(8);
  const auto dir = testing::scratch_dir("classifier");
  checkpoint::save(m.to_checkpoint(8, "meta"), dir / "c.ckpt");
  checkpoint::LoadTrace trace;
  const auto back = ClassifierModel::load(dir / "c.ckpt", &trace);
  CHECK(trace.tables_read == std::vector<std::string>{"classifier"});
  CHECK(trace.parameters_read == m.parameter_count());
  CHECK(m.parameter_count() == 70 * 64 + 64 + 64 * 32 + 32 + 32 + 1);
  std::mt19937_64 rng(9);
  const Tensor z = testing::random_tensor(rng, 10, 70);
  CHECK(back.score(z) == m.score(z));
}

TEST_CASE("whitening: identity covariance, and folding preserves the function") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  const Eigen::Index n = 4000, d = 6;
  Eigen::MatrixXd mix = testing::random_tensor(rng, d, d);
  mix.diagonal().array() += 2.0;
  Tensor z(n, d);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = g(rng);
  z = z * mix.transpose();
  z.rowwise() += Eigen::RowVectorXd::LinSpaced(d, -10, 10);

  const auto w = fit_whitening(z, NullPolicy::Drop);
  const Tensor u = w.apply(z);
  CHECK(u.colwise().mean().cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::MatrixXd cov = (u.transpose() * u) / static_cast<double>(n);
  CHECK((cov - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-8);

  // A constant column is a null direction: dropped, so every row maps to
  // the same value along it and a pure off-span displacement maps to zero.
  Tensor flat = z;
  flat.col(2).setConstant(3.0);
  const auto wf = fit_whitening(flat, NullPolicy::Drop);
  CHECK(wf.apply(flat).allFinite());
  Tensor off = Tensor::Zero(1, d);
  off(0, 2) = 1.0;
  const Tensor zero_row = Tensor::Zero(1, d);
  CHECK((wf.apply(off) - wf.apply(zero_row)).cwiseAbs().maxCoeff() < 1e-12);

  nn::DenseLayer layer(d, 4, nn::Activation::Relu);
  layer.init_glorot(rng);
  testing::jitter_biases({&layer.bias}, 22);
  const Tensor probe = testing::random_tensor(rng, 10, d, -20, 20);
  const Tensor expected = layer.forward(w.apply(probe));
  fold_whitening(w, layer);
  CHECK((layer.forward(probe) - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("floored whitening is invertible with a known log-determinant") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> g;
  Tensor z(3000, 4);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = g(rng);
  z.col(1) *= 3.0;
  z.col(3) = 2.0 * z.col(0) - z.col(2);  // exactly rank 3
  const auto w = fit_whitening(z, NullPolicy::Floor);
  const Tensor probe = testing::random_tensor(rng, 20, 4, -5, 5);
  CHECK((w.restore(w.apply(probe)) - probe).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(w.log_det == doctest::Approx(std::log(std::abs(w.transform.determinant()))).epsilon(1e-9));

  const auto id = Whitening::identity(4);
  CHECK(id.apply(probe) == probe);
  CHECK(id.log_det == 0.0);
  CHECK(testing::error_code([] { fit_whitening(Tensor(0, 3), NullPolicy::Drop); }) == ErrorCode::EmptyDataset);
}
