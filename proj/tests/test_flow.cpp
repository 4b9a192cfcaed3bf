#include <doctest.h>

#include <cmath>
#include <numbers>

#include "flowgate/checkpoint.hpp"
#include "flowgate/error.hpp"
#include "flowgate/flow.hpp"
#include "support.hpp"

using namespace flowgate;
using namespace flowgate::flow;
using nn::Tensor;

namespace {

FlowModel random_flow(std::size_t dim, std::uint64_t seed, std::size_t blocks = 8) {
  FlowConfig c;
  c.dim = dim;
  c.blocks = blocks;
  c.hidden = {16, 16};
  FlowModel m(c);
  m.init(seed, /*zero_final=*/false);
  return m;
}

// log|det J| of normalize at one point, J by central differences.
double numeric_log_det(const FlowModel& m, const Tensor& z, double h = 1e-5) {
  const auto d = z.cols();
  Eigen::MatrixXd jac(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Tensor up = z, down = z;
    up(0, j) += h;
    down(0, j) -= h;
    jac.col(j) = ((m.normalize(up).c - m.normalize(down).c) / (2 * h)).transpose();
  }
  return std::log(std::abs(jac.determinant()));
}

}  // namespace

TEST_CASE("a fresh flow is the identity") {
  FlowModel m;
  m.init(1);
  std::mt19937_64 rng(2);
  const Tensor z = testing::random_tensor(rng, 5, 70, -3, 3);
  const auto out = m.normalize(z);
  CHECK(out.c == z);
  CHECK(out.log_det.cwiseAbs().maxCoeff() == 0.0);
  CHECK(m.generate(z) == z);
  const Tensor origin = Tensor::Zero(1, 70);
  CHECK(m.log_likelihood(origin)(0) == doctest::Approx(-35.0 * std::log(2 * std::numbers::pi)));
  CHECK(m.log_likelihood(origin)(0) == doctest::Approx(-64.32570).epsilon(1e-6));
  // Maximized at the origin over any sample.
  CHECK(m.log_likelihood(z).maxCoeff() < m.log_likelihood(origin)(0));
}

TEST_CASE("masks alternate and cover every coordinate") {
  FlowModel m;
  m.init(1);
  REQUIRE(m.blocks().size() == 8);
  for (std::size_t k = 0; k < 8; ++k) {
    const auto mask = m.blocks()[k].mask(70);
    int ones = 0;
    for (auto v : mask) ones += v;
    CHECK(ones == 35);
    if (k > 0) {
      const auto prev = m.blocks()[k - 1].mask(70);
      for (std::size_t i = 0; i < 70; ++i) CHECK(mask[i] != prev[i]);
    }
  }
}

TEST_CASE("single block with s = ln 2 doubles the active half") {
  FlowConfig c;
  c.blocks = 1;
  FlowModel m(c);
  m.init(3);
  auto& b = m.blocks()[0];
  // Final s layer: zero weights, bias chosen so clamp * tanh(bias) = ln 2.
  b.s_net.layers().back().bias.value.setConstant(std::atanh(std::log(2.0) / c.clamp));
  std::mt19937_64 rng(4);
  const Tensor z = testing::random_tensor(rng, 3, 70);
  const auto out = m.normalize(z);
  for (int i : b.pass) CHECK(out.c.col(i) == z.col(i));
  for (int i : b.active) CHECK((out.c.col(i) - 2.0 * z.col(i)).cwiseAbs().maxCoeff() < 1e-14);
  for (Eigen::Index r = 0; r < 3; ++r) CHECK(out.log_det(r) == doctest::Approx(35.0 * std::log(2.0)));
  const Tensor back = m.generate(out.c);
  CHECK((back - z).cwiseAbs().maxCoeff() < 1e-14);
  // Change of variables by hand: standard normal density of c times 2^35.
  const double hand = -35.0 * std::log(2 * std::numbers::pi) - 0.5 * out.c.row(0).squaredNorm() + 35.0 * std::log(2.0);
  CHECK(m.log_likelihood(z.topRows(1))(0) == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("dim-2 density by hand") {
  FlowConfig c;
  c.dim = 2;
  c.blocks = 1;
  FlowModel m(c);
  m.init(5);
  auto& b = m.blocks()[0];
  // Even block: coordinate 0 passes, coordinate 1 moves. s = 0.5, t = 1.
  b.s_net.layers().back().bias.value.setConstant(std::atanh(0.5 / c.clamp));
  b.t_net.layers().back().bias.value.setConstant(1.0);
  Tensor z(1, 2);
  z << 0.3, -0.4;
  const double c1 = -0.4 * std::exp(0.5) + 1.0;
  const double hand = -std::log(2 * std::numbers::pi) - 0.5 * (0.3 * 0.3 + c1 * c1) + 0.5;
  CHECK(m.log_likelihood(z)(0) == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("analytic log-det matches the numerical Jacobian") {
  for (std::size_t dim : {2u, 4u, 8u}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto m = random_flow(dim, seed);
      std::mt19937_64 rng(seed + 100);
      const Tensor z = testing::random_tensor(rng, 1, static_cast<Eigen::Index>(dim), -2, 2);
      const double analytic = m.normalize(z).log_det(0);
      CHECK(testing::rel_err(analytic, numeric_log_det(m, z)) < 1e-6);
    }
  }
}

TEST_CASE("round trips and log-det antisymmetry") {
  const auto m = random_flow(70, 9);
  std::mt19937_64 rng(10);
  const Tensor z = testing::random_tensor(rng, 200, 70, -4, 4);
  const auto fwd = m.normalize(z);
  CHECK((m.generate(fwd.c) - z).cwiseAbs().maxCoeff() < 1e-8);
  const auto inv = m.generate_with_log_det(fwd.c);
  CHECK((inv.c - z).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((inv.log_det + fwd.log_det).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((m.normalize(m.generate(z)).c - z).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("recorded normalization matches and the NLL gradient checks out") {
  auto m = random_flow(4, 11, 4);
  std::mt19937_64 rng(12);
  Tensor z = testing::random_tensor(rng, 6, 4);
  for (auto* p : m.parameters()) p->zero_grad();
  nn::Tape tape;
  const auto zv = tape.variable(z);
  const auto [c, log_det] = m.normalize(tape, zv);
  CHECK((tape.value(c) - m.normalize(z).c).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((tape.value(log_det).col(0) - m.normalize(z).log_det).cwiseAbs().maxCoeff() < 1e-14);
  nn::Tape t2;
  const auto zv2 = t2.variable(z);
  const auto loss = m.nll(t2, zv2);
  CHECK(t2.value(loss)(0, 0) == doctest::Approx(mean_nll(m, z)).epsilon(1e-12));
  t2.backward(loss);
  const Tensor gz = t2.grad(zv2);
  auto f = [&] { return mean_nll(m, z); };
  CHECK(testing::check_params(m.parameters(), f) < 1e-4);
  CHECK(testing::check_entries(z, gz, f) < 1e-4);
}

TEST_CASE("non-finite input is rejected") {
  FlowModel m;
  m.init(1);
  Tensor z = Tensor::Zero(2, 70);
  z(1, 3) = std::nan("");
  CHECK(testing::error_code([&] { m.normalize(z); }) == ErrorCode::NonFiniteInput);
  z(1, 3) = INFINITY;
  CHECK(testing::error_code([&] { m.generate(z); }) == ErrorCode::NonFiniteInput);
  CHECK(testing::error_code([&] { m.normalize(Tensor::Zero(1, 69)); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("training normalizes a shifted, correlated Gaussian") {
  const Eigen::Index d = 8, n = 3000;
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g;
  Eigen::MatrixXd mix = testing::random_tensor(rng, d, d, -0.6, 0.6);
  mix.diagonal().array() += 1.0;
  Tensor eps(n, d);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = g(rng);
  Tensor z = eps * mix.transpose();
  z.rowwise() += Eigen::RowVectorXd::LinSpaced(d, -3.0, 4.0);

  FlowConfig c;
  c.dim = static_cast<std::size_t>(d);
  c.optim.epochs = 40;
  const auto a = train_flow(z, c, 21);
  CHECK(a.history.best_holdout < a.history.initial_holdout);
  const Tensor out = a.model.normalize(z).c;
  const Eigen::RowVectorXd mean = out.colwise().mean();
  const Eigen::RowVectorXd var = (out.rowwise() - mean).array().square().colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() <= 0.2);
  CHECK(var.minCoeff() >= 0.7);
  CHECK(var.maxCoeff() <= 1.3);
  CHECK((a.model.generate(out) - z).cwiseAbs().maxCoeff() < 1e-8);

  const auto b = train_flow(z, c, 21);
  CHECK(checkpoint::serialize(a.model.to_checkpoint(21, "")) == checkpoint::serialize(b.model.to_checkpoint(21, "")));
  CHECK(testing::error_code([&] { train_flow(Tensor(0, d), c, 1); }) == ErrorCode::EmptyDataset);
}

TEST_CASE("flow checkpoint round trip") {
  const auto m = random_flow(70, 14);
  const auto back = FlowModel::from_checkpoint(checkpoint::deserialize(checkpoint::serialize(m.to_checkpoint(14, "x"))));
  std::mt19937_64 rng(15);
  const Tensor z = testing::random_tensor(rng, 4, 70);
  CHECK(back.normalize(z).c == m.normalize(z).c);
  CHECK(back.parameter_count() == m.parameter_count());
}

TEST_CASE("input whitening: round trip, log-det, tape agreement and checkpoint") {
  auto m = random_flow(4, 31, 4);
  std::mt19937_64 rng(32);
  std::normal_distribution<double> g;
  Tensor train(2000, 4);
  for (Eigen::Index i = 0; i < train.size(); ++i) train.data()[i] = g(rng);
  train.col(0) *= 40.0;
  train.col(3) = (train.col(1) - 0.5 * train.col(2)).array() + 7.0;  // degenerate direction
  m.set_input_whitening(fit_whitening(train, NullPolicy::Floor));
  CHECK(m.input_whitening().log_det != 0.0);

  const Tensor z = train.topRows(5);
  const auto fwd = m.normalize(z);
  CHECK((m.generate(fwd.c) - z).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((m.generate_with_log_det(fwd.c).log_det + fwd.log_det).cwiseAbs().maxCoeff() < 1e-9);
  // Numeric log-det on a well-conditioned fit; the degenerate one above has
  // a 1e10-ish Jacobian spread that finite differences cannot resolve.
  auto w = random_flow(4, 33, 4);
  Tensor spread = train;
  spread.col(3) = train.col(3) + 0.3 * train.col(0);
  for (Eigen::Index i = 0; i < spread.rows(); ++i) spread(i, 3) += g(rng);
  w.set_input_whitening(fit_whitening(spread, NullPolicy::Floor));
  const Tensor p = spread.row(7);
  CHECK(testing::rel_err(w.normalize(p).log_det(0), numeric_log_det(w, p, 1e-4)) < 1e-6);

  nn::Tape tape;
  const auto zv = tape.variable(z);
  const auto [c, log_det] = m.normalize(tape, zv);
  CHECK((tape.value(c) - fwd.c).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tape.value(log_det).col(0) - fwd.log_det).cwiseAbs().maxCoeff() < 1e-9);
  nn::Tape t2;
  const auto zv2 = t2.variable(z);
  for (auto* q : m.parameters()) q->zero_grad();
  const auto loss = m.nll(t2, zv2);
  CHECK(t2.value(loss)(0, 0) == doctest::Approx(mean_nll(m, z)).epsilon(1e-12));
  t2.backward(loss);
  auto f = [&] { return mean_nll(m, z); };
  // The floored null direction adds a large constant to the loss, so tiny
  // gradient entries drown in roundoff; scale by the largest entry instead.
  double worst = 0.0, largest = 0.0;
  for (auto* q : m.parameters()) {
    for (Eigen::Index i = 0; i < q->value.size(); ++i) {
      const double keep = q->value.data()[i];
      q->value.data()[i] = keep + 1e-4;
      const double up = f();
      q->value.data()[i] = keep - 1e-4;
      const double down = f();
      q->value.data()[i] = keep;
      worst = std::max(worst, std::abs((up - down) / 2e-4 - q->grad.data()[i]));
      largest = std::max(largest, std::abs(q->grad.data()[i]));
    }
  }
  CHECK(worst / largest < 1e-6);

  const auto back = FlowModel::from_checkpoint(checkpoint::deserialize(checkpoint::serialize(m.to_checkpoint(31, ""))));
  CHECK(back.normalize(z).c == fwd.c);
  CHECK(back.normalize(z).log_det == fwd.log_det);
  CHECK(back.input_whitening().log_det == m.input_whitening().log_det);
  CHECK(testing::error_code([&] { m.set_input_whitening(Whitening::identity(3)); }) == ErrorCode::ShapeMismatch);
}
