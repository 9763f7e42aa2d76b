#include <doctest.h>

#include <cmath>
#include <random>

#include "nerv360/optim.hpp"
#include "oracles.hpp"

using namespace nerv360;

namespace {

using testing::ScalarAdan;

struct Quadratic {
  Eigen::VectorXd a, c;
  double value(const Eigen::VectorXd& w) const { return 0.5 * (a.array() * (w - c).array().square()).sum(); }
  Eigen::VectorXd grad(const Eigen::VectorXd& w) const { return (a.array() * (w - c).array()).matrix(); }
};

}  // namespace

TEST_CASE("adan matches a scalar reference on a 10-d quadratic") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  Quadratic q{Eigen::VectorXd(10), Eigen::VectorXd(10)};
  Eigen::VectorXd w0(10);
  for (int i = 0; i < 10; ++i) {
    q.a(i) = 1.5 + u(rng);
    q.c(i) = u(rng);
    w0(i) = 2 * u(rng);
  }

  Parameter<double> p("w", 10, 1);
  p.value = w0;
  OptState<double> state;
  ParameterList<double> params{&p};

  std::vector<ScalarAdan> ref(10);
  Eigen::VectorXd wr = w0;

  const double lr = 0.2;
  const int total = 200;
  double worst = 0;
  for (int s = 0; s < total; ++s) {
    p.grad = q.grad(p.value);
    REQUIRE(adan_step(params, state, lr) == StepStatus::applied);
    const Eigen::VectorXd gr = q.grad(wr);
    for (int i = 0; i < 10; ++i) wr(i) = ref[i].step(wr(i), gr(i), lr);
    worst = std::max(worst, (p.value.col(0) - wr).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-6);
  CHECK(state.step == total);
  const double start = q.value(w0);
  CHECK(q.value(p.value.col(0)) <= 1e-3 * start);
  CHECK(q.value(p.value.col(0)) <= 1e-3);
}

TEST_CASE("adan trivial cases") {
  Parameter<double> p("w", 3, 2);
  p.value.setConstant(0.7);
  ParameterList<double> params{&p};

  SUBCASE("zero gradient from zero state") {
    OptState<double> s;
    REQUIRE(adan_step(params, s, 1e-2) == StepStatus::applied);
    CHECK((p.value.array() == 0.7).all());
  }
  SUBCASE("lr zero") {
    OptState<double> s;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    for (int i = 0; i < 5; ++i) {
      p.grad = RowMatrix<double>::NullaryExpr(3, 2, [&] { return n(rng); });
      REQUIRE(adan_step(params, s, 0.0) == StepStatus::applied);
    }
    CHECK((p.value.array() == 0.7).all());
  }
  SUBCASE("descent on w^2") {
    Parameter<double> w("w", 1, 1);
    w.value(0, 0) = 1.0;
    w.grad(0, 0) = 2.0;
    OptState<double> s;
    ParameterList<double> ps{&w};
    REQUIRE(adan_step(ps, s, 1e-2) == StepStatus::applied);
    CHECK(w.value(0, 0) * w.value(0, 0) < 1.0);
  }
  SUBCASE("non-finite gradients are rejected") {
    OptState<double> s;
    p.grad.setConstant(0.1);
    REQUIRE(adan_step(params, s, 1e-2) == StepStatus::applied);
    const RowMatrix<double> before = p.value;
    const auto m = s.slots[0].first_moment;
    p.grad(1, 1) = std::nan("");
    CHECK(adan_step(params, s, 1e-2) == StepStatus::rejected_non_finite);
    p.grad(1, 1) = INFINITY;
    CHECK(adan_step(params, s, 1e-2) == StepStatus::rejected_non_finite);
    CHECK(p.value == before);
    CHECK(s.slots[0].first_moment == m);
    CHECK(s.step == 1);
  }
  SUBCASE("state mismatch") {
    OptState<double> s;
    s.slots.resize(2);
    CHECK_THROWS_AS((void)adan_step(params, s, 1e-2), std::invalid_argument);
  }
}
