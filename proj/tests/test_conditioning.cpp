#include <doctest.h>

#include <random>

#include "nerv360/conditioning.hpp"
#include "support.hpp"

using namespace nerv360;

TEST_CASE("positional encoding values") {
  const PEConfig paper;
  CHECK(paper.base == 1.25);
  CHECK(paper.levels == 80);
  CHECK(positional_encode(0.3, paper).size() == 160);

  const Eigen::VectorXd zero = positional_encode(0.0, PEConfig{1.7, 5});
  for (Index i = 0; i < zero.size(); ++i) CHECK(zero(i) == (i % 2 == 0 ? 0.0 : 1.0));

  const Eigen::VectorXd half = positional_encode(0.5, PEConfig{2.0, 2});
  CHECK(half(0) == doctest::Approx(1.0));
  CHECK(half(1) == doctest::Approx(0.0));
  CHECK(half(2) == doctest::Approx(0.0));
  CHECK(half(3) == doctest::Approx(-1.0));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  for (int i = 0; i < 200; ++i) {
    const Eigen::VectorXd e = positional_encode(u(rng), paper);
    CHECK(e.cwiseAbs().maxCoeff() <= 1.0);
  }
  CHECK_THROWS(positional_encode(0.5, PEConfig{1.0, 3}));
  CHECK_THROWS(positional_encode(0.5, PEConfig{1.5, 0}));
}

TEST_CASE("view normalization") {
  auto n = normalize_view(ViewState{0, -kPi, -kPi / 2}, 5);
  CHECK(n.t == 0.0);
  CHECK(n.theta == 0.0);
  CHECK(n.phi == 0.0);
  n = normalize_view(ViewState{4, std::nextafter(kPi, 0.0), kPi / 2}, 5);
  CHECK(n.t == 1.0);
  CHECK(n.theta <= 1.0);
  CHECK(n.theta == doctest::Approx(1.0));
  CHECK(n.phi == 1.0);
  n = normalize_view(ViewState{1, 0.0, 0.0}, 3);
  CHECK(n.t == 0.5);
  CHECK(n.theta == 0.5);
  CHECK(n.phi == 0.5);
  CHECK(normalize_view(ViewState{0, 0.0, 0.0}, 1).t == 0.0);
  CHECK_THROWS_AS(normalize_view(ViewState{3, 0.0, 0.0}, 3), std::out_of_range);
}

TEST_CASE("generators: identity at init, shapes and sensitivity") {
  std::mt19937_64 rng(4);
  const PEConfig pe{1.25, 8};
  AffineGenerator<double> stat_gen("stat", ConditioningInputs::time_and_view, pe, 16, 5);
  AffineGenerator<double> tat_gen("tat", ConditioningInputs::time, pe, 16, 5);
  stat_gen.init(rng);
  tat_gen.init(rng);
  CHECK(stat_gen.hidden_layer.in_features() == 6 * pe.levels);
  CHECK(tat_gen.hidden_layer.in_features() == 2 * pe.levels);

  const NormalizedView a{0.2, 0.3, 0.4}, b{0.2, 0.9, 0.1};
  const auto p = stat_generator(a, 5, stat_gen);
  CHECK(p.channels() == 5);
  CHECK((p.gamma.array() - 1.0).abs().maxCoeff() == 0.0);  // g = 0
  CHECK(p.beta.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(stat_generator(a, 6, stat_gen), ShapeError);
  CHECK_THROWS(tat_generator(0.2, 5, stat_gen));

  stat_gen.output_layer.init(rng);
  tat_gen.output_layer.init(rng);
  const auto pa = stat_generator(a, 5, stat_gen);
  const auto pb = stat_generator(b, 5, stat_gen);
  CHECK((pa.gamma - pb.gamma).cwiseAbs().maxCoeff() > 1e-6);
  NormalizedView c = a;
  c.phi = 0.8;
  CHECK((stat_generator(c, 5, stat_gen).beta - pa.beta).cwiseAbs().maxCoeff() > 1e-6);
  const auto again = stat_generator(a, 5, stat_gen);
  CHECK(again.gamma == pa.gamma);
  CHECK(again.beta == pa.beta);

  const auto ta = tat_gen.forward(a);
  const auto tb = tat_gen.forward(b);  // same t, other angles
  CHECK(ta.gamma == tb.gamma);
  CHECK(ta.beta == tb.beta);
  CHECK(tat_generator(0.2, 5, tat_gen).gamma == ta.gamma);

  CHECK(affine_generator_parameters(ConditioningInputs::time_and_view, pe, 16, 5) ==
        stat_gen.parameter_count());
}

TEST_CASE("generator gradient matches finite differences") {
  std::mt19937_64 rng(9);
  const PEConfig pe{1.25, 6};
  AffineGenerator<double> gen("g", ConditioningInputs::time_and_view, pe, 12, 4);
  gen.init(rng);
  gen.output_layer.init(rng);
  const NormalizedView view{0.3, 0.6, 0.25};
  const Eigen::VectorXd wg = Eigen::VectorXd::Random(4), wb = Eigen::VectorXd::Random(4);
  auto f = [&] {
    const auto p = gen.forward(view);
    return p.gamma.dot(wg) + p.beta.dot(wb);
  };
  ParameterList<double> params;
  gen.collect(params);
  for (auto* p : params) p->zero_grad();
  typename AffineGenerator<double>::Cache cache;
  gen.forward(view, &cache);
  gen.backward(cache, AffineParams<double>{wg, wb});
  for (auto* p : params) {
    const auto idx = testing::sample_indices(p->size(), 25, rng);
    const Eigen::VectorXd numeric = testing::numeric_gradient(p->value.data(), idx, f);
    Eigen::VectorXd analytic(static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) analytic(static_cast<Index>(k)) = p->grad.data()[idx[k]];
    INFO(p->name);
    CHECK(testing::relative_error(numeric, analytic) <= 1e-4);
  }
}
