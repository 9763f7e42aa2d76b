#include <doctest.h>

#include <random>

#include "nerv360/model.hpp"
#include "nerv360/objective.hpp"
#include "support.hpp"

using namespace nerv360;
using testing::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.strides = {2, 2};
  cfg.c1 = 4;
  cfg.d = 2;
  cfg.c2 = 6;
  cfg.pe = PEConfig{1.25, 3};
  cfg.generator_hidden = 5;
  cfg.min_channels = 3;
  return cfg;
}

// Every generator output layer gets random weights so gradients reach the
// generator hidden layers too.
template <typename S>
void randomize_generators(Model<S>& model, std::mt19937_64& rng) {
  model.expansion().tat.output_layer.init(rng);
  for (auto& r : model.decoder().residual) r.generator.output_layer.init(rng);
}

}  // namespace

TEST_CASE("decoder plan and parameter sizing") {
  ModelConfig cfg;
  const auto plan = decoder_plan(cfg, 100);
  REQUIRE(plan.size() == 4);
  CHECK(plan[0].out_channels == 83);
  CHECK(plan[1].out_channels == 69);
  CHECK(plan[2].out_channels == 58);
  CHECK(plan[3].out_channels == 48);
  CHECK(plan[0].upsample == 3);
  CHECK(plan[3].upsample == 2);
  CHECK(decoder_plan(cfg, 9).back().out_channels == 8);

  std::int64_t prev = 0;
  for (Index c2 = 8; c2 < 200; ++c2) {
    const auto n = decoder_parameter_count(cfg, c2);
    CHECK(n >= prev);
    prev = n;
  }

  const Index c2 = solve_decoder_width(2'200'000, cfg);
  const auto count = decoder_parameter_count(cfg, c2);
  CHECK(count <= 2'200'000);
  CHECK(count >= 2'090'000);
  CHECK(decoder_parameter_count(cfg, c2 - 1) < 2'090'000);
  CHECK_THROWS_AS(solve_decoder_width(1000, cfg), InfeasibleTarget);

  // The model's own parameter inventory agrees with the closed-form count.
  cfg.pe.levels = 4;
  cfg.generator_hidden = 8;
  cfg.c1 = 4;
  cfg.c2 = 12;
  const Model<float> model(cfg);
  CHECK(model.decoder_parameter_count() == decoder_parameter_count(cfg, 12));
}

TEST_CASE("shapes through the pipeline") {
  ModelConfig cfg;
  cfg.c1 = 4;
  cfg.pe.levels = 4;
  cfg.generator_hidden = 8;
  cfg.c2 = 10;
  const Model<float> model(cfg);
  CHECK(model.embedding_shape({3, 384, 768}) == Shape{1, 16, 32});
  CHECK(model.embedding_shape({3, 3072, 6144}) == Shape{1, 128, 256});
  CHECK_THROWS_AS(model.embedding_shape({3, 100, 100}), ShapeError);
  const auto r = model.trace_shapes({3, 3072, 6144}, ViewportSpec::from_degrees(78.1, 1080, 1920));
  CHECK(r.expanded == Shape{10, 128, 256});
  CHECK(r.embedding_viewport == Shape{10, 45, 80});
  CHECK(r.output == Shape{3, 1080, 1920});

  std::mt19937_64 rng(1);
  const auto frame = random_tensor<float>({3, 384, 768}, rng);
  const ViewportSpec toy = ViewportSpec::from_degrees(78.1, 120, 240);
  const auto y = model.encode(frame);
  CHECK(y.shape() == Shape{1, 16, 32});
  CHECK(model.expand_channels(y, 0.5).shape() == Shape{10, 16, 32});
  const auto out = model.forward(frame, ViewState{2, 0.3, -0.1}, toy, 8);
  CHECK(out.shape() == Shape{3, 120, 240});
  CHECK(out.array().minCoeff() >= 0.0f);
  CHECK(out.array().maxCoeff() <= 1.0f);
  CHECK(model.decode_viewport(random_tensor<float>({10, 5, 10}, rng), {0.1, 0.2, 0.3}).shape() ==
        Shape{3, 120, 240});
  CHECK_THROWS(model.forward(frame, ViewState{0, 0, 0}, ViewportSpec::from_degrees(78.1, 100, 240), 8));
}

TEST_CASE("snerv block and stat") {
  std::mt19937_64 rng(2);
  SNeRVBlock<double> b1("b", 4, 6, 1), b2("b", 4, 6, 2);
  b1.init(rng);
  b2.init(rng);
  const auto x = random_tensor<double>({4, 8, 8}, rng, -2, 2);
  CHECK(b1.forward(x).shape() == Shape{6, 8, 8});
  const auto y2 = b2.forward(x);
  CHECK(y2.shape() == Shape{6, 16, 16});
  CHECK(y2.array().abs().maxCoeff() <= 1.0);

  const auto f = random_tensor<double>({3, 4, 5}, rng);
  CHECK((stat(f, AffineParams<double>::identity(3)).array() == f.array()).all());
  AffineParams<double> zero{Eigen::VectorXd::Zero(3), Eigen::Vector3d(0.5, -1.0, 2.0)};
  const auto c = stat(f, zero);
  for (Index ch = 0; ch < 3; ++ch) CHECK((c.channel(ch).array() == zero.beta(ch)).all());
  Tensor<double> one(1, 1, 1, 2.0);
  CHECK(stat(one, AffineParams<double>{Eigen::VectorXd::Constant(1, 3.0), Eigen::VectorXd::Constant(1, -1.0)})(0, 0, 0) == 5.0);
  CHECK_THROWS_AS(stat(f, AffineParams<double>::identity(2)), ShapeError);
}

TEST_CASE("stat gradient matches finite differences") {
  std::mt19937_64 rng(3);
  auto f = random_tensor<double>({3, 4, 5}, rng, -1, 1);
  AffineParams<double> p{Eigen::VectorXd::Random(3), Eigen::VectorXd::Random(3)};
  const auto w = random_tensor<double>(f.shape(), rng, -1, 1);
  auto loss = [&] { return (stat(f, p).array() * w.array()).sum(); };
  AffineParams<double> dp;
  const auto df = stat_backward(f, p, w, dp);
  CHECK(testing::relative_error(testing::numeric_gradient(f.data(), testing::all_indices(f.size()), loss),
                                Eigen::Map<const Eigen::VectorXd>(df.data(), df.size())) <= 1e-4);
  CHECK(testing::relative_error(testing::numeric_gradient(p.gamma.data(), testing::all_indices(3), loss), dp.gamma) <= 1e-4);
  CHECK(testing::relative_error(testing::numeric_gradient(p.beta.data(), testing::all_indices(3), loss), dp.beta) <= 1e-4);
}

TEST_CASE("expansion with identity TAT equals the bare block") {
  ModelConfig cfg = tiny_config();
  Model<double> model(cfg, 4);
  std::mt19937_64 rng(4);
  randomize_generators(model, rng);
  const auto y = random_tensor<double>({2, 3, 5}, rng);
  const auto id = AffineParams<double>::identity(cfg.c2);
  const auto a = model.expansion().forward(y, 0.4, nullptr, &id);
  const auto b = model.expansion().block.forward(y);
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("decoder with zero generators ignores the view and matches x + conv(gelu(x))") {
  ModelConfig cfg = tiny_config();
  const Model<double> model(cfg, 5);
  std::mt19937_64 rng(5);
  const auto y_vp = random_tensor<double>({6, 3, 4}, rng, -1, 1);
  const auto a = model.decode_viewport(y_vp, {0.2, 0.1, 0.9});
  const auto b = model.decode_viewport(y_vp, {0.2, 0.8, 0.3});
  CHECK((a.array() == b.array()).all());

  Tensor<double> x = y_vp;
  const auto& dec = model.decoder();
  for (std::size_t j = 0; j < dec.upsample.size(); ++j) {
    x = dec.upsample[j].forward(x);
    Tensor<double> r = dec.residual[j].conv.forward(gelu(x));
    add_inplace(r, x);
    x = std::move(r);
  }
  const auto manual = sigmoid(dec.head.forward(x));
  CHECK((manual.array() - a.array()).abs().maxCoeff() < 1e-14);
}

TEST_CASE("forward is deterministic") {
  ModelConfig cfg = tiny_config();
  Model<double> m1(cfg, 6), m2(cfg, 6);
  std::mt19937_64 rng(6);
  const auto frame = random_tensor<double>({3, 12, 24}, rng);
  const ViewportSpec spec{1.2, 8, 12};
  const auto a = m1.forward(frame, ViewState{1, 0.5, 0.2}, spec, 3);
  const auto b = m1.forward(frame, ViewState{1, 0.5, 0.2}, spec, 3);
  const auto c = m2.forward(frame, ViewState{1, 0.5, 0.2}, spec, 3);
  CHECK((a.array() == b.array()).all());
  CHECK((a.array() - c.array()).abs().maxCoeff() == 0.0);
}

TEST_CASE("end-to-end gradient and gradient flow") {
  for (bool before : {true, false}) {
    CAPTURE(before);
    ModelConfig cfg = tiny_config();
    cfg.expand_before_extract = before;
    Model<double> model(cfg, 7);
    std::mt19937_64 rng(7);
    randomize_generators(model, rng);
    const auto frame = random_tensor<double>({3, 16, 32}, rng);
    const ViewportSpec spec{1.3, 12, 24};
    const ViewState state{1, 0.7, -0.3};
    const auto target = extract_viewport(frame, state.theta, state.phi, spec);
    const LossConfig loss_cfg;
    auto loss = [&] { return distortion_loss(target, model.forward(frame, state, spec, 4), loss_cfg).total; };

    model.zero_grad();
    ForwardTrace<double> trace;
    const auto out = model.forward(frame, state, spec, 4, trace);
    Tensor<double> grad;
    distortion_loss(target, out, loss_cfg, &grad);
    model.backward(trace, grad);

    for (auto* p : model.parameters()) {
      INFO(p->name);
      CHECK(p->grad.cwiseAbs().maxCoeff() > 0.0);
      const auto idx = testing::sample_indices(p->size(), 6, rng);
      const Eigen::VectorXd numeric = testing::numeric_gradient(p->value.data(), idx, loss);
      Eigen::VectorXd analytic(static_cast<Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) analytic(static_cast<Index>(k)) = p->grad.data()[idx[k]];
      CHECK(testing::relative_error(numeric, analytic) <= 1e-3);
    }
  }
}

TEST_CASE("half-precision activations stay close to full precision") {
  ModelConfig cfg = tiny_config();
  Model<float> model(cfg, 8);
  std::mt19937_64 rng(8);
  const auto frame = random_tensor<float>({3, 12, 24}, rng);
  const ViewportSpec spec{1.2, 8, 12};
  const auto full = model.forward(frame, ViewState{0, 0.1, 0.1}, spec, 2);
  model.set_half_precision_activations(true);
  const auto half = model.forward(frame, ViewState{0, 0.1, 0.1}, spec, 2);
  CHECK((full.array() - half.array()).abs().maxCoeff() < 5e-3f);
}
