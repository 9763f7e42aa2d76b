#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "nerv360/objective.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace nerv360;
using testing::oracle_frequency_l1;
using testing::oracle_ms_ssim;
using testing::random_tensor;


TEST_CASE("psnr") {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<double>({3, 8, 8}, rng);
  CHECK(psnr(x, x) == 100.0);
  Tensor<double> zeros(1, 4, 4, 0.0), ones(1, 4, 4, 1.0), tenth(1, 4, 4, 0.1);
  CHECK(psnr(zeros, ones) == doctest::Approx(0.0));
  CHECK(psnr(zeros, tenth) == doctest::Approx(20.0));
  // Pixel permutations leave psnr unchanged.
  auto y = random_tensor<double>({1, 16, 16}, rng);
  auto z = random_tensor<double>({1, 16, 16}, rng);
  const double before = psnr(y, z);
  std::vector<Index> perm = testing::all_indices(y.size());
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor<double> yp(y.shape()), zp(z.shape());
  for (Index i = 0; i < y.size(); ++i) {
    yp.data()[i] = y.data()[perm[i]];
    zp.data()[i] = z.data()[perm[i]];
  }
  CHECK(psnr(yp, zp) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("frequency L1") {
  std::mt19937_64 rng(2);
  const auto x = random_tensor<double>({2, 6, 10}, rng);
  const auto y = random_tensor<double>({2, 6, 10}, rng);
  CHECK(frequency_l1(x, x) == 0.0);
  Tensor<double> a(3, 8, 12, 0.25), b(3, 8, 12, 0.8);
  CHECK(frequency_l1(a, b) == doctest::Approx(0.55).epsilon(1e-12));
  Tensor<double> diff(x.shape()), zero(x.shape());
  diff.array() = x.array() - y.array();
  CHECK(frequency_l1(x, y) == doctest::Approx(frequency_l1(diff, zero)).epsilon(1e-12));
  CHECK(frequency_l1(x, y) == doctest::Approx(oracle_frequency_l1(x, y)).epsilon(1e-10));
  // Magnitude mode is bounded by the complex-parts sum.
  CHECK(frequency_l1(x, y, FrequencyMode::magnitude) <= frequency_l1(x, y));
  CHECK_THROWS_AS(frequency_l1(x, random_tensor<double>({2, 6, 9}, rng)), ShapeError);
}

TEST_CASE("ms-ssim") {
  std::mt19937_64 rng(3);
  CHECK(ms_ssim_scales(11, 11) == 1);
  CHECK(ms_ssim_scales(22, 40) == 2);
  CHECK(ms_ssim_scales(120, 240) == 4);
  CHECK(ms_ssim_scales(176, 176) == 5);
  CHECK(ms_ssim_scales(1080, 1920) == 5);
  CHECK_THROWS_AS(ms_ssim_scales(10, 100), ShapeError);

  const auto x = random_tensor<double>({3, 48, 64}, rng);
  CHECK(ms_ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  Tensor<double> inv(x.shape());
  inv.array() = 1.0 - x.array();
  CHECK(ms_ssim(x, inv) < 0.5);

  const auto y = random_tensor<double>({3, 48, 64}, rng);
  CHECK(ms_ssim(x, y) == doctest::Approx(ms_ssim(y, x)).epsilon(1e-9));

  // Smooth image, growing noise.
  Tensor<double> smooth(3, 48, 64);
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < 48; ++i)
      for (Index j = 0; j < 64; ++j) smooth(c, i, j) = 0.5 + 0.4 * std::sin(0.2 * i + 0.1 * j + c);
  const auto noise = random_tensor<double>(smooth.shape(), rng, -1, 1);
  double prev = 1.0;
  for (double eps : {0.01, 0.05, 0.1}) {
    Tensor<double> noisy(smooth.shape());
    noisy.array() = smooth.array() + eps * noise.array();
    const double v = ms_ssim(smooth, noisy);
    CHECK(v < prev);
    prev = v;
  }

  for (Shape s : {Shape{1, 32, 32}, Shape{2, 24, 50}, Shape{1, 48, 48}}) {
    const auto a = random_tensor<double>(s, rng);
    Tensor<double> b(s);
    b.array() = (a.array() + 0.2 * random_tensor<double>(s, rng, -1, 1).array()).max(0.0).min(1.0);
    CHECK(ms_ssim(a, b) == doctest::Approx(oracle_ms_ssim(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("distortion loss identities and term-by-term oracle") {
  std::mt19937_64 rng(4);
  const auto x = random_tensor<double>({1, 32, 32}, rng);
  Tensor<double> xh(x.shape());
  xh.array() = (x.array() + 0.15 * random_tensor<double>(x.shape(), rng, -1, 1).array()).max(0.0).min(1.0);
  const LossConfig cfg;
  CHECK(cfg.lambda == 60.0);
  CHECK(cfg.alpha == 0.7);

  const auto same = distortion_loss(x, x, cfg);
  CHECK(std::abs(same.total) < 1e-9);

  const auto terms = distortion_loss(x, xh, cfg);
  double l1 = 0;
  for (Index i = 0; i < x.size(); ++i) l1 += std::abs(x.data()[i] - xh.data()[i]);
  l1 /= static_cast<double>(x.size());
  const double expected = oracle_frequency_l1(x, xh) + 60 * 0.7 * l1 + 60 * 0.3 * (1 - oracle_ms_ssim(x, xh));
  CHECK(std::abs(terms.total - expected) <= 1e-6);
  CHECK(terms.l1 == doctest::Approx(l1).epsilon(1e-12));
  CHECK(terms.total > 0);

  LossConfig pure{60.0, 1.0};
  const auto reduced = distortion_loss(x, xh, pure);
  CHECK(reduced.total == doctest::Approx(frequency_l1(x, xh) + 60.0 * l1_loss(x, xh)).epsilon(1e-12));

  CHECK_THROWS(distortion_loss(x, xh, LossConfig{-1.0, 0.5}));
  CHECK_THROWS(distortion_loss(x, xh, LossConfig{1.0, 1.5}));
}

TEST_CASE("loss is non-negative on random pairs") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_tensor<double>({3, 24, 24}, rng);
    const auto b = random_tensor<double>({3, 24, 24}, rng);
    CHECK(distortion_loss(a, b, LossConfig{}).total >= 0.0);
  }
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<double>({2, 24, 26}, rng);
  Tensor<double> xh(x.shape());
  xh.array() = x.array() + 0.1 * random_tensor<double>(x.shape(), rng, -1, 1).array();
  auto check = [&](auto f, const Tensor<double>& analytic) {
    const auto idx = testing::sample_indices(xh.size(), 40, rng);
    const Eigen::VectorXd numeric = testing::numeric_gradient(xh.data(), idx, f);
    Eigen::VectorXd a(static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) a(static_cast<Index>(k)) = analytic.data()[idx[k]];
    return testing::relative_error(numeric, a);
  };
  Tensor<double> g;
  ms_ssim(x, xh, &g);
  CHECK(check([&] { return ms_ssim(x, xh); }, g) <= 1e-4);
  frequency_l1(x, xh, FrequencyMode::complex_parts, &g);
  CHECK(check([&] { return frequency_l1(x, xh); }, g) <= 1e-4);
  frequency_l1(x, xh, FrequencyMode::magnitude, &g);
  CHECK(check([&] { return frequency_l1(x, xh, FrequencyMode::magnitude); }, g) <= 1e-4);
  distortion_loss(x, xh, LossConfig{}, &g);
  CHECK(check([&] { return distortion_loss(x, xh, LossConfig{}).total; }, g) <= 1e-4);
}
