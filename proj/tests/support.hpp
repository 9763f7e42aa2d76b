#pragma once

#include <Eigen/Geometry>

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nerv360/geometry.hpp"
#include "nerv360/tensor.hpp"

namespace testing {

using nerv360::Index;
using nerv360::Shape;
using nerv360::Tensor;

template <typename S>
Tensor<S> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<S> t(shape);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(u(rng));
  return t;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

// Central differences of f with respect to x[i] for each i in `indices`.
inline Eigen::VectorXd numeric_gradient(double* x, const std::vector<Index>& indices,
                                        const std::function<double()>& f, double h = 1e-6) {
  Eigen::VectorXd g(static_cast<Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    double& v = x[indices[k]];
    const double saved = v;
    v = saved + h;
    const double fp = f();
    v = saved - h;
    const double fm = f();
    v = saved;
    g(static_cast<Index>(k)) = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline std::vector<Index> all_indices(Index n) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

inline std::vector<Index> sample_indices(Index n, Index count, std::mt19937_64& rng) {
  if (count >= n) return all_indices(n);
  std::vector<Index> idx = all_indices(n);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

// Source coordinates for one viewport pixel from an explicit rotation matrix:
// yaw about +y by theta, then pitch about the camera's right axis by phi.
struct Coord {
  double u;
  double v;
};

inline Coord grid_oracle(double theta, double phi, const nerv360::ViewportSpec& spec, Index src_h,
                         Index src_w, Index row, Index col) {
  const double pi = nerv360::kPi;
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(-phi, Eigen::Vector3d::UnitX()))
                                .toRotationMatrix();
  const double tx = std::tan(spec.hfov / 2.0);
  const double ty = tx * static_cast<double>(spec.out_h) / static_cast<double>(spec.out_w);
  const Eigen::Vector3d ray((2.0 * (static_cast<double>(col) + 0.5) / static_cast<double>(spec.out_w) - 1.0) * tx,
                            (1.0 - 2.0 * (static_cast<double>(row) + 0.5) / static_cast<double>(spec.out_h)) * ty,
                            1.0);
  const Eigen::Vector3d d = r * ray;
  const double lon = std::atan2(d.x(), d.z());
  const double lat = std::atan2(d.y(), std::sqrt(d.x() * d.x() + d.z() * d.z()));
  double v = (0.5 - lat / pi) * static_cast<double>(src_h) - 0.5;
  v = std::min(std::max(v, -0.5), static_cast<double>(src_h) - 0.5);
  return {(lon + pi) / (2.0 * pi) * static_cast<double>(src_w) - 0.5, v};
}

// Naive O(N^2) 2D DFT of one real plane (row-major h x w).
inline std::vector<std::complex<double>> brute_dft(const std::vector<double>& x, Index h, Index w) {
  const double pi = nerv360::kPi;
  std::vector<std::complex<double>> out(static_cast<std::size_t>(h * w));
  for (Index ky = 0; ky < h; ++ky) {
    for (Index kx = 0; kx < w; ++kx) {
      std::complex<double> acc = 0.0;
      for (Index y = 0; y < h; ++y) {
        for (Index xx = 0; xx < w; ++xx) {
          const double a = -2.0 * pi * (static_cast<double>(ky * y) / static_cast<double>(h) +
                                        static_cast<double>(kx * xx) / static_cast<double>(w));
          acc += x[static_cast<std::size_t>(y * w + xx)] * std::polar(1.0, a);
        }
      }
      out[static_cast<std::size_t>(ky * w + kx)] = acc;
    }
  }
  return out;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("nerv360-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
