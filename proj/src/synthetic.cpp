#include "nerv360/synthetic.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "nerv360/geometry.hpp"

namespace nerv360 {

namespace {

struct Blob {
  double lon0, lat0, lon_speed, lat_amp, radius;
  double color[3];
};

}  // namespace

VideoDataset synthetic_video(std::int64_t frames, Index height, Index width, std::uint64_t seed, double fps) {
  if (frames < 1 || height < 2 || width < 2) throw std::invalid_argument("synthetic_video: bad size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Blob> blobs(5);
  for (auto& b : blobs) {
    b.lon0 = (2.0 * u(rng) - 1.0) * kPi;
    b.lat0 = (u(rng) - 0.5) * 0.8 * kPi;
    b.lon_speed = (u(rng) - 0.5) * 1.2;
    b.lat_amp = 0.4 * u(rng);
    b.radius = 0.3 + 0.3 * u(rng);
    for (double& c : b.color) c = u(rng);
  }
  const double phase[3] = {u(rng) * 2 * kPi, u(rng) * 2 * kPi, u(rng) * 2 * kPi};

  VideoDataset video;
  video.fps = fps;
  video.source = "synthetic";
  for (std::int64_t t = 0; t < frames; ++t) {
    Frame f(3, height, width);
    const double drift = 0.8 * static_cast<double>(t);
    for (Index y = 0; y < height; ++y) {
      const double lat = (0.5 - (static_cast<double>(y) + 0.5) / static_cast<double>(height)) * kPi;
      for (Index x = 0; x < width; ++x) {
        const double lon = ((static_cast<double>(x) + 0.5) / static_cast<double>(width) - 0.5) * 2.0 * kPi;
        double rgb[3];
        for (int c = 0; c < 3; ++c) {
          rgb[c] = 0.5 + 0.22 * std::sin(2.0 * lon + drift + phase[c]) * std::cos(lat) +
                   0.18 * std::cos(3.0 * lat + 0.5 * drift + phase[c]) +
                   0.15 * std::sin(1.1 * static_cast<double>(t) + phase[c]);
        }
        for (const auto& b : blobs) {
          const double blon = b.lon0 + b.lon_speed * static_cast<double>(t);
          const double blat = b.lat0 + b.lat_amp * std::sin(0.7 * static_cast<double>(t));
          const double cosd = std::sin(lat) * std::sin(blat) + std::cos(lat) * std::cos(blat) * std::cos(lon - blon);
          const double d = std::acos(std::clamp(cosd, -1.0, 1.0));
          const double w = std::exp(-0.5 * (d * d) / (b.radius * b.radius));
          for (int c = 0; c < 3; ++c) rgb[c] = (1.0 - w) * rgb[c] + w * b.color[c];
        }
        for (int c = 0; c < 3; ++c) f(c, y, x) = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
      }
    }
    video.frames.push_back(std::move(f));
  }
  return video;
}

Trajectory synthetic_trajectory(std::int64_t frames, double phi_amplitude_deg) {
  Trajectory tr;
  for (std::int64_t t = 0; t < frames; ++t) {
    const double s = frames > 1 ? static_cast<double>(t) / static_cast<double>(frames) : 0.0;
    tr.entries.push_back({t, wrap_longitude(-kPi + 2.0 * kPi * s),
                          degrees_to_radians(phi_amplitude_deg) * std::sin(2.0 * kPi * s)});
  }
  return tr;
}

Frame mean_frame(const VideoDataset& video) {
  if (video.frames.empty()) throw std::invalid_argument("mean_frame: empty video");
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(video.frames.front().size());
  for (const auto& f : video.frames) {
    require_shape(f, video.frame_shape(), "mean_frame");
    acc += f.array().cast<double>();
  }
  Frame out(video.frame_shape());
  out.array() = (acc / static_cast<double>(video.frames.size())).cast<float>();
  return out;
}

}  // namespace nerv360
