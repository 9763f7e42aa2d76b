#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "nerv360/tensor.hpp"

namespace nerv360 {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parse failure with a 1-based line number (0 when not line-oriented).
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

using Frame = Tensor<float>;

// ---------------------------------------------------------------- images

// 8-bit RGB PNG (gray and alpha are converted) to (3, H, W) in [0, 1].
Frame read_png(const std::filesystem::path& path);
// Values are clamped to [0, 1] and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Frame& image);
std::vector<std::uint8_t> encode_png(const Frame& image);
std::vector<std::uint8_t> encode_jpeg(const Frame& image, int quality = 90);

// ----------------------------------------------------------------- video

struct VideoDataset {
  std::vector<Frame> frames;
  double fps = 30.0;
  std::filesystem::path source;

  std::int64_t size() const { return static_cast<std::int64_t>(frames.size()); }
  Shape frame_shape() const { return frames.empty() ? Shape{} : frames.front().shape(); }
};

// A directory of numerically ordered PNG frames or a single .y4m file.
// Frame dims must match and be divisible by `divisor`.
VideoDataset load_video(const std::filesystem::path& path, Index divisor = 24);

// Writes frame_000000.png, frame_000001.png, ...
void save_png_sequence(const std::filesystem::path& dir, const std::vector<Frame>& frames);

// 8-bit 4:2:0 / 4:2:2 / 4:4:4 / mono YUV4MPEG2, BT.601 limited range.
VideoDataset read_y4m(const std::filesystem::path& path);
void write_y4m(const std::filesystem::path& path, const std::vector<Frame>& frames, double fps);

// ------------------------------------------------------------ trajectory

struct TrajectoryEntry {
  std::int64_t frame = 0;
  double theta = 0.0;  // radians
  double phi = 0.0;    // radians
};

struct Trajectory {
  std::vector<TrajectoryEntry> entries;
};

// CSV with header `frame,theta_deg,phi_deg`; degrees on disk, radians in memory.
Trajectory parse_trajectory(std::istream& in);
Trajectory load_trajectory(const std::filesystem::path& path);
void write_trajectory(std::ostream& out, const Trajectory& trajectory);
void save_trajectory(const std::filesystem::path& path, const Trajectory& trajectory);

}  // namespace nerv360
