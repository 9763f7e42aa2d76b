#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "nerv360/checkpoint.hpp"
#include "nerv360/io.hpp"

namespace nerv360 {

enum class DecodeMode { viewport, fullframe };

DecodeMode parse_decode_mode(const std::string& s);
const char* to_string(DecodeMode m);

// Full-frame decode of the whole panorama with the same weights and the same
// (t, theta, phi) conditioning, followed by pixel-space viewport extraction.
Frame decode_fullframe_baseline(const Model<float>& model, const Frame& embedding,
                                const ViewState& state, const ViewportSpec& spec,
                                std::int64_t num_frames);

// Decode-side viewport path from a cached embedding.
Frame decode_viewport_path(const Model<float>& model, const Frame& embedding,
                           const ViewState& state, const ViewportSpec& spec,
                           std::int64_t num_frames);

struct BenchOptions {
  DecodeMode mode = DecodeMode::viewport;
  int warmup_iters = 10;
  int timed_iters = 50;
  std::optional<ViewportSpec> viewport;  // defaults to the training viewport
  std::size_t memory_limit = 0;          // bytes of activations; 0 = unlimited
  bool cross_mode_psnr = true;
};

enum class BenchStatus { ok, out_of_memory, unavailable };
const char* to_string(BenchStatus s);

struct BenchReport {
  DecodeMode mode = DecodeMode::viewport;
  BenchStatus status = BenchStatus::ok;
  std::string message;
  Shape frame_shape;
  ViewportSpec viewport;
  int warmup_iters = 0;
  int timed_iters = 0;
  double fps_mean = 0.0;
  double fps_median = 0.0;
  double latency_ms_median = 0.0;
  double latency_ms_p90 = 0.0;
  std::size_t activation_peak_bytes = 0;
  std::size_t parameter_bytes = 0;
  std::size_t peak_bytes = 0;  // activation peak + parameters
  std::optional<double> cross_mode_psnr;
  std::string checkpoint_digest;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

// Needs cached embeddings in the checkpoint. Allocation failures under the
// memory limit come back as BenchStatus::out_of_memory.
BenchReport run_benchmark(const Checkpoint& ckpt, const Trajectory& trajectory,
                          const BenchOptions& options);

// One benchmark per machine at a time: an in-process mutex plus flock() on a
// lock file (NERV360_LOCK_FILE, default /tmp/nerv360-device.lock).
class DeviceLock {
 public:
  DeviceLock();
  explicit DeviceLock(const std::filesystem::path& lock_file);
  ~DeviceLock();
  DeviceLock(const DeviceLock&) = delete;
  DeviceLock& operator=(const DeviceLock&) = delete;

 private:
  std::unique_lock<std::mutex> local_;
  int fd_ = -1;
};

}  // namespace nerv360
