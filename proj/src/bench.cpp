#include "nerv360/bench.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <iomanip>
#include <new>
#include <sstream>
#include <vector>

#include "nerv360/memory.hpp"

namespace nerv360 {

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "viewport") return DecodeMode::viewport;
  if (s == "fullframe") return DecodeMode::fullframe;
  throw std::invalid_argument("unknown decode mode '" + s + "' (viewport|fullframe)");
}

const char* to_string(DecodeMode m) { return m == DecodeMode::viewport ? "viewport" : "fullframe"; }

const char* to_string(BenchStatus s) {
  switch (s) {
    case BenchStatus::ok: return "ok";
    case BenchStatus::out_of_memory: return "out_of_memory";
    case BenchStatus::unavailable: return "unavailable";
  }
  return "?";
}

namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::mutex& device_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Frame decode_fullframe_baseline(const Model<float>& model, const Frame& embedding,
                                const ViewState& state, const ViewportSpec& spec,
                                std::int64_t num_frames) {
  const NormalizedView view = normalize_view(state, num_frames);
  Frame full;
  {
    const Frame expanded = model.expand_channels(embedding, view.t);
    full = model.decode_viewport(expanded, view);
  }
  return extract_viewport(full, state.theta, state.phi, spec);
}

Frame decode_viewport_path(const Model<float>& model, const Frame& embedding,
                           const ViewState& state, const ViewportSpec& spec,
                           std::int64_t num_frames) {
  return model.render_viewport(embedding, state, spec, num_frames);
}

BenchReport run_benchmark(const Checkpoint& ckpt, const Trajectory& trajectory,
                          const BenchOptions& options) {
  BenchReport report;
  report.mode = options.mode;
  report.frame_shape = ckpt.meta.frame_shape;
  report.viewport = options.viewport.value_or(ckpt.config.train.viewport);
  report.warmup_iters = options.warmup_iters;
  report.timed_iters = options.timed_iters;
  report.parameter_bytes = ckpt.model.parameter_bytes();
  report.checkpoint_digest = ckpt.digest;

  if (options.warmup_iters < 0 || options.timed_iters < 1) {
    throw std::invalid_argument("need warmup_iters >= 0 and timed_iters >= 1");
  }
  if (trajectory.entries.empty()) throw std::invalid_argument("trajectory is empty");
  if (ckpt.embeddings.empty()) {
    report.status = BenchStatus::unavailable;
    report.message = "checkpoint has no cached embeddings";
    return report;
  }
  const auto n = static_cast<std::int64_t>(ckpt.embeddings.size());
  for (const auto& e : trajectory.entries) {
    if (e.frame >= n) {
      throw std::out_of_range("trajectory frame " + std::to_string(e.frame) +
                              " is outside the checkpoint's " + std::to_string(n) + " frames");
    }
  }
  try {
    report.viewport.validate();
    report.viewport.downscaled(ckpt.model.config().stride_product());
  } catch (const std::exception& e) {
    report.status = BenchStatus::unavailable;
    report.message = e.what();
    return report;
  }

  auto decode = [&](const TrajectoryEntry& e, DecodeMode mode) {
    const ViewState state = ViewState::make(e.frame, e.theta, e.phi);
    const Frame& y = ckpt.embeddings[static_cast<std::size_t>(e.frame)];
    return mode == DecodeMode::viewport
               ? decode_viewport_path(ckpt.model, y, state, report.viewport, ckpt.meta.frame_count)
               : decode_fullframe_baseline(ckpt.model, y, state, report.viewport,
                                           ckpt.meta.frame_count);
  };
  const auto& entries = trajectory.entries;
  std::vector<double> latencies;
  const std::size_t base = memory::current_bytes();
  try {
    memory::LimitGuard guard(options.memory_limit ? base + options.memory_limit : 0);
    for (int i = 0; i < options.warmup_iters; ++i) decode(entries[i % entries.size()], options.mode);
    memory::reset_peak();
    for (int i = 0; i < options.timed_iters; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const Frame out = decode(entries[(options.warmup_iters + i) % entries.size()], options.mode);
      latencies.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    report.activation_peak_bytes = memory::peak_bytes() - base;
  } catch (const std::bad_alloc&) {
    report.status = BenchStatus::out_of_memory;
    report.message = "allocation failed under the memory limit";
    report.activation_peak_bytes = memory::peak_bytes() - base;
    return report;
  }
  report.peak_bytes = report.activation_peak_bytes + report.parameter_bytes;

  double total = 0.0;
  for (double s : latencies) total += s;
  report.fps_mean = static_cast<double>(latencies.size()) / total;
  report.latency_ms_median = 1e3 * percentile(latencies, 0.5);
  report.latency_ms_p90 = 1e3 * percentile(latencies, 0.9);
  report.fps_median = 1e3 / report.latency_ms_median;

  if (options.cross_mode_psnr) {
    try {
      const auto& e = entries.front();
      report.cross_mode_psnr =
          psnr(decode(e, DecodeMode::viewport), decode(e, DecodeMode::fullframe));
    } catch (const std::bad_alloc&) {
      report.cross_mode_psnr.reset();
    }
  }
  return report;
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json j = {
      {"mode", nerv360::to_string(mode)},
      {"status", nerv360::to_string(status)},
      {"frame_shape", {frame_shape.channels, frame_shape.height, frame_shape.width}},
      {"viewport",
       {{"hfov_deg", radians_to_degrees(viewport.hfov)},
        {"out_h", viewport.out_h},
        {"out_w", viewport.out_w}}},
      {"warmup_iters", warmup_iters},
      {"timed_iters", timed_iters},
      {"fps_mean", fps_mean},
      {"fps_median", fps_median},
      {"latency_ms_median", latency_ms_median},
      {"latency_ms_p90", latency_ms_p90},
      {"activation_peak_bytes", activation_peak_bytes},
      {"parameter_bytes", parameter_bytes},
      {"peak_bytes", peak_bytes},
      {"peak_mib", static_cast<double>(peak_bytes) / (1024.0 * 1024.0)},
      {"cross_mode_psnr_db", cross_mode_psnr ? nlohmann::json(*cross_mode_psnr) : nlohmann::json()},
      {"checkpoint_digest", checkpoint_digest}};
  if (!message.empty()) j["message"] = message;
  return j;
}

std::string BenchReport::to_table() const {
  std::ostringstream s;
  auto row = [&](const std::string& k, const std::string& v) {
    s << std::left << std::setw(22) << k << v << '\n';
  };
  auto num = [](double v, int prec) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << v;
    return o.str();
  };
  row("mode", nerv360::to_string(mode));
  row("status", nerv360::to_string(status) + (message.empty() ? "" : " (" + message + ")"));
  row("frame", to_string(frame_shape));
  row("viewport", std::to_string(viewport.out_h) + "x" + std::to_string(viewport.out_w) + " @ " +
                      num(radians_to_degrees(viewport.hfov), 1) + " deg");
  row("iterations", std::to_string(warmup_iters) + " warmup + " + std::to_string(timed_iters) + " timed");
  if (status == BenchStatus::ok) {
    row("fps (median)", num(fps_median, 2));
    row("fps (mean)", num(fps_mean, 2));
    row("latency p50 / p90", num(latency_ms_median, 2) + " / " + num(latency_ms_p90, 2) + " ms");
    row("peak memory", num(static_cast<double>(peak_bytes) / (1024.0 * 1024.0), 2) + " MiB");
    row("  activations", num(static_cast<double>(activation_peak_bytes) / (1024.0 * 1024.0), 2) + " MiB");
    row("  parameters", num(static_cast<double>(parameter_bytes) / (1024.0 * 1024.0), 2) + " MiB");
    row("cross-mode psnr", cross_mode_psnr ? num(*cross_mode_psnr, 2) + " dB" : "n/a");
  }
  return s.str();
}

DeviceLock::DeviceLock()
    : DeviceLock([] {
        const char* env = std::getenv("NERV360_LOCK_FILE");
        return std::filesystem::path(env && *env ? env : "/tmp/nerv360-device.lock");
      }()) {}

DeviceLock::DeviceLock(const std::filesystem::path& lock_file) : local_(device_mutex()) {
  fd_ = ::open(lock_file.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0666);
  if (fd_ < 0) throw IoError("cannot open lock file " + lock_file.string() + ": " + std::strerror(errno));
  while (::flock(fd_, LOCK_EX) != 0) {
    if (errno != EINTR) {
      ::close(fd_);
      throw IoError("cannot lock " + lock_file.string() + ": " + std::strerror(errno));
    }
  }
}

DeviceLock::~DeviceLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace nerv360
