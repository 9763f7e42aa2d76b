#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "nerv360/checkpoint.hpp"

namespace nerv360::service {

enum class ImageFormat { png, jpeg };
ImageFormat parse_image_format(const std::string& s);
const char* to_string(ImageFormat f);

// Bad request from the client (4xx / error message with the cause).
class ClientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No checkpoint loaded (503).
class Unavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ViewRequest {
  std::int64_t t = 0;
  double theta_deg = 0.0;
  double phi_deg = 0.0;
  std::int64_t req_id = 0;
};

struct DecodedImage {
  std::vector<std::uint8_t> bytes;
  ImageFormat format = ImageFormat::png;
  Index width = 0;
  Index height = 0;
  double decode_ms = 0.0;
};

// ------------------------------------------------------------ wire format

// Parses {type:"view", t, theta_deg, phi_deg, req_id}. Throws ClientError;
// `req_id` is filled in whenever it could be read.
ViewRequest parse_view_message(const std::string& text, std::int64_t* req_id = nullptr);
std::string frame_message(std::int64_t req_id, const DecodedImage& image);
std::string superseded_message(std::int64_t req_id);
std::string error_message(std::int64_t req_id, const std::string& message);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// --------------------------------------------------------------- state

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  std::filesystem::path path;
  std::uint64_t id = 0;
};

// Shared, read-mostly serving state. Decodes take a snapshot of the active
// checkpoint so a hot swap never disturbs requests already running.
class ServiceCore {
 public:
  explicit ServiceCore(ImageFormat format = ImageFormat::png, int jpeg_quality = 90);

  // Requires cached embeddings in the checkpoint; throws ClientError otherwise.
  void load(const std::filesystem::path& path);
  // Takes ownership of an in-memory checkpoint (tests, tools).
  void install(Checkpoint ckpt, const std::filesystem::path& path = {});

  bool loaded() const;
  std::shared_ptr<const LoadedCheckpoint> snapshot() const;
  nlohmann::json meta() const;  // throws Unavailable
  DecodedImage decode(const ViewRequest& request) const;

  ImageFormat format() const { return format_; }

 private:
  ImageFormat format_;
  int jpeg_quality_;
  mutable std::shared_mutex mutex_;
  std::shared_ptr<const LoadedCheckpoint> active_;
  std::uint64_t next_id_ = 1;
};

// Newest-wins request slot for one session: at most one item in flight and
// one pending. A newer submission replaces the pending one, which is
// reported back as superseded.
template <typename T>
class Coalescer {
 public:
  struct Submission {
    std::optional<T> start;       // begin decoding this now
    std::optional<T> superseded;  // drop and acknowledge this one
  };

  Submission submit(T item) {
    std::lock_guard lock(mutex_);
    Submission s;
    if (!busy_) {
      busy_ = true;
      s.start = std::move(item);
    } else {
      s.superseded = std::exchange(pending_, std::move(item));
    }
    return s;
  }

  // Marks the in-flight item done; returns the next one to start, if any.
  std::optional<T> finish() {
    std::lock_guard lock(mutex_);
    std::optional<T> next = std::exchange(pending_, std::nullopt);
    busy_ = next.has_value();
    return next;
  }

  bool busy() const {
    std::lock_guard lock(mutex_);
    return busy_;
  }

 private:
  mutable std::mutex mutex_;
  bool busy_ = false;
  std::optional<T> pending_;
};

// Bounded window of recent decode times.
class LatencyWindow {
 public:
  explicit LatencyWindow(std::size_t capacity = 64) : capacity_(capacity) {}
  void add(double ms);
  std::size_t size() const { return samples_.size(); }
  double mean() const;

 private:
  std::size_t capacity_;
  std::deque<double> samples_;
};

// ------------------------------------------------------------- network

// HTTP: GET /meta, POST /checkpoint {"path": ...}. WebSocket at /ws speaking
// the view/frame/superseded/error messages.
class Server {
 public:
  Server(ServiceCore& core, std::uint16_t port, int io_threads = 1, int decode_threads = 0);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const;  // actual port (useful when constructed with 0)
  void stop();
  void wait();  // blocks until stop()

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace nerv360::service
