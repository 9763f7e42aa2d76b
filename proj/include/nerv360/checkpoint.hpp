#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nerv360/config.hpp"
#include "nerv360/io.hpp"
#include "nerv360/model.hpp"
#include "nerv360/optim.hpp"
#include "nerv360/trainer.hpp"

namespace nerv360 {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class ChecksumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
 public:
  VersionError(std::uint32_t found, std::uint32_t supported);
  std::uint32_t found;
  std::uint32_t supported;
};

struct VideoMeta {
  std::int64_t frame_count = 0;
  double fps = 30.0;
  Shape frame_shape;
};

struct Checkpoint {
  RunConfig config;  // model.c2 is always resolved
  VideoMeta meta;
  Model<float> model;
  std::optional<OptState<float>> optimizer;
  std::vector<Frame> embeddings;  // one per frame, or empty
  std::string digest;             // hex SHA-256 of the file body; set by save and load
};

// Embeddings of every frame, for decode-only use.
std::vector<Frame> compute_embeddings(const Model<float>& model, const VideoDataset& video);

// Layout: "N360CKPT", u32 version, u64 header length, JSON header (config,
// meta, array table), little-endian float32 payload, 32-byte SHA-256 of all
// preceding bytes. Writes to a temporary file and renames it into place.
// Returns the digest.
std::string save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Throws VersionError for a different format version and ChecksumError for a
// corrupted or truncated file; nothing is returned on failure.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// One JSON object per line: epoch, loss, psnr, lr, seconds, rejected_steps.
void append_log_record(std::ostream& out, const EpochLog& log);
std::vector<EpochLog> read_training_log(std::istream& in);

std::string sha256_hex(const void* data, std::size_t size);

}  // namespace nerv360
