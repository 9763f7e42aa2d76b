#include "nerv360/checkpoint.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>

namespace nerv360 {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'N', '3', '6', '0', 'C', 'K', 'P', 'T'};
constexpr std::size_t kDigestBytes = 32;
constexpr std::size_t kPreamble = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::array<std::uint8_t, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::array<std::uint8_t, sizeof(T)> bytes;
  std::copy(p, p + sizeof(T), bytes.begin());
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

std::array<std::uint8_t, kDigestBytes> sha256(const void* data, std::size_t size) {
  std::array<std::uint8_t, kDigestBytes> out{};
  unsigned int len = 0;
  if (EVP_Digest(data, size, out.data(), &len, EVP_sha256(), nullptr) != 1 || len != kDigestBytes) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  return out;
}

std::string hex(const std::uint8_t* p, std::size_t n) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(digits[p[i] >> 4]);
    s.push_back(digits[p[i] & 15]);
  }
  return s;
}

// Collects float arrays into the payload and their table entries.
class PayloadWriter {
 public:
  void add(const std::string& name, const float* data, std::vector<Index> shape) {
    Index count = 1;
    for (Index d : shape) count *= d;
    table_.push_back({{"name", name}, {"shape", shape}, {"offset", payload_.size()}, {"count", count}});
    payload_.reserve(payload_.size() + count * sizeof(float));
    for (Index i = 0; i < count; ++i) put_le(payload_, data[i]);
  }
  json table() const { return table_; }
  const std::vector<std::uint8_t>& payload() const { return payload_; }

 private:
  json table_ = json::array();
  std::vector<std::uint8_t> payload_;
};

struct ArrayRef {
  std::vector<Index> shape;
  std::size_t offset = 0;
  Index count = 0;
};

class PayloadReader {
 public:
  PayloadReader(const json& table, const std::uint8_t* data, std::size_t size) : data_(data) {
    for (const auto& e : table) {
      ArrayRef ref{e.at("shape").get<std::vector<Index>>(), e.at("offset").get<std::size_t>(),
                   e.at("count").get<Index>()};
      Index expect = 1;
      for (Index d : ref.shape) expect *= d;
      if (expect != ref.count || ref.offset + ref.count * sizeof(float) > size) {
        throw ChecksumError("array table entry '" + e.at("name").get<std::string>() +
                            "' is inconsistent with the payload");
      }
      arrays_.emplace(e.at("name").get<std::string>(), std::move(ref));
    }
  }

  bool has(const std::string& name) const { return arrays_.count(name) != 0; }

  void read(const std::string& name, float* out, const std::vector<Index>& shape) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw std::runtime_error("checkpoint is missing array '" + name + "'");
    if (it->second.shape != shape) {
      throw std::runtime_error("checkpoint array '" + name + "' has an unexpected shape");
    }
    const std::uint8_t* p = data_ + it->second.offset;
    for (Index i = 0; i < it->second.count; ++i) out[i] = get_le<float>(p + i * sizeof(float));
  }

  std::size_t size() const { return arrays_.size(); }

 private:
  const std::uint8_t* data_;
  std::map<std::string, ArrayRef> arrays_;
};

std::vector<Index> dims(const RowMatrix<float>& m) { return {m.rows(), m.cols()}; }
std::vector<Index> dims(const Shape& s) { return {s.channels, s.height, s.width}; }

json shape_json(const Shape& s) { return {s.channels, s.height, s.width}; }

Shape shape_from_json(const json& j) {
  const auto v = j.get<std::vector<Index>>();
  if (v.size() != 3) throw std::runtime_error("shape must have three dims");
  return {v[0], v[1], v[2]};
}

}  // namespace

VersionError::VersionError(std::uint32_t found_, std::uint32_t supported_)
    : std::runtime_error("checkpoint format version " + std::to_string(found_) +
                         " is not supported (this build reads version " +
                         std::to_string(supported_) + ")"),
      found(found_),
      supported(supported_) {}

std::string sha256_hex(const void* data, std::size_t size) {
  const auto d = sha256(data, size);
  return hex(d.data(), d.size());
}

std::vector<Frame> compute_embeddings(const Model<float>& model, const VideoDataset& video) {
  std::vector<Frame> out;
  out.reserve(video.frames.size());
  for (const auto& f : video.frames) out.push_back(model.encode(f));
  return out;
}

std::string save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (!(ckpt.config.model == ckpt.model.config())) {
    throw std::invalid_argument("checkpoint config does not match the model config");
  }
  PayloadWriter payload;
  const auto params = ckpt.model.parameters();
  for (const auto* p : params) payload.add("param/" + p->name, p->value.data(), dims(p->value));
  json optimizer = nullptr;
  if (ckpt.optimizer) {
    const auto& opt = *ckpt.optimizer;
    if (!opt.slots.empty() && opt.slots.size() != params.size()) {
      throw std::invalid_argument("optimizer state does not match the parameter list");
    }
    optimizer = {{"step", opt.step}, {"slots", opt.slots.size()}};
    for (std::size_t i = 0; i < opt.slots.size(); ++i) {
      const auto& s = opt.slots[i];
      const std::string base = "adan/" + params[i]->name;
      payload.add(base + "/m", s.first_moment.data(), dims(s.first_moment));
      payload.add(base + "/v", s.diff_moment.data(), dims(s.diff_moment));
      payload.add(base + "/n", s.second_moment.data(), dims(s.second_moment));
      payload.add(base + "/g", s.previous_grad.data(), dims(s.previous_grad));
    }
  }
  for (std::size_t t = 0; t < ckpt.embeddings.size(); ++t) {
    const auto& e = ckpt.embeddings[t];
    payload.add("embedding/" + std::to_string(t), e.data(), dims(e.shape()));
  }

  json header = {{"config", to_json(ckpt.config)},
                 {"meta",
                  {{"frame_count", ckpt.meta.frame_count},
                   {"fps", ckpt.meta.fps},
                   {"frame_shape", shape_json(ckpt.meta.frame_shape)}}},
                 {"dtype", "float32"},
                 {"optimizer", optimizer},
                 {"embeddings", ckpt.embeddings.size()},
                 {"arrays", payload.table()}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> bytes(kMagic, kMagic + sizeof(kMagic));
  put_le<std::uint32_t>(bytes, kCheckpointVersion);
  put_le<std::uint64_t>(bytes, text.size());
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.insert(bytes.end(), payload.payload().begin(), payload.payload().end());
  const auto digest = sha256(bytes.data(), bytes.size());
  bytes.insert(bytes.end(), digest.begin(), digest.end());

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
  return hex(digest.data(), digest.size());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) || !std::equal(kMagic, kMagic + sizeof(kMagic), bytes.begin())) {
    throw ChecksumError(path.string() + " is not a checkpoint file");
  }
  if (bytes.size() < kPreamble + kDigestBytes) throw ChecksumError(path.string() + " is truncated");
  const auto version = get_le<std::uint32_t>(bytes.data() + sizeof(kMagic));
  if (version != kCheckpointVersion) throw VersionError(version, kCheckpointVersion);

  const std::size_t body = bytes.size() - kDigestBytes;
  const auto digest = sha256(bytes.data(), body);
  if (!std::equal(digest.begin(), digest.end(), bytes.begin() + body)) {
    throw ChecksumError(path.string() + ": digest mismatch (file corrupted or truncated)");
  }
  const auto header_len = get_le<std::uint64_t>(bytes.data() + sizeof(kMagic) + 4);
  if (header_len > body - kPreamble) throw ChecksumError(path.string() + ": bad header length");

  const json header = json::parse(bytes.begin() + kPreamble, bytes.begin() + kPreamble + header_len);
  if (header.at("dtype") != "float32") throw std::runtime_error("unsupported checkpoint dtype");
  const std::uint8_t* payload = bytes.data() + kPreamble + header_len;
  const PayloadReader reader(header.at("arrays"), payload, body - kPreamble - header_len);

  RunConfig config = run_config_from_json(header.at("config"));
  Checkpoint ckpt{config, {}, Model<float>(config.model), std::nullopt, {}, hex(digest.data(), digest.size())};
  const auto& meta = header.at("meta");
  ckpt.meta.frame_count = meta.at("frame_count").get<std::int64_t>();
  ckpt.meta.fps = meta.at("fps").get<double>();
  ckpt.meta.frame_shape = shape_from_json(meta.at("frame_shape"));

  auto params = ckpt.model.parameters();
  for (auto* p : params) reader.read("param/" + p->name, p->value.data(), dims(p->value));

  if (const auto& opt = header.at("optimizer"); !opt.is_null()) {
    OptState<float> state;
    state.step = opt.at("step").get<std::int64_t>();
    const auto slots = opt.at("slots").get<std::size_t>();
    if (slots != 0 && slots != params.size()) throw std::runtime_error("optimizer slot count mismatch");
    state.slots.resize(slots);
    for (std::size_t i = 0; i < slots; ++i) {
      auto& s = state.slots[i];
      const auto shape = dims(params[i]->value);
      for (auto* m : {&s.first_moment, &s.diff_moment, &s.second_moment, &s.previous_grad}) {
        m->resize(shape[0], shape[1]);
      }
      const std::string base = "adan/" + params[i]->name;
      reader.read(base + "/m", s.first_moment.data(), shape);
      reader.read(base + "/v", s.diff_moment.data(), shape);
      reader.read(base + "/n", s.second_moment.data(), shape);
      reader.read(base + "/g", s.previous_grad.data(), shape);
    }
    ckpt.optimizer = std::move(state);
  }

  const auto count = header.at("embeddings").get<std::size_t>();
  const Shape embedding = ckpt.model.embedding_shape(ckpt.meta.frame_shape);
  for (std::size_t t = 0; t < count; ++t) {
    Frame e(embedding);
    reader.read("embedding/" + std::to_string(t), e.data(), dims(embedding));
    ckpt.embeddings.push_back(std::move(e));
  }
  return ckpt;
}

void append_log_record(std::ostream& out, const EpochLog& log) {
  const json j = {{"epoch", log.epoch},   {"loss", log.mean_loss}, {"psnr", log.mean_psnr},
                  {"lr", log.lr},         {"seconds", log.seconds},
                  {"rejected_steps", log.rejected_steps}};
  out << j.dump() << '\n';
  out.flush();
}

std::vector<EpochLog> read_training_log(std::istream& in) {
  std::vector<EpochLog> logs;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EpochLog e;
      e.epoch = j.at("epoch").get<int>();
      e.mean_loss = j.at("loss").get<double>();
      e.mean_psnr = j.at("psnr").get<double>();
      e.lr = j.at("lr").get<double>();
      e.seconds = j.value("seconds", 0.0);
      e.rejected_steps = j.value("rejected_steps", 0);
      logs.push_back(e);
    } catch (const json::exception& e) {
      throw FormatError(e.what(), n);
    }
  }
  return logs;
}

}  // namespace nerv360
