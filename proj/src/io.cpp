#include "nerv360/io.hpp"

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <charconv>
#include <csetjmp>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nerv360/geometry.hpp"

namespace nerv360 {
namespace {

std::vector<std::uint8_t> to_rgb8(const Frame& image) {
  if (image.channels() != 3) throw ShapeError("expected a 3-channel image, got " + to_string(image.shape()));
  const Index n = image.pixels();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(3 * n));
  for (Index c = 0; c < 3; ++c) {
    const float* src = image.data() + c * n;
    for (Index k = 0; k < n; ++k) {
      const float v = std::clamp(src[k], 0.0f, 1.0f);
      rgb[3 * k + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return rgb;
}

Frame from_rgb8(const std::uint8_t* rgb, Index height, Index width) {
  Frame out(3, height, width);
  const Index n = height * width;
  for (Index c = 0; c < 3; ++c) {
    float* dst = out.data() + c * n;
    for (Index k = 0; k < n; ++k) dst[k] = static_cast<float>(rgb[3 * k + c]) / 255.0f;
  }
  return out;
}

png_image png_header(const Frame& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = PNG_FORMAT_RGB;
  return png;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// Trailing integer in a file stem, or -1.
long long frame_number(const std::filesystem::path& p) {
  const std::string stem = p.stem().string();
  std::size_t end = stem.size();
  std::size_t begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(stem[begin - 1]))) --begin;
  if (begin == end) return -1;
  return std::stoll(stem.substr(begin, end - begin));
}

void validate_frames(const std::vector<Frame>& frames, const std::vector<std::string>& names,
                     Index divisor) {
  if (frames.empty()) throw IoError("video contains no frames");
  const Shape first = frames.front().shape();
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].shape() != first) {
      throw IoError("frame " + names[i] + " has shape " + to_string(frames[i].shape()) +
                    ", expected " + to_string(first));
    }
  }
  if (divisor > 1 && (first.height % divisor != 0 || first.width % divisor != 0)) {
    throw IoError("frame size " + std::to_string(first.height) + "x" + std::to_string(first.width) +
                  " is not divisible by " + std::to_string(divisor));
  }
}

}  // namespace

// ---------------------------------------------------------------- images

Frame read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  return from_rgb8(rgb.data(), png.height, png.width);
}

std::vector<std::uint8_t> encode_png(const Frame& image) {
  const auto rgb = to_rgb8(image);
  png_image png = png_header(image);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Frame& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

namespace {
struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};
}  // namespace

std::vector<std::uint8_t> encode_jpeg(const Frame& image, int quality) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("JPEG quality must be in [1, 100]");
  const auto rgb = to_rgb8(image);
  jpeg_compress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = [](j_common_ptr info) {
    auto* e = reinterpret_cast<JpegError*>(info->err);
    (*info->err->format_message)(info, e->message);
    std::longjmp(e->jump, 1);
  };
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw IoError(std::string("JPEG encode failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(image.width());
  cinfo.image_height = static_cast<JDIMENSION>(image.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const auto stride = static_cast<std::size_t>(3 * image.width());
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(rgb.data() + cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

// ----------------------------------------------------------------- video

VideoDataset load_video(const std::filesystem::path& path, Index divisor) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path)) {
    if (path.extension() != ".y4m") throw IoError("unsupported video file " + path.string());
    VideoDataset video = read_y4m(path);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < video.frames.size(); ++i) {
      names.push_back(path.filename().string() + "#" + std::to_string(i));
    }
    validate_frames(video.frames, names, divisor);
    return video;
  }
  if (!fs::is_directory(path)) throw IoError("no such video: " + path.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const auto na = frame_number(a), nb = frame_number(b);
    return na != nb ? na < nb : a.filename() < b.filename();
  });
  VideoDataset video;
  video.source = path;
  std::vector<std::string> names;
  for (const auto& f : files) {
    video.frames.push_back(read_png(f));
    names.push_back(f.filename().string());
  }
  validate_frames(video.frames, names, divisor);
  return video;
}

void save_png_sequence(const std::filesystem::path& dir, const std::vector<Frame>& frames) {
  std::filesystem::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%06zu.png", i);
    write_png(dir / name, frames[i]);
  }
}

VideoDataset read_y4m(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream tokens(header);
  std::string tok;
  tokens >> tok;
  if (tok != "YUV4MPEG2") throw FormatError("not a YUV4MPEG2 file: " + path.string());
  Index width = 0, height = 0;
  double fps = 30.0;
  std::string chroma = "420jpeg";
  while (tokens >> tok) {
    switch (tok[0]) {
      case 'W': width = std::stol(tok.substr(1)); break;
      case 'H': height = std::stol(tok.substr(1)); break;
      case 'F': {
        const auto colon = tok.find(':');
        if (colon != std::string::npos) {
          const double den = std::stod(tok.substr(colon + 1));
          if (den > 0) fps = std::stod(tok.substr(1, colon - 1)) / den;
        }
        break;
      }
      case 'C': chroma = tok.substr(1); break;
      default: break;
    }
  }
  if (width < 1 || height < 1) throw FormatError("Y4M header lacks W/H: " + path.string());
  if (chroma.find("p10") != std::string::npos || chroma.find("p12") != std::string::npos ||
      chroma.find("p16") != std::string::npos) {
    throw FormatError("only 8-bit Y4M is supported, got C" + chroma);
  }
  Index cw = width, ch = height;
  bool mono = false;
  if (chroma.rfind("420", 0) == 0) {
    cw = (width + 1) / 2;
    ch = (height + 1) / 2;
  } else if (chroma.rfind("422", 0) == 0) {
    cw = (width + 1) / 2;
  } else if (chroma.rfind("444", 0) == 0) {
  } else if (chroma.rfind("mono", 0) == 0) {
    mono = true;
  } else {
    throw FormatError("unsupported Y4M chroma C" + chroma);
  }

  VideoDataset video;
  video.fps = fps;
  video.source = path;
  std::vector<std::uint8_t> y(static_cast<std::size_t>(width * height));
  std::vector<std::uint8_t> u(static_cast<std::size_t>(cw * ch)), v(u.size());
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("FRAME", 0) != 0) throw FormatError("bad Y4M frame marker in " + path.string());
    in.read(reinterpret_cast<char*>(y.data()), static_cast<std::streamsize>(y.size()));
    if (!mono) {
      in.read(reinterpret_cast<char*>(u.data()), static_cast<std::streamsize>(u.size()));
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size()));
    }
    if (!in) throw FormatError("truncated Y4M frame " + std::to_string(video.frames.size()));
    Frame f(3, height, width);
    for (Index r = 0; r < height; ++r) {
      for (Index c = 0; c < width; ++c) {
        const double luma = 1.164383 * (y[r * width + c] - 16.0);
        double cb = 0.0, cr = 0.0;
        if (!mono) {
          const Index k = (r * ch / height) * cw + (c * cw / width);
          cb = u[k] - 128.0;
          cr = v[k] - 128.0;
        }
        const double rgb[3] = {luma + 1.596027 * cr, luma - 0.391762 * cb - 0.812968 * cr,
                               luma + 2.017232 * cb};
        for (int k = 0; k < 3; ++k) f(k, r, c) = static_cast<float>(std::clamp(rgb[k] / 255.0, 0.0, 1.0));
      }
    }
    video.frames.push_back(std::move(f));
  }
  return video;
}

void write_y4m(const std::filesystem::path& path, const std::vector<Frame>& frames, double fps) {
  if (frames.empty()) throw IoError("no frames to write");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const Index h = frames.front().height(), w = frames.front().width();
  out << "YUV4MPEG2 W" << w << " H" << h << " F" << std::lround(fps * 1000) << ":1000 Ip A1:1 C444\n";
  std::vector<std::uint8_t> planes(static_cast<std::size_t>(3 * h * w));
  for (const auto& f : frames) {
    require_shape(f, Shape{3, h, w}, "write_y4m");
    for (Index k = 0; k < h * w; ++k) {
      const double r = 255.0 * std::clamp(f.data()[k], 0.0f, 1.0f);
      const double g = 255.0 * std::clamp(f.data()[h * w + k], 0.0f, 1.0f);
      const double b = 255.0 * std::clamp(f.data()[2 * h * w + k], 0.0f, 1.0f);
      const double yy = 16.0 + 0.256788 * r + 0.504129 * g + 0.097906 * b;
      const double cb = 128.0 - 0.148223 * r - 0.290993 * g + 0.439216 * b;
      const double cr = 128.0 + 0.439216 * r - 0.367788 * g - 0.071427 * b;
      planes[k] = static_cast<std::uint8_t>(std::clamp(std::lround(yy), 0L, 255L));
      planes[h * w + k] = static_cast<std::uint8_t>(std::clamp(std::lround(cb), 0L, 255L));
      planes[2 * h * w + k] = static_cast<std::uint8_t>(std::clamp(std::lround(cr), 0L, 255L));
    }
    out << "FRAME\n";
    out.write(reinterpret_cast<const char*>(planes.data()), static_cast<std::streamsize>(planes.size()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ------------------------------------------------------------ trajectory

Trajectory parse_trajectory(std::istream& in) {
  Trajectory traj;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      std::string compact;
      for (char ch : line) {
        if (!std::isspace(static_cast<unsigned char>(ch))) compact += ch;
      }
      if (compact != "frame,theta_deg,phi_deg") {
        throw FormatError("expected header 'frame,theta_deg,phi_deg'", lineno);
      }
      header = true;
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(trim(field));
    if (fields.size() != 3) {
      throw FormatError("expected 3 fields, got " + std::to_string(fields.size()), lineno);
    }
    TrajectoryEntry e;
    const auto& f0 = fields[0];
    auto [ptr, ec] = std::from_chars(f0.data(), f0.data() + f0.size(), e.frame);
    if (ec != std::errc() || ptr != f0.data() + f0.size() || e.frame < 0) {
      throw FormatError("bad frame index '" + f0 + "'", lineno);
    }
    double angles[2];
    for (int k = 0; k < 2; ++k) {
      const auto& f = fields[k + 1];
      auto [p, err] = std::from_chars(f.data(), f.data() + f.size(), angles[k]);
      if (err != std::errc() || p != f.data() + f.size() || !std::isfinite(angles[k])) {
        throw FormatError("bad angle '" + f + "'", lineno);
      }
    }
    if (!traj.entries.empty() && e.frame <= traj.entries.back().frame) {
      throw FormatError("frame " + std::to_string(e.frame) +
                            (e.frame == traj.entries.back().frame ? " is duplicated"
                                                                  : " is out of order"),
                        lineno);
    }
    e.theta = degrees_to_radians(angles[0]);
    e.phi = degrees_to_radians(angles[1]);
    traj.entries.push_back(e);
  }
  if (!header) throw FormatError("empty trajectory file");
  return traj;
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory " + path.string());
  return parse_trajectory(in);
}

void write_trajectory(std::ostream& out, const Trajectory& trajectory) {
  out << "frame,theta_deg,phi_deg\n";
  char buf[64];
  for (const auto& e : trajectory.entries) {
    out << e.frame;
    for (double rad : {e.theta, e.phi}) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), radians_to_degrees(rad));
      out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

void save_trajectory(const std::filesystem::path& path, const Trajectory& trajectory) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_trajectory(out, trajectory);
}

}  // namespace nerv360
