#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "nerv360/geometry.hpp"
#include "nerv360/io.hpp"
#include "support.hpp"

using namespace nerv360;
namespace fs = std::filesystem;

namespace {

Frame gradient_frame(Index h, Index w, float shift = 0.0f) {
  Frame f(3, h, w);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        f(c, y, x) = std::fmod(0.1f * float(c) + float(y) / float(h) * 0.5f + float(x) / float(w) * 0.4f + shift, 1.0f);
  return f;
}

}  // namespace

TEST_CASE("png sequence loads in numeric order and normalizes to [0, 1]") {
  testing::TempDir dir;
  std::vector<Frame> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(gradient_frame(24, 48, 0.1f * float(t)));
  frames[1](0, 0, 0) = 1.0f;
  frames[1](1, 0, 0) = 0.0f;
  save_png_sequence(dir.path(), frames);
  // An unpadded higher number must still sort after frame 2.
  fs::copy_file(dir.path() / "frame_000002.png", dir.path() / "frame_10.png");

  const auto video = load_video(dir.path());
  REQUIRE(video.size() == 4);
  CHECK(video.frame_shape() == Shape{3, 24, 48});
  CHECK(video.frames[1](0, 0, 0) == 1.0f);
  CHECK(video.frames[1](1, 0, 0) == 0.0f);
  for (int t = 0; t < 3; ++t) {
    const double err = (video.frames[t].array() - frames[t].array()).abs().maxCoeff();
    CHECK(err <= 0.5 / 255.0 + 1e-6);
  }
  CHECK(video.frames[3].array().isApprox(video.frames[2].array()));
  for (Index i = 0; i < video.frames[0].size(); ++i) {
    const float v = video.frames[0].data()[i] * 255.0f;
    REQUIRE(v == std::round(v));
  }
}

TEST_CASE("load_video validation") {
  testing::TempDir dir;
  std::vector<Frame> frames(5, gradient_frame(24, 48));
  frames[3] = gradient_frame(48, 48);
  save_png_sequence(dir.path(), frames);
  try {
    load_video(dir.path());
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("frame_000003.png") != std::string::npos);
  }

  testing::TempDir odd;
  save_png_sequence(odd.path(), std::vector<Frame>(2, gradient_frame(20, 40)));
  CHECK_THROWS_AS(load_video(odd.path()), IoError);
  CHECK(load_video(odd.path(), 4).size() == 2);

  testing::TempDir empty;
  CHECK_THROWS_AS(load_video(empty.path()), IoError);
  CHECK_THROWS_AS(load_video(empty.path() / "missing"), IoError);
  CHECK_THROWS_AS(read_png(empty.path() / "missing.png"), IoError);
}

TEST_CASE("y4m round trip") {
  testing::TempDir dir;
  std::vector<Frame> frames{gradient_frame(24, 48), gradient_frame(24, 48, 0.3f)};
  write_y4m(dir.path() / "v.y4m", frames, 25.0);
  const auto video = load_video(dir.path() / "v.y4m");
  REQUIRE(video.size() == 2);
  CHECK(video.fps == doctest::Approx(25.0));
  for (int t = 0; t < 2; ++t) CHECK((video.frames[t].array() - frames[t].array()).abs().maxCoeff() <= 3.0 / 255.0);

  // Hand-built 4:2:0 file: white, black and limited-range grey.
  std::ofstream out(dir.path() / "w.y4m", std::ios::binary);
  out << "YUV4MPEG2 W4 H2 F30:1 Ip C420jpeg\n";
  for (int y : {235, 16, 126}) {
    out << "FRAME\n";
    out << std::string(8, char(y)) << std::string(2, char(128)) << std::string(2, char(128));
  }
  out.close();
  const auto w = read_y4m(dir.path() / "w.y4m");
  REQUIRE(w.size() == 3);
  CHECK(w.frame_shape() == Shape{3, 2, 4});
  CHECK((w.frames[0].array() - 1.0f).abs().maxCoeff() <= 1e-6);
  CHECK(w.frames[1].array().abs().maxCoeff() <= 1e-6);
  CHECK(w.frames[2](1, 1, 1) == doctest::Approx(110 * 1.164383 / 255).epsilon(1e-6));

  std::ofstream bad(dir.path() / "b.y4m", std::ios::binary);
  bad << "YUV4MPEG2 W4 H2 C444\nFRAME\nabc";
  bad.close();
  CHECK_THROWS_AS(read_y4m(dir.path() / "b.y4m"), FormatError);
  std::ofstream deep(dir.path() / "d.y4m", std::ios::binary);
  deep << "YUV4MPEG2 W4 H2 C420p10\n";
  deep.close();
  CHECK_THROWS_AS(read_y4m(dir.path() / "d.y4m"), FormatError);
}

TEST_CASE("trajectory examples") {
  std::istringstream in("frame,theta_deg,phi_deg\n0,0,0\n10,90,-45\n");
  const auto tr = parse_trajectory(in);
  REQUIRE(tr.entries.size() == 2);
  CHECK(tr.entries[0].frame == 0);
  CHECK(tr.entries[0].theta == 0.0);
  CHECK(tr.entries[0].phi == 0.0);
  CHECK(tr.entries[1].frame == 10);
  CHECK(tr.entries[1].theta == doctest::Approx(kPi / 2).epsilon(1e-15));
  CHECK(tr.entries[1].phi == doctest::Approx(-kPi / 4).epsilon(1e-15));
}

TEST_CASE("trajectory errors carry line numbers") {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      parse_trajectory(in);
    } catch (const FormatError& e) {
      return e.line();
    }
    return 9999;
  };
  CHECK(line_of("frame,theta_deg,phi_deg\n0,1,2\n0,3,4\n") == 3);
  CHECK(line_of("frame,theta_deg,phi_deg\n5,1,2\n\n4,3,4\n") == 4);
  CHECK(line_of("frame,theta_deg,phi_deg\n0,abc,2\n") == 2);
  CHECK(line_of("frame,theta_deg,phi_deg\n0,1\n") == 2);
  CHECK(line_of("frame,theta_deg,phi_deg\n-1,1,2\n") == 2);
  CHECK(line_of("frame,theta_deg,phi_deg\n0,nan,2\n") == 2);
  CHECK(line_of("t,x,y\n0,1,2\n") == 1);
  CHECK(line_of("") == 0);
  testing::TempDir dir;
  CHECK_THROWS_AS(load_trajectory(dir.path() / "none.csv"), IoError);
}

TEST_CASE("trajectory round trip on random instances") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> th(-kPi, kPi), ph(-kPi / 2, kPi / 2);
  std::uniform_int_distribution<int> gap(1, 30), count(0, 40);
  testing::TempDir dir;
  for (int trial = 0; trial < 50; ++trial) {
    Trajectory tr;
    std::int64_t frame = std::uniform_int_distribution<int>(0, 5)(rng);
    for (int i = count(rng); i > 0; --i) {
      tr.entries.push_back({frame, th(rng), ph(rng)});
      frame += gap(rng);
    }
    const auto path = dir.path() / "t.csv";
    save_trajectory(path, tr);
    const auto back = load_trajectory(path);
    REQUIRE(back.entries.size() == tr.entries.size());
    for (std::size_t i = 0; i < tr.entries.size(); ++i) {
      CHECK(back.entries[i].frame == tr.entries[i].frame);
      CHECK(std::abs(back.entries[i].theta - tr.entries[i].theta) <= 4e-16 * kPi);
      CHECK(std::abs(back.entries[i].phi - tr.entries[i].phi) <= 4e-16 * kPi);
    }
    // Text written from a loaded file reproduces it byte for byte.
    std::ostringstream a, b;
    write_trajectory(a, back);
    std::istringstream again(a.str());
    write_trajectory(b, parse_trajectory(again));
    CHECK(a.str() == b.str());
  }
}
