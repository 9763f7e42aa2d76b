#include <doctest.h>

#include <fstream>
#include <map>
#include <thread>

#include "nerv360/config.hpp"
#include "nerv360/service.hpp"
#include "nerv360/synthetic.hpp"
#include "support.hpp"

// After Eigen: <resolv.h> defines a _res macro that clashes with Eigen internals.
#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <httplib.h>

using namespace nerv360;
using namespace nerv360::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Toy-shaped checkpoint with an untrained model: 8 frames, 120x240 viewport.
const Checkpoint& toy_checkpoint() {
  static const Checkpoint ckpt = [] {
    RunConfig cfg = load_config(fs::path(NERV360_SOURCE_DIR) / "configs" / "toy.json");
    cfg.model = resolve_config(cfg.model);
    const auto video = synthetic_video(8, 384, 768, 1);
    Model<float> model(cfg.model, 1);
    auto emb = compute_embeddings(model, video);
    return Checkpoint{cfg, VideoMeta{8, 30.0, video.frame_shape()}, std::move(model), std::nullopt, std::move(emb), {}};
  }();
  return ckpt;
}

struct ServedCheckpoint {
  testing::TempDir dir;
  fs::path path;
  ServedCheckpoint() : path(dir.path() / "toy.ckpt") { save_checkpoint(path, toy_checkpoint()); }
};

ServedCheckpoint& served() {
  static ServedCheckpoint s;
  return s;
}

class WsClient {
 public:
  explicit WsClient(std::uint16_t port) : ws_(ioc_) {
    boost::asio::ip::tcp::resolver resolver(ioc_);
    boost::asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/ws");
    ws_.text(true);
  }
  void send(const json& j) { ws_.write(boost::asio::buffer(j.dump())); }
  void send_raw(const std::string& s) { ws_.write(boost::asio::buffer(s)); }
  json receive() {
    boost::beast::flat_buffer buf;
    ws_.read(buf);
    return json::parse(boost::beast::buffers_to_string(buf.data()));
  }
  void close() { ws_.close(boost::beast::websocket::close_code::normal); }

 private:
  boost::asio::io_context ioc_;
  boost::beast::websocket::stream<boost::asio::ip::tcp::socket> ws_;
};

json view(std::int64_t id, std::int64_t t, double theta, double phi) {
  return {{"type", "view"}, {"req_id", id}, {"t", t}, {"theta_deg", theta}, {"phi_deg", phi}};
}

struct Png {
  std::uint32_t width = 0, height = 0;
};

Png png_size(const std::vector<std::uint8_t>& b) {
  REQUIRE(b.size() > 24);
  REQUIRE(b[1] == 'P');
  auto be32 = [&](std::size_t o) {
    return (std::uint32_t(b[o]) << 24) | (std::uint32_t(b[o + 1]) << 16) | (std::uint32_t(b[o + 2]) << 8) | b[o + 3];
  };
  return {be32(16), be32(20)};
}

}  // namespace

TEST_CASE("wire format") {
  std::int64_t id = -1;
  const auto r = parse_view_message(view(7, 3, 12.5, -4.0).dump(), &id);
  CHECK(id == 7);
  CHECK(r.t == 3);
  CHECK(r.theta_deg == 12.5);
  CHECK(r.phi_deg == -4.0);

  CHECK_THROWS_AS(parse_view_message("not json"), ClientError);
  CHECK_THROWS_AS(parse_view_message("[1,2]"), ClientError);
  id = -1;
  CHECK_THROWS_AS(parse_view_message(R"({"type":"view","req_id":4,"t":"x","theta_deg":0,"phi_deg":0})", &id), ClientError);
  CHECK(id == 4);
  CHECK_THROWS_AS(parse_view_message(R"({"type":"zoom","req_id":1})"), ClientError);
  CHECK_THROWS_AS(parse_view_message(R"({"type":"view","req_id":1,"t":0,"theta_deg":0})"), ClientError);

  const auto sup = json::parse(superseded_message(9));
  CHECK(sup == json{{"type", "superseded"}, {"req_id", 9}});
  const auto err = json::parse(error_message(2, "boom"));
  CHECK(err.at("type") == "error");
  CHECK(err.at("message") == "boom");

  std::mt19937_64 rng(3);
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
  CHECK(base64_encode({'f', 'o', 'o', 'b'}) == "Zm9vYg==");
  CHECK(parse_image_format("jpeg") == ImageFormat::jpeg);
  CHECK_THROWS(parse_image_format("gif"));
}

TEST_CASE("coalescer keeps only the newest pending request") {
  Coalescer<char> c;
  auto a = c.submit('A');
  CHECK(a.start == 'A');
  CHECK(!a.superseded);
  auto b = c.submit('B');
  CHECK(!b.start);
  CHECK(!b.superseded);
  auto cc = c.submit('C');
  CHECK(cc.superseded == 'B');
  CHECK(c.finish() == 'C');
  CHECK(c.busy());
  CHECK(!c.finish());
  CHECK(!c.busy());

  Coalescer<char> single;
  CHECK(single.submit('A').start == 'A');
  CHECK(!single.finish());

  // Independent sessions never drop each other's requests.
  Coalescer<char> s1, s2;
  s1.submit('A');
  s2.submit('X');
  CHECK(!s2.submit('Y').superseded);
  CHECK(!s1.submit('B').superseded);
  CHECK(s1.finish() == 'B');
  CHECK(s2.finish() == 'Y');

  LatencyWindow w(3);
  for (double v : {1.0, 2.0, 3.0, 10.0}) w.add(v);
  CHECK(w.size() == 3);
  CHECK(w.mean() == doctest::Approx(5.0));
}

TEST_CASE("service core") {
  ServiceCore core;
  CHECK(!core.loaded());
  CHECK_THROWS_AS(core.meta(), Unavailable);
  CHECK_THROWS_AS(core.decode(ViewRequest{}), Unavailable);

  core.load(served().path);
  const auto meta = core.meta();
  CHECK(meta.at("frame_count") == 8);
  CHECK(meta.at("viewport").at("out_h") == 120);
  CHECK(meta.at("viewport").at("out_w") == 240);
  CHECK(meta.at("checkpoint").at("digest").get<std::string>().size() == 64);
  CHECK(core.meta() == meta);

  const auto img = core.decode(ViewRequest{0, 0.0, 0.0, 1});
  CHECK(img.width == 240);
  CHECK(img.height == 120);
  CHECK(img.decode_ms > 0.0);
  const auto size = png_size(img.bytes);
  CHECK(size.width == 240);
  CHECK(size.height == 120);
  CHECK(core.decode(ViewRequest{0, 0.0, 0.0, 2}).bytes == img.bytes);

  // Results do not depend on what was decoded before.
  const auto x = core.decode(ViewRequest{5, 40.0, 10.0, 3});
  core.decode(ViewRequest{2, -100.0, 80.0, 4});
  CHECK(core.decode(ViewRequest{5, 40.0, 10.0, 5}).bytes == x.bytes);

  try {
    core.decode(ViewRequest{8, 0.0, 0.0, 6});
    FAIL("expected ClientError");
  } catch (const ClientError& e) {
    CHECK(std::string(e.what()).find("[0, 7]") != std::string::npos);
  }
  CHECK_THROWS_AS(core.decode(ViewRequest{-1, 0.0, 0.0, 7}), ClientError);
  CHECK_THROWS_AS(core.decode(ViewRequest{0, NAN, 0.0, 8}), ClientError);

  Checkpoint bare = toy_checkpoint();
  bare.embeddings.clear();
  CHECK_THROWS_AS(core.install(std::move(bare)), ClientError);
  CHECK(core.meta() == meta);

  ServiceCore jpeg(ImageFormat::jpeg);
  jpeg.install(toy_checkpoint());
  const auto j = jpeg.decode(ViewRequest{1, 0.0, 0.0, 1});
  CHECK(j.format == ImageFormat::jpeg);
  REQUIRE(j.bytes.size() > 3);
  CHECK(j.bytes[0] == 0xFF);
  CHECK(j.bytes[1] == 0xD8);
}

TEST_CASE("http endpoints") {
  ServiceCore core;
  Server server(core, 0);
  httplib::Client http("127.0.0.1", server.port());
  http.set_read_timeout(30, 0);

  auto r = http.Get("/meta");
  REQUIRE(r);
  CHECK(r->status == 503);

  r = http.Post("/checkpoint", json{{"path", served().path.string()}}.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto posted = json::parse(r->body);
  CHECK(posted.at("frame_count") == 8);

  auto m1 = http.Get("/meta");
  auto m2 = http.Get("/meta");
  REQUIRE(m1);
  REQUIRE(m2);
  CHECK(m1->status == 200);
  CHECK(m1->body == m2->body);
  CHECK(json::parse(m1->body).at("viewport").at("out_w") == 240);

  CHECK(http.Post("/checkpoint", "{oops", "application/json")->status == 400);
  CHECK(http.Post("/checkpoint", json{{"file", "x"}}.dump(), "application/json")->status == 400);
  CHECK(http.Post("/checkpoint", json{{"path", "/nonexistent/x.ckpt"}}.dump(), "application/json")->status == 400);

  testing::TempDir dir;
  {
    std::ifstream in(served().path, std::ios::binary);
    std::vector<char> bytes{std::istreambuf_iterator<char>(in), {}};
    bytes.resize(bytes.size() / 2);
    std::ofstream(dir.path() / "cut.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK(http.Post("/checkpoint", json{{"path", (dir.path() / "cut.ckpt").string()}}.dump(), "application/json")->status == 422);
  // A failed load keeps the previous checkpoint active.
  CHECK(http.Get("/meta")->body == m1->body);

  CHECK(http.Get("/nothing")->status == 404);
  CHECK(http.Post("/meta", "", "text/plain")->status == 405);
  CHECK(http.Get("/checkpoint")->status == 405);
  server.stop();
}

TEST_CASE("websocket decoding") {
  ServiceCore core;
  core.load(served().path);
  Server server(core, 0, 1, 2);

  WsClient ws(server.port());
  ws.send(view(1, 0, 0.0, 0.0));
  auto reply = ws.receive();
  CHECK(reply.at("type") == "frame");
  CHECK(reply.at("req_id") == 1);
  CHECK(reply.at("format") == "png");
  CHECK(reply.at("decode_ms").get<double>() > 0.0);
  const auto bytes = base64_decode(reply.at("image_b64").get<std::string>());
  CHECK(png_size(bytes).width == 240);
  CHECK(png_size(bytes).height == 120);
  CHECK(bytes == core.decode(ViewRequest{0, 0.0, 0.0, 0}).bytes);

  ws.send(view(2, 8, 0.0, 0.0));
  reply = ws.receive();
  CHECK(reply.at("type") == "error");
  CHECK(reply.at("req_id") == 2);
  CHECK(reply.at("message").get<std::string>().find("[0, 7]") != std::string::npos);

  ws.send_raw("{\"type\": \"view\", \"req_id\": 3, \"t\": 0}");
  reply = ws.receive();
  CHECK(reply.at("type") == "error");
  CHECK(reply.at("req_id") == 3);

  // A burst: every request is answered once, the newest is always decoded,
  // and older pending ones are superseded.
  const int n = 25;
  for (int i = 0; i < n; ++i) ws.send(view(100 + i, i % 8, 7.0 * i, 0.0));
  std::map<std::int64_t, std::string> outcome;
  while (outcome.size() < static_cast<std::size_t>(n)) {
    const auto m = ws.receive();
    const auto id = m.at("req_id").get<std::int64_t>();
    CHECK(outcome.count(id) == 0);
    outcome[id] = m.at("type").get<std::string>();
  }
  CHECK(outcome.at(100 + n - 1) == "frame");
  CHECK(outcome.at(100) == "frame");
  int superseded = 0;
  for (const auto& [id, type] : outcome) {
    CHECK((type == "frame" || type == "superseded"));
    superseded += type == "superseded";
  }
  CHECK(superseded > 0);

  // Two sessions bursting at once each get their own newest request decoded.
  WsClient other(server.port());
  for (int i = 0; i < 6; ++i) {
    ws.send(view(200 + i, 1, 3.0 * i, 0.0));
    other.send(view(300 + i, 2, -3.0 * i, 0.0));
  }
  auto drain = [](WsClient& c, std::int64_t last) {
    std::string type;
    for (int seen = 0; seen < 6; ++seen) {
      const auto m = c.receive();
      if (m.at("req_id") == last) type = m.at("type");
    }
    return type;
  };
  CHECK(drain(ws, 205) == "frame");
  CHECK(drain(other, 305) == "frame");

  ws.close();
  other.close();
  server.stop();
}
