#include "nerv360/service.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <iostream>
#include <random>
#include <sstream>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace nerv360::service {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;

ImageFormat parse_image_format(const std::string& s) {
  if (s == "png") return ImageFormat::png;
  if (s == "jpeg" || s == "jpg") return ImageFormat::jpeg;
  throw std::invalid_argument("unknown image format '" + s + "' (png|jpeg)");
}

const char* to_string(ImageFormat f) { return f == ImageFormat::png ? "png" : "jpeg"; }

// ------------------------------------------------------------ wire format

ViewRequest parse_view_message(const std::string& text, std::int64_t* req_id) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error&) {
    throw ClientError("malformed message: not valid JSON");
  }
  if (!j.is_object()) throw ClientError("malformed message: expected a JSON object");
  ViewRequest r;
  if (auto it = j.find("req_id"); it != j.end() && it->is_number_integer()) {
    r.req_id = it->get<std::int64_t>();
    if (req_id) *req_id = r.req_id;
  } else {
    throw ClientError("malformed message: req_id must be an integer");
  }
  auto type = j.find("type");
  if (type == j.end() || !type->is_string()) throw ClientError("malformed message: missing type");
  if (*type != "view") throw ClientError("unsupported message type '" + type->get<std::string>() + "'");
  auto t = j.find("t");
  if (t == j.end() || !t->is_number_integer()) throw ClientError("malformed message: t must be an integer");
  r.t = t->get<std::int64_t>();
  for (auto [key, out] : {std::pair{"theta_deg", &r.theta_deg}, std::pair{"phi_deg", &r.phi_deg}}) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) {
      throw ClientError(std::string("malformed message: ") + key + " must be a number");
    }
    *out = it->get<double>();
    if (!std::isfinite(*out)) throw ClientError(std::string(key) + " must be finite");
  }
  return r;
}

std::string frame_message(std::int64_t req_id, const DecodedImage& image) {
  return json{{"type", "frame"},
              {"req_id", req_id},
              {"decode_ms", image.decode_ms},
              {"image_b64", base64_encode(image.bytes)},
              {"format", to_string(image.format)}}
      .dump();
}

std::string superseded_message(std::int64_t req_id) {
  return json{{"type", "superseded"}, {"req_id", req_id}}.dump();
}

std::string error_message(std::int64_t req_id, const std::string& message) {
  return json{{"type", "error"}, {"req_id", req_id}, {"message", message}}.dump();
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("invalid base64");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// --------------------------------------------------------------- state

ServiceCore::ServiceCore(ImageFormat format, int jpeg_quality)
    : format_(format), jpeg_quality_(jpeg_quality) {
  if (jpeg_quality < 1 || jpeg_quality > 100) throw std::invalid_argument("jpeg quality must be in [1, 100]");
}

void ServiceCore::load(const std::filesystem::path& path) { install(load_checkpoint(path), path); }

void ServiceCore::install(Checkpoint ckpt, const std::filesystem::path& path) {
  if (ckpt.embeddings.empty()) throw ClientError("checkpoint has no cached embeddings");
  if (static_cast<std::int64_t>(ckpt.embeddings.size()) != ckpt.meta.frame_count) {
    throw ClientError("checkpoint embedding count does not match its frame count");
  }
  ckpt.config.train.viewport.downscaled(ckpt.model.config().stride_product());
  auto loaded = std::make_shared<LoadedCheckpoint>(LoadedCheckpoint{std::move(ckpt), path, 0});
  std::unique_lock lock(mutex_);
  loaded->id = next_id_++;
  active_ = std::move(loaded);
}

bool ServiceCore::loaded() const {
  std::shared_lock lock(mutex_);
  return active_ != nullptr;
}

std::shared_ptr<const LoadedCheckpoint> ServiceCore::snapshot() const {
  std::shared_lock lock(mutex_);
  return active_;
}

json ServiceCore::meta() const {
  const auto snap = snapshot();
  if (!snap) throw Unavailable("no checkpoint loaded");
  const auto& c = snap->checkpoint;
  const auto& m = c.model.config();
  const auto& vp = c.config.train.viewport;
  const json viewport = {{"out_h", vp.out_h}, {"out_w", vp.out_w}, {"hfov_deg", radians_to_degrees(vp.hfov)}};
  return {{"frame_count", c.meta.frame_count},
          {"fps", c.meta.fps},
          {"frame_shape", {c.meta.frame_shape.channels, c.meta.frame_shape.height, c.meta.frame_shape.width}},
          {"viewport", viewport},
          {"viewport_options", json::array({viewport})},
          {"image_formats", {"png", "jpeg"}},
          {"image_format", to_string(format_)},
          {"model",
           {{"strides", m.strides},
            {"c1", m.c1},
            {"d", m.d},
            {"c2", m.c2},
            {"reduction", m.reduction},
            {"pe_base", m.pe.base},
            {"pe_levels", m.pe.levels},
            {"expand_before_extract", m.expand_before_extract},
            {"stat_view_inputs", m.stat_view_inputs},
            {"parameters", c.model.parameter_count()},
            {"decoder_parameters", c.model.decoder_parameter_count()}}},
          {"checkpoint", {{"id", snap->id}, {"path", snap->path.string()}, {"digest", c.digest}}}};
}

DecodedImage ServiceCore::decode(const ViewRequest& request) const {
  const auto snap = snapshot();
  if (!snap) throw Unavailable("no checkpoint loaded");
  const auto& c = snap->checkpoint;
  const std::int64_t n = c.meta.frame_count;
  if (request.t < 0 || request.t >= n) {
    throw ClientError("t=" + std::to_string(request.t) + " out of range [0, " + std::to_string(n - 1) + "]");
  }
  if (!std::isfinite(request.theta_deg) || !std::isfinite(request.phi_deg)) {
    throw ClientError("angles must be finite");
  }
  const ViewState state = ViewState::make(request.t, degrees_to_radians(request.theta_deg),
                                          degrees_to_radians(request.phi_deg));
  const auto start = std::chrono::steady_clock::now();
  const Frame image = c.model.render_viewport(c.embeddings[static_cast<std::size_t>(request.t)], state,
                                              c.config.train.viewport, n);
  DecodedImage out;
  out.decode_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  out.format = format_;
  out.width = image.width();
  out.height = image.height();
  out.bytes = format_ == ImageFormat::png ? encode_png(image) : encode_jpeg(image, jpeg_quality_);
  return out;
}

void LatencyWindow::add(double ms) {
  samples_.push_back(ms);
  while (samples_.size() > capacity_) samples_.pop_front();
}

double LatencyWindow::mean() const {
  if (samples_.empty()) return 0.0;
  double s = 0.0;
  for (double v : samples_) s += v;
  return s / static_cast<double>(samples_.size());
}

// ------------------------------------------------------------- network

namespace {

std::string incident_id() {
  static std::atomic<std::uint64_t> counter{0};
  static const std::uint64_t salt = std::random_device{}();
  std::ostringstream s;
  s << std::hex << ((salt << 20) ^ ++counter);
  return s.str();
}

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, ServiceCore& core, net::thread_pool& pool, std::uint64_t id)
      : ws_(std::move(socket)), core_(core), pool_(pool), id_(id) {}

  void run(http::request<http::string_body> req) {
    beast::get_lowest_layer(ws_).expires_never();
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      if (latency_.size() > 0) {
        std::clog << "session " << id_ << " closed; mean decode " << latency_.mean() << " ms over last "
                  << latency_.size() << " frames\n";
      }
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    handle(text);
    do_read();
  }

  void handle(const std::string& text) {
    std::int64_t req_id = -1;
    ViewRequest request;
    try {
      request = parse_view_message(text, &req_id);
    } catch (const ClientError& e) {
      send(error_message(req_id, e.what()));
      return;
    }
    auto s = coalescer_.submit(request);
    if (s.superseded) send(superseded_message(s.superseded->req_id));
    if (s.start) start_decode(*s.start);
  }

  void start_decode(const ViewRequest& request) {
    net::post(pool_, [self = shared_from_this(), request] {
      std::string message;
      double ms = -1.0;
      try {
        const DecodedImage image = self->core_.decode(request);
        ms = image.decode_ms;
        message = frame_message(request.req_id, image);
      } catch (const ClientError& e) {
        message = error_message(request.req_id, e.what());
      } catch (const Unavailable& e) {
        message = error_message(request.req_id, e.what());
      } catch (const std::exception& e) {
        const std::string incident = incident_id();
        std::cerr << "incident " << incident << ": decode of req " << request.req_id << " failed: " << e.what()
                  << '\n';
        message = error_message(request.req_id, "decode failed (incident " + incident + ")");
      }
      net::post(self->ws_.get_executor(), [self, message = std::move(message), ms] {
        if (ms >= 0.0) self->latency_.add(ms);
        self->send(message);
        if (auto next = self->coalescer_.finish()) self->start_decode(*next);
      });
    });
  }

  void send(std::string message) {
    outbox_.push_back(std::move(message));
    if (outbox_.size() == 1) do_write();
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()),
                    beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      outbox_.clear();
      return;
    }
    outbox_.pop_front();
    if (!outbox_.empty()) do_write();
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  ServiceCore& core_;
  net::thread_pool& pool_;
  std::uint64_t id_;
  Coalescer<ViewRequest> coalescer_;
  LatencyWindow latency_;
  std::deque<std::string> outbox_;
};

http::response<http::string_body> json_response(const http::request<http::string_body>& req,
                                                 http::status status, const json& body) {
  http::response<http::string_body> res{status, req.version()};
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");
  res.keep_alive(req.keep_alive());
  res.body() = body.dump();
  res.prepare_payload();
  return res;
}

http::response<http::string_body> route(ServiceCore& core, const http::request<http::string_body>& req) {
  const std::string target(req.target());
  const auto error = [&](http::status s, const std::string& msg) {
    return json_response(req, s, {{"error", msg}});
  };
  if (target == "/meta") {
    if (req.method() != http::verb::get) return error(http::status::method_not_allowed, "use GET");
    try {
      return json_response(req, http::status::ok, core.meta());
    } catch (const Unavailable& e) {
      return error(http::status::service_unavailable, e.what());
    }
  }
  if (target == "/checkpoint") {
    if (req.method() != http::verb::post) return error(http::status::method_not_allowed, "use POST");
    std::string path;
    try {
      const json body = json::parse(req.body());
      path = body.at("path").get<std::string>();
    } catch (const json::exception&) {
      return error(http::status::bad_request, "expected a JSON body {\"path\": string}");
    }
    try {
      core.load(path);
      return json_response(req, http::status::ok, core.meta());
    } catch (const ClientError& e) {
      return error(http::status::bad_request, e.what());
    } catch (const IoError& e) {
      return error(http::status::bad_request, e.what());
    } catch (const ChecksumError& e) {
      return error(http::status::unprocessable_entity, e.what());
    } catch (const VersionError& e) {
      return error(http::status::unprocessable_entity, e.what());
    } catch (const std::exception& e) {
      const std::string incident = incident_id();
      std::cerr << "incident " << incident << ": loading " << path << " failed: " << e.what() << '\n';
      return error(http::status::internal_server_error, "load failed (incident " + incident + ")");
    }
  }
  return error(http::status::not_found, "no route for " + target);
}

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, ServiceCore& core, net::thread_pool& pool, std::atomic<std::uint64_t>& ids)
      : stream_(std::move(socket)), core_(core), pool_(pool), ids_(ids) {}

  void run() { net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this())); }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec == http::error::end_of_stream) {
      beast::error_code ignored;
      stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      return;
    }
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/ws") {
        std::make_shared<WsSession>(stream_.release_socket(), core_, pool_, ++ids_)->run(std::move(req_));
        return;
      }
      write(json_response(req_, http::status::not_found, {{"error", "websocket endpoint is /ws"}}));
      return;
    }
    write(route(core_, req_));
  }

  void write(http::response<http::string_body> res) {
    auto sp = std::make_shared<http::response<http::string_body>>(std::move(res));
    http::async_write(stream_, *sp,
                      [self = shared_from_this(), sp](beast::error_code ec, std::size_t) {
                        if (ec) return;
                        if (!sp->keep_alive()) {
                          beast::error_code ignored;
                          self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                          return;
                        }
                        self->do_read();
                      });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  ServiceCore& core_;
  net::thread_pool& pool_;
  std::atomic<std::uint64_t>& ids_;
};

}  // namespace

struct Server::Impl {
  Impl(ServiceCore& c, std::uint16_t port, int io_threads, int decode_threads)
      : core(c),
        ioc(io_threads),
        acceptor(ioc),
        pool(static_cast<std::size_t>(decode_threads)) {
    const tcp::endpoint endpoint(net::ip::make_address("0.0.0.0"), port);
    acceptor.open(endpoint.protocol());
    acceptor.set_option(net::socket_base::reuse_address(true));
    acceptor.bind(endpoint);
    acceptor.listen(net::socket_base::max_listen_connections);
    do_accept();
    for (int i = 0; i < io_threads; ++i) threads.emplace_back([this] { ioc.run(); });
  }

  void do_accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec == net::error::operation_aborted) return;
      if (!ec) std::make_shared<HttpSession>(std::move(socket), core, pool, session_ids)->run();
      do_accept();
    });
  }

  ServiceCore& core;
  net::io_context ioc;
  tcp::acceptor acceptor;
  net::thread_pool pool;
  std::vector<std::thread> threads;
  std::atomic<std::uint64_t> session_ids{0};
  std::mutex stop_mutex;
  bool stopped = false;
};

Server::Server(ServiceCore& core, std::uint16_t port, int io_threads, int decode_threads) {
  if (io_threads < 1) throw std::invalid_argument("io_threads must be >= 1");
  if (decode_threads <= 0) decode_threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  impl_ = std::make_unique<Impl>(core, port, io_threads, decode_threads);
}

Server::~Server() {
  stop();
  wait();
}

std::uint16_t Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::stop() {
  std::lock_guard lock(impl_->stop_mutex);
  if (impl_->stopped) return;
  impl_->stopped = true;
  net::post(impl_->ioc, [this] {
    beast::error_code ignored;
    impl_->acceptor.close(ignored);
  });
  impl_->pool.join();
  impl_->ioc.stop();
}

void Server::wait() {
  for (auto& t : impl_->threads) {
    if (t.joinable() && t.get_id() != std::this_thread::get_id()) t.join();
  }
}

}  // namespace nerv360::service
