#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "nerv360/bench.hpp"
#include "nerv360/checkpoint.hpp"
#include "nerv360/config.hpp"
#include "nerv360/service.hpp"
#include "nerv360/synthetic.hpp"

using namespace nerv360;
namespace fs = std::filesystem;

namespace {

// "384x768" -> {384, 768}
std::pair<Index, Index> parse_dims(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw CLI::ValidationError("dims", "expected HxW, got '" + s + "'");
  return {std::stol(s.substr(0, x)), std::stol(s.substr(x + 1))};
}

struct VideoSource {
  std::string path;
  int synthetic_frames = 0;
  std::string synthetic_size = "384x768";
  std::uint64_t synthetic_seed = 0;

  void add_options(CLI::App* cmd) {
    auto* v = cmd->add_option("--video", path, "PNG frame directory or .y4m file");
    auto* s = cmd->add_option("--synthetic", synthetic_frames, "use N synthetic frames instead of --video");
    v->excludes(s);
    cmd->add_option("--synthetic-size", synthetic_size, "HxW of synthetic frames");
    cmd->add_option("--synthetic-seed", synthetic_seed);
  }

  VideoDataset load(Index divisor) const {
    if (synthetic_frames > 0) {
      const auto [h, w] = parse_dims(synthetic_size);
      return synthetic_video(synthetic_frames, h, w, synthetic_seed);
    }
    if (path.empty()) throw CLI::RequiredError("--video or --synthetic");
    return load_video(path, divisor);
  }
};

Checkpoint make_checkpoint(const RunConfig& cfg, const VideoDataset& video, const TrainModel& model,
                           const OptState<float>* opt) {
  Checkpoint c{cfg, VideoMeta{video.size(), video.fps, video.frame_shape()}, model, std::nullopt,
               compute_embeddings(model, video), {}};
  if (opt) c.optimizer = *opt;
  return c;
}

int cmd_train(const std::string& config_path, const VideoSource& src, const std::string& out,
              const std::string& log_path, std::optional<int> epochs, std::optional<std::uint64_t> seed,
              std::optional<double> lr) {
  RunConfig cfg = load_config(config_path);
  if (epochs) cfg.train.epochs = *epochs;
  if (seed) cfg.train.seed = *seed;
  if (lr) cfg.train.base_lr = *lr;
  cfg.model = resolve_config(cfg.model);
  const VideoDataset video = src.load(cfg.model.stride_product());
  std::cout << "training on " << video.size() << " frames of " << to_string(video.frame_shape()) << ", c2=" << cfg.model.c2
            << ", " << cfg.train.epochs << " epochs" << std::endl;

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot write " + log_path);
  }
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& e, const TrainModel& model, const OptState<float>& opt, bool due) {
    std::printf("epoch %4d  loss %9.4f  psnr %6.2f  lr %.3e  %.1fs%s\n", e.epoch, e.mean_loss, e.mean_psnr, e.lr,
                e.seconds, e.rejected_steps ? "  (rejected steps)" : "");
    std::fflush(stdout);
    if (log.is_open()) {
      append_log_record(log, e);
      log.flush();
    }
    if (due) save_checkpoint(out, make_checkpoint(cfg, video, model, &opt));
  };
  try {
    train(video, cfg.model, cfg.train, hooks);
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  std::cout << "wrote " << out << std::endl;
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const VideoSource& src, const std::string& traj_path, int per_frame,
             const std::string& dump_dir) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const VideoDataset video = src.load(ckpt.model.config().stride_product());
  if (video.size() != ckpt.meta.frame_count || video.frame_shape() != ckpt.meta.frame_shape) {
    throw std::invalid_argument("video does not match the checkpoint (" + std::to_string(ckpt.meta.frame_count) +
                                " frames of " + to_string(ckpt.meta.frame_shape) + ")");
  }
  std::vector<ViewState> views;
  if (!traj_path.empty()) {
    for (const auto& e : load_trajectory(traj_path).entries) views.push_back(ViewState::make(e.frame, e.theta, e.phi));
  } else {
    views = fixed_viewpoints(video.size(), per_frame, 123);
  }
  const auto& spec = ckpt.config.train.viewport;
  const auto score = evaluate_viewports(ckpt.model, video, views, spec);
  std::printf("viewports %zu  psnr %.3f dB  ms-ssim %.5f\n", views.size(), score.psnr, score.ms_ssim);
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    char name[64];
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& v = views[i];
      std::snprintf(name, sizeof(name), "view_%04zu_t%03lld.png", i, static_cast<long long>(v.t));
      write_png(fs::path(dump_dir) / name, ckpt.model.forward(video.frames[v.t], v, spec, video.size()));
    }
  }
  return 0;
}

int cmd_bench(const std::string& ckpt_path, const std::string& traj_path, const std::string& mode,
              const std::string& report_path, int warmup, int iters, double limit_mib, const std::string& viewport) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Trajectory traj = load_trajectory(traj_path);
  BenchOptions opt;
  opt.mode = parse_decode_mode(mode);
  opt.warmup_iters = warmup;
  opt.timed_iters = iters;
  opt.memory_limit = static_cast<std::size_t>(limit_mib * 1048576.0);
  if (!viewport.empty()) {
    const auto [h, w] = parse_dims(viewport);
    opt.viewport = ViewportSpec{ckpt.config.train.viewport.hfov, h, w};
  }
  DeviceLock lock;
  const BenchReport report = run_benchmark(ckpt, traj, opt);
  std::cout << report.to_table();
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw IoError("cannot write " + report_path);
    out << report.to_json().dump(2) << '\n';
  }
  return report.status == BenchStatus::ok ? 0 : 4;
}

int cmd_serve(const std::string& ckpt_path, int port, const std::string& format, int quality, int io_threads,
              int decode_threads) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);  // inherited by server threads

  service::ServiceCore core(service::parse_image_format(format), quality);
  if (!ckpt_path.empty()) core.load(ckpt_path);
  service::Server server(core, static_cast<std::uint16_t>(port), io_threads, decode_threads);
  std::cout << "listening on port " << server.port() << (core.loaded() ? "" : " (no checkpoint loaded)") << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.wait();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

int cmd_synth(const std::string& out, int frames, const std::string& size, std::uint64_t seed,
              const std::string& traj_path, const std::string& y4m) {
  const auto [h, w] = parse_dims(size);
  const auto video = synthetic_video(frames, h, w, seed);
  if (!out.empty()) save_png_sequence(out, video.frames);
  if (!y4m.empty()) write_y4m(y4m, video.frames, video.fps);
  if (!traj_path.empty()) save_trajectory(traj_path, synthetic_trajectory(frames));
  return 0;
}

int cmd_dry_run(const std::string& config_path, const std::string& frame, const std::string& viewport) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  cfg.model = resolve_config(cfg.model);
  const auto [fh, fw] = parse_dims(frame);
  ViewportSpec spec = cfg.train.viewport;
  if (!viewport.empty()) std::tie(spec.out_h, spec.out_w) = parse_dims(viewport);
  const Model<float> model(cfg.model, 0);
  const auto r = model.trace_shapes({3, fh, fw}, spec);
  std::cout << "frame               " << to_string(r.frame) << '\n'
            << "embedding           " << to_string(r.embedding) << '\n'
            << "expanded            " << to_string(r.expanded) << '\n'
            << "embedding viewport  " << to_string(r.embedding_viewport) << '\n'
            << "output              " << to_string(r.output) << '\n'
            << "c2                  " << cfg.model.c2 << '\n'
            << "decoder parameters  " << model.decoder_parameter_count() << '\n'
            << "total parameters    " << model.parameter_count() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Viewport-conditioned neural representation for 360-degree video"};
  app.require_subcommand(1);
  int status = 0;

  auto* train_cmd = app.add_subcommand("train", "overfit a model to one video and write a checkpoint");
  std::string config_path, out, log_path;
  VideoSource src;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  train_cmd->add_option("--config", config_path, "run config JSON")->required()->check(CLI::ExistingFile);
  src.add_options(train_cmd);
  train_cmd->add_option("--out", out, "checkpoint path")->required();
  train_cmd->add_option("--log", log_path, "per-epoch JSONL log");
  train_cmd->add_option("--epochs", epochs);
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--lr", lr, "base learning rate");
  train_cmd->callback([&] { status = cmd_train(config_path, src, out, log_path, epochs, seed, lr); });

  auto* eval_cmd = app.add_subcommand("eval", "viewport PSNR / MS-SSIM of a checkpoint against its video");
  std::string ckpt_path, traj_path, dump_dir;
  int per_frame = 4;
  VideoSource eval_src;
  eval_cmd->add_option("--checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
  eval_src.add_options(eval_cmd);
  eval_cmd->add_option("--trajectory", traj_path, "CSV trajectory; default is random viewpoints")->check(CLI::ExistingFile);
  eval_cmd->add_option("--per-frame", per_frame, "random viewpoints per frame");
  eval_cmd->add_option("--dump", dump_dir, "write decoded viewports as PNG");
  eval_cmd->callback([&] { status = cmd_eval(ckpt_path, eval_src, traj_path, per_frame, dump_dir); });

  auto* bench_cmd = app.add_subcommand("bench", "decode FPS and peak memory, viewport vs. full-frame");
  std::string mode = "viewport", report_path, bench_viewport;
  int warmup = 10, iters = 50;
  double limit_mib = 0;
  bench_cmd->add_option("--checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--trajectory", traj_path)->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--mode", mode)->check(CLI::IsMember({"viewport", "fullframe"}));
  bench_cmd->add_option("--report", report_path, "JSON report path");
  bench_cmd->add_option("--warmup", warmup);
  bench_cmd->add_option("--iters", iters);
  bench_cmd->add_option("--memory-limit-mib", limit_mib, "activation budget; 0 = none");
  bench_cmd->add_option("--viewport", bench_viewport, "HxW override of the training viewport");
  bench_cmd->callback(
      [&] { status = cmd_bench(ckpt_path, traj_path, mode, report_path, warmup, iters, limit_mib, bench_viewport); });

  auto* serve_cmd = app.add_subcommand("serve", "HTTP + WebSocket viewport decoding service");
  int port = 8080, quality = 90, io_threads = 1, decode_threads = 0;
  std::string format = "png";
  serve_cmd->add_option("--checkpoint", ckpt_path, "load at startup (or POST /checkpoint later)")->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", port)->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--image-format", format)->check(CLI::IsMember({"png", "jpeg"}));
  serve_cmd->add_option("--jpeg-quality", quality)->check(CLI::Range(1, 100));
  serve_cmd->add_option("--io-threads", io_threads)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--decode-threads", decode_threads, "0 = hardware concurrency");
  serve_cmd->callback([&] { status = cmd_serve(ckpt_path, port, format, quality, io_threads, decode_threads); });

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic equirectangular test video");
  std::string synth_out, synth_size = "384x768", synth_traj, synth_y4m;
  int synth_frames = 8;
  std::uint64_t synth_seed = 0;
  synth_cmd->add_option("--out", synth_out, "PNG directory");
  synth_cmd->add_option("--y4m", synth_y4m, "Y4M file");
  synth_cmd->add_option("--frames", synth_frames)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth_size, "HxW");
  synth_cmd->add_option("--seed", synth_seed);
  synth_cmd->add_option("--trajectory", synth_traj, "also write a matching trajectory CSV");
  synth_cmd->callback([&] { status = cmd_synth(synth_out, synth_frames, synth_size, synth_seed, synth_traj, synth_y4m); });

  auto* dry_cmd = app.add_subcommand("dry-run", "print the shape trace and parameter counts");
  std::string dry_frame = "3072x6144", dry_viewport;
  dry_cmd->add_option("--config", config_path)->check(CLI::ExistingFile);
  dry_cmd->add_option("--frame", dry_frame, "HxW");
  dry_cmd->add_option("--viewport", dry_viewport, "HxW");
  dry_cmd->callback([&] { status = cmd_dry_run(config_path, dry_frame, dry_viewport); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return status;
}
