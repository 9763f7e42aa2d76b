#include "nerv360/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace nerv360 {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(base_lr >= 0.0)) throw std::invalid_argument("base_lr must be >= 0");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) {
    throw std::invalid_argument("warmup_frac must lie in [0, 1)");
  }
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  viewport.validate();
  loss.validate();
}

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  if (total_steps < 1 || step < 0 || step > total_steps) {
    throw std::out_of_range("lr_at: step outside [0, total_steps]");
  }
  const double warmup = cfg.warmup_frac * static_cast<double>(total_steps);
  const auto s = static_cast<double>(step);
  if (s < warmup) return cfg.base_lr * s / warmup;
  const double span = static_cast<double>(total_steps) - warmup;
  const double progress = span > 0.0 ? (s - warmup) / span : 1.0;
  return cfg.base_lr * 0.5 * (1.0 + std::cos(kPi * progress));
}

std::pair<double, double> sample_viewpoint(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lon(-kPi, kPi);
  std::uniform_real_distribution<double> lat(-kPi / 2.0, std::nextafter(kPi / 2.0, 2.0));
  const double theta = lon(rng);
  const double phi = lat(rng);
  return {theta, phi};
}

TrainingDiverged::TrainingDiverged(std::int64_t step_, std::int64_t t_, double theta_, double phi_)
    : std::runtime_error([&] {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step_ << " (t=" << t_ << ", theta=" << theta_
            << ", phi=" << phi_ << ")";
        return msg.str();
      }()),
      step(step_),
      t(t_),
      theta(theta_),
      phi(phi_) {}

namespace {

struct Accumulated {
  LossTerms loss;
  double psnr = 0.0;
};

// Forward + backward for one sample; gradients accumulate into the model.
Accumulated accumulate(TrainModel& model, const Frame& frame, const ViewState& state,
                       std::int64_t num_frames, const TrainConfig& cfg, double grad_scale) {
  const Frame target = extract_viewport(frame, state.theta, state.phi, cfg.viewport);
  ForwardTrace<float> trace;
  const Frame decoded = model.forward(frame, state, cfg.viewport, num_frames, trace);
  Frame grad;
  const LossTerms terms = distortion_loss(target, decoded, cfg.loss, &grad);
  if (!std::isfinite(terms.total)) throw TrainingDiverged(-1, state.t, state.theta, state.phi);
  if (grad_scale != 1.0) grad.array() *= static_cast<float>(grad_scale);
  model.backward(trace, grad);
  return {terms, psnr(target, decoded)};
}

}  // namespace

StepOutcome train_step(TrainModel& model, OptState<float>& opt, const Frame& frame,
                       const ViewState& state, std::int64_t num_frames, const TrainConfig& cfg,
                       double lr) {
  model.zero_grad();
  const Accumulated a = accumulate(model, frame, state, num_frames, cfg, 1.0);
  const StepStatus status = adan_step(model.parameters(), opt, lr, cfg.adan);
  return {a.loss, a.psnr, status};
}

TrainResult train(const VideoDataset& video, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (video.frames.empty()) throw std::invalid_argument("cannot train on an empty video");
  TrainResult result{TrainModel(model_cfg, cfg.seed), {}, {}};
  TrainModel& model = result.model;
  model.set_half_precision_activations(cfg.precision == Precision::mixed);
  model.embedding_shape(video.frame_shape());
  cfg.viewport.downscaled(model.config().stride_product());

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::int64_t n = video.size();
  const std::int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total = steps_per_epoch * cfg.epochs;
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    for (std::int64_t first = 0; first < n; first += cfg.batch_size, ++step) {
      const std::int64_t last = std::min(n, first + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(last - first);
      model.zero_grad();
      for (std::int64_t t = first; t < last; ++t) {
        const auto [theta, phi] = sample_viewpoint(rng);
        const ViewState state = ViewState::make(t, theta, phi);
        Accumulated a;
        try {
          a = accumulate(model, video.frames[t], state, n, cfg, scale);
        } catch (const TrainingDiverged& e) {
          throw TrainingDiverged(step, e.t, e.theta, e.phi);
        }
        log.mean_loss += a.loss.total;
        log.mean_psnr += a.psnr;
      }
      log.lr = lr_at(step, total, cfg);
      if (adan_step(model.parameters(), result.optimizer, log.lr, cfg.adan) !=
          StepStatus::applied) {
        ++log.rejected_steps;
      }
    }
    log.mean_loss /= static_cast<double>(n);
    log.mean_psnr /= static_cast<double>(n);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(log);
    if (hooks.on_epoch) {
      const bool last_epoch = epoch + 1 == cfg.epochs;
      const bool due = last_epoch || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0);
      hooks.on_epoch(log, model, result.optimizer, due);
    }
  }
  model.zero_grad();
  return result;
}

ViewportScore evaluate_viewports(const TrainModel& model, const VideoDataset& video,
                                 const std::vector<ViewState>& views, const ViewportSpec& spec) {
  if (views.empty()) throw std::invalid_argument("no viewpoints to evaluate");
  ViewportScore score;
  for (const auto& v : views) {
    const Frame& frame = video.frames.at(static_cast<std::size_t>(v.t));
    const Frame target = extract_viewport(frame, v.theta, v.phi, spec);
    const Frame decoded = model.forward(frame, v, spec, video.size());
    score.psnr += psnr(target, decoded);
    score.ms_ssim += ms_ssim(target, decoded);
  }
  score.psnr /= static_cast<double>(views.size());
  score.ms_ssim /= static_cast<double>(views.size());
  return score;
}

std::vector<ViewState> fixed_viewpoints(std::int64_t num_frames, int per_frame,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ViewState> views;
  for (std::int64_t t = 0; t < num_frames; ++t) {
    for (int k = 0; k < per_frame; ++k) {
      const auto [theta, phi] = sample_viewpoint(rng);
      views.push_back(ViewState::make(t, theta, phi));
    }
  }
  return views;
}

}  // namespace nerv360
