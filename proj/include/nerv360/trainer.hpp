#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nerv360/geometry.hpp"
#include "nerv360/io.hpp"
#include "nerv360/model.hpp"
#include "nerv360/objective.hpp"
#include "nerv360/optim.hpp"

namespace nerv360 {

enum class Precision { full, mixed };

struct TrainConfig {
  int epochs = 300;
  int batch_size = 1;
  double base_lr = 1e-4;
  double warmup_frac = 0.1;
  std::uint64_t seed = 0;
  Precision precision = Precision::full;
  ViewportSpec viewport{};
  LossConfig loss{};
  AdanConfig adan{};
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Linear warmup from 0 to base_lr over warmup_frac * total_steps, then cosine
// decay reaching 0 at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

// theta ~ U[-pi, pi), phi ~ U[-pi/2, pi/2].
std::pair<double, double> sample_viewpoint(std::mt19937_64& rng);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_psnr = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  int rejected_steps = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t step, std::int64_t t, double theta, double phi);
  std::int64_t step;
  std::int64_t t;
  double theta;
  double phi;
};

using TrainModel = Model<float>;

struct TrainHooks {
  // Called after every epoch; `checkpoint_due` follows TrainConfig::checkpoint_every
  // and is always true after the last epoch.
  std::function<void(const EpochLog&, const TrainModel&, const OptState<float>&,
                     bool checkpoint_due)>
      on_epoch;
};

struct TrainResult {
  TrainModel model;
  OptState<float> optimizer;
  std::vector<EpochLog> log;
};

// Overfits a fresh model to `video`: one random viewpoint per frame per epoch,
// frames in order, Adan with lr_at.
TrainResult train(const VideoDataset& video, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const TrainHooks& hooks = {});

// One optimization step on a single (frame, viewpoint). Returns loss terms and
// the decoded viewport PSNR.
struct StepOutcome {
  LossTerms loss;
  double psnr = 0.0;
  StepStatus status = StepStatus::applied;
};
StepOutcome train_step(TrainModel& model, OptState<float>& opt, const Frame& frame,
                       const ViewState& state, std::int64_t num_frames, const TrainConfig& cfg,
                       double lr);

struct ViewportScore {
  double psnr = 0.0;
  double ms_ssim = 0.0;
};

// Mean PSNR / MS-SSIM of decoded viewports against pixel-space ground truth.
ViewportScore evaluate_viewports(const TrainModel& model, const VideoDataset& video,
                                 const std::vector<ViewState>& views, const ViewportSpec& spec);

// `per_frame` seeded random viewpoints for every frame.
std::vector<ViewState> fixed_viewpoints(std::int64_t num_frames, int per_frame, std::uint64_t seed);

}  // namespace nerv360
