#pragma once

#include <cstdint>

#include "nerv360/io.hpp"

namespace nerv360 {

// Smooth equirectangular test content: a latitude/longitude color field that
// drifts in longitude over time plus a few bright blobs moving on the sphere.
// Deterministic in `seed`; every frame has strong temporal change.
VideoDataset synthetic_video(std::int64_t frames, Index height, Index width, std::uint64_t seed = 0,
                             double fps = 30.0);

// Smooth gaze path: one entry per frame, full longitude sweep with a
// latitude oscillation of +/- phi_amplitude_deg.
Trajectory synthetic_trajectory(std::int64_t frames, double phi_amplitude_deg = 30.0);

// Per-pixel temporal mean of the frames.
Frame mean_frame(const VideoDataset& video);

}  // namespace nerv360
