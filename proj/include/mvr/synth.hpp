#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mvr/common.hpp"
#include "mvr/signal.hpp"

namespace mvr::synth {

enum class Scenario { stationary, speaking, movement };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

/// Generation parameters for one synthetic clip.
struct SceneConfig {
  Scenario scenario = Scenario::stationary;
  double hr_base = 72.0;    // bpm, [48, 180]
  double hr_drift = 0.0;    // bpm per minute
  double fps = 30.0;
  double duration_s = 10.0;
  int height = 32;
  int width = 32;
  double ppg_amplitude = 0.05;       // relative modulation depth, (0, 0.2]
  double noise_sigma = 2.0 / 255.0;  // pixel noise std on the [0,1] intensity scale
  std::uint64_t seed = 1;

  int frame_count() const { return static_cast<int>(fps * duration_s + 0.5); }
  void validate() const;
};

/// uint8 video, frame-major layout [t][h][w][c].
struct Video {
  int t = 0, h = 0, w = 0, c = 3;
  std::vector<std::uint8_t> data;

  Video() = default;
  Video(int t_, int h_, int w_)
      : t(t_), h(h_), w(w_), c(3),
        data(static_cast<std::size_t>(t_) * h_ * w_ * 3, 0) {}

  std::size_t index(int ti, int hi, int wi, int ci) const {
    return ((static_cast<std::size_t>(ti) * h + hi) * w + wi) * c + ci;
  }
  std::uint8_t at(int ti, int hi, int wi, int ci) const { return data[index(ti, hi, wi, ci)]; }
  std::uint8_t& at(int ti, int hi, int wi, int ci) { return data[index(ti, hi, wi, ci)]; }
  const std::uint8_t* frame(int ti) const {
    return data.data() + static_cast<std::size_t>(ti) * h * w * c;
  }
  std::uint8_t* frame(int ti) { return data.data() + static_cast<std::size_t>(ti) * h * w * c; }
  bool operator==(const Video&) const = default;
};

/// Keypoint tracks, frame-major layout [t][k][2] (x, y in pixels).
struct KeypointTrack {
  int k = 0, t = 0;
  std::vector<double> xy;

  KeypointTrack() = default;
  KeypointTrack(int k_, int t_) : k(k_), t(t_), xy(static_cast<std::size_t>(k_) * t_ * 2, 0.0) {}
  double x(int ti, int ki) const { return xy[(static_cast<std::size_t>(ti) * k + ki) * 2]; }
  double y(int ti, int ki) const { return xy[(static_cast<std::size_t>(ti) * k + ki) * 2 + 1]; }
  void set(int ti, int ki, double px, double py) {
    xy[(static_cast<std::size_t>(ti) * k + ki) * 2] = px;
    xy[(static_cast<std::size_t>(ti) * k + ki) * 2 + 1] = py;
  }
  bool operator==(const KeypointTrack&) const = default;
};

/// Global in-plane pose of one frame: position(z) = A (z - c) + c + b with c
/// the frame center, plus the out-of-plane yaw that drives visibility.
struct FramePose {
  double a11 = 1.0, a12 = 0.0, a21 = 0.0, a22 = 1.0;
  double bx = 0.0, by = 0.0;
  double yaw_deg = 0.0;
};

struct Trajectory {
  std::vector<FramePose> poses;
  int frames() const { return static_cast<int>(poses.size()); }
};

inline constexpr std::array<double, 3> kViewAngles = {-45.0, 0.0, 45.0};
inline constexpr double kOcclusionThreshold = 0.2;
/// Relative pulsatile gain per channel (R, G, B).
inline constexpr std::array<double, 3> kChannelGain = {0.5, 1.0, 0.7};

/// Three synchronized views with ground truth. hr_trace and config are
/// generation-side metadata; they are not part of the on-disk container.
struct MultiViewClip {
  std::array<Video, 3> views;  // left, center, right
  std::array<KeypointTrack, 3> keypoints;
  signal::TimeSeries gt_ppg;
  std::vector<double> hr_trace;  // bpm per frame
  std::array<double, 3> view_angles = kViewAngles;
  int subject = 0;
  Scenario scenario = Scenario::stationary;
  SceneConfig config;
};

/// hr_base plus linear drift, bpm per frame.
std::vector<double> gen_hr_trace(const SceneConfig& cfg);

/// Fundamental at the instantaneous HR plus a 0.3-amplitude second harmonic
/// (dicrotic component), phase-integrated, unit peak amplitude.
signal::TimeSeries gen_ppg_waveform(const std::vector<double>& hr_trace, double fps,
                                    std::uint64_t seed);

Trajectory gen_head_trajectory(Scenario scenario, int t_frames, std::uint64_t seed,
                               int height = 32, int width = 32);

/// max(0, cos(yaw - view_angle)), the pulsatile amplitude gain of a view.
double visibility_gain(double yaw_deg, double view_angle_deg);

MultiViewClip render_clip(const SceneConfig& cfg);
MultiViewClip render_clip_with_trajectory(const SceneConfig& cfg, const Trajectory& traj);

/// Binary skin-region mask (h*w, row-major) of the patch under a pose.
std::vector<std::uint8_t> skin_mask(const SceneConfig& cfg, const FramePose& pose);

}  // namespace mvr::synth
