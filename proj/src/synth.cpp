#include "mvr/synth.hpp"

#include <algorithm>
#include <cmath>

namespace mvr::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;

// seed salts for the independent generation streams
enum : std::uint64_t {
  kSaltPpg = 0x70,
  kSaltTraj = 0x71,
  kSaltTexture = 0x72,
  kSaltNoiseBase = 0x80,   // + view
  kSaltBackground = 0x90,  // + view
  kSaltCamera = 0xa0,      // + view
};

struct PatchGeometry {
  double cx, cy;  // patch center == frame center
  double ax, ay;  // ellipse semi-axes
};

PatchGeometry patch_geometry(const SceneConfig& cfg) {
  PatchGeometry g;
  g.cx = cfg.width / 2.0;
  g.cy = cfg.height / 2.0;
  g.ax = 0.32 * cfg.width;
  g.ay = 0.38 * cfg.height;
  return g;
}

// Smooth multiplicative skin texture from a few seeded low-frequency waves.
struct SkinTexture {
  std::array<double, 3> fx{}, fy{}, phase{};
  double amp = 0.08;

  explicit SkinTexture(std::uint64_t seed) {
    Rng rng(seed);
    for (int i = 0; i < 3; ++i) {
      fx[i] = rng.uniform(0.1, 0.25) * 2.0 * kPi;  // period 4-10 px
      fy[i] = rng.uniform(0.1, 0.25) * 2.0 * kPi;
      phase[i] = rng.uniform(0.0, 2.0 * kPi);
    }
  }
  double operator()(double x, double y) const {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += std::sin(fx[i] * x + fy[i] * y + phase[i]);
    return 1.0 + amp * s / 3.0;
  }
};

struct InversePose {
  double i11, i12, i21, i22;  // inverse of A
  bool ok;
};

InversePose invert(const FramePose& p) {
  const double det = p.a11 * p.a22 - p.a12 * p.a21;
  if (std::abs(det) < 1e-9) return {1.0, 0.0, 0.0, 1.0, false};
  return {p.a22 / det, -p.a12 / det, -p.a21 / det, p.a11 / det, true};
}

}  // namespace

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::stationary: return "stationary";
    case Scenario::speaking: return "speaking";
    case Scenario::movement: return "movement";
  }
  return "stationary";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "stationary") return Scenario::stationary;
  if (s == "speaking") return Scenario::speaking;
  if (s == "movement") return Scenario::movement;
  fail(errc::parameter, "unknown scenario: " + s);
}

void SceneConfig::validate() const {
  require(fps > 0.0, errc::parameter, "scene: fps must be > 0");
  require(duration_s > 0.0, errc::parameter, "scene: duration must be > 0");
  require(ppg_amplitude > 0.0 && ppg_amplitude <= 0.2, errc::parameter,
          "scene: ppg_amplitude must be in (0, 0.2]");
  require(hr_base >= 48.0 && hr_base <= 180.0, errc::parameter,
          "scene: hr_base must be in [48, 180]");
  require(noise_sigma >= 0.0, errc::parameter, "scene: noise_sigma must be >= 0");
  require(height >= 32 && width >= 32, errc::parameter, "scene: resolution below 32x32");
}

std::vector<double> gen_hr_trace(const SceneConfig& cfg) {
  const int t = cfg.frame_count();
  std::vector<double> hr(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) {
    const double minutes = static_cast<double>(i) / cfg.fps / 60.0;
    hr[static_cast<std::size_t>(i)] =
        std::clamp(cfg.hr_base + cfg.hr_drift * minutes, 42.0, 240.0);
  }
  return hr;
}

signal::TimeSeries gen_ppg_waveform(const std::vector<double>& hr_trace, double fps,
                                    std::uint64_t seed) {
  require(!hr_trace.empty(), errc::parameter, "ppg: empty hr trace");
  for (double hr : hr_trace)
    require(hr >= 42.0 && hr <= 240.0, errc::parameter, "ppg: hr outside [42, 240] bpm");
  Rng rng(mix_seed(seed, kSaltPpg));
  double phase = rng.uniform(0.0, 2.0 * kPi);

  signal::TimeSeries out;
  out.fs = fps;
  out.samples.resize(hr_trace.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < hr_trace.size(); ++i) {
    phase += 2.0 * kPi * (hr_trace[i] / 60.0) / fps;
    out.samples[i] = std::sin(phase) + 0.3 * std::sin(2.0 * phase);
    peak = std::max(peak, std::abs(out.samples[i]));
  }
  for (auto& v : out.samples) v = quantize_f32(v / peak);
  return out;
}

Trajectory gen_head_trajectory(Scenario scenario, int t_frames, std::uint64_t seed, int height,
                               int width) {
  require(t_frames >= 1, errc::parameter, "trajectory: need at least one frame");
  Trajectory traj;
  traj.poses.resize(static_cast<std::size_t>(t_frames));
  if (scenario == Scenario::stationary) return traj;  // identity poses

  Rng rng(mix_seed(seed, kSaltTraj));
  const double fps = 30.0;  // trajectory frequencies are specified in Hz at 30 fps

  if (scenario == Scenario::speaking) {
    const double f1 = rng.uniform(0.15, 0.3), f2 = rng.uniform(0.12, 0.28),
                 f3 = rng.uniform(0.15, 0.3);
    const double p1 = rng.uniform(0.0, 2 * kPi), p2 = rng.uniform(0.0, 2 * kPi),
                 p3 = rng.uniform(0.0, 2 * kPi);
    for (int i = 0; i < t_frames; ++i) {
      const double t = i / fps;
      FramePose& pose = traj.poses[static_cast<std::size_t>(i)];
      pose.bx = 0.7 * std::sin(2 * kPi * f1 * t + p1);
      pose.by = 0.5 * std::sin(2 * kPi * f2 * t + p2);
      pose.yaw_deg = 4.0 * std::sin(2 * kPi * f3 * t + p3);
      pose.a11 = std::cos(pose.yaw_deg * kDeg);
    }
    return traj;
  }

  // movement: smooth wide yaw sweep and sway, plus a small white tremor
  // (head micro-motion). The tremor carries well under 1% of the trajectory
  // energy, so the sub-0.6 Hz energy bound still holds.
  const double yaw_amp = rng.uniform(33.0, 43.0);
  const double f_yaw = rng.uniform(0.08, 0.15);
  const double p_yaw = rng.uniform(0.0, 2 * kPi);
  const double bx_amp = std::min(8.0, width / 10.0);
  const double by_amp = std::min(4.0, height / 20.0);
  const double f_bx = rng.uniform(0.1, 0.3), f_by = rng.uniform(0.1, 0.3);
  const double p_bx = rng.uniform(0.0, 2 * kPi), p_by = rng.uniform(0.0, 2 * kPi);
  const double tremor_px = 0.12, tremor_deg = 0.25;
  for (int i = 0; i < t_frames; ++i) {
    const double t = i / fps;
    FramePose& pose = traj.poses[static_cast<std::size_t>(i)];
    pose.yaw_deg = yaw_amp * std::sin(2 * kPi * f_yaw * t + p_yaw) + rng.normal(0.0, tremor_deg);
    pose.bx = bx_amp * std::sin(2 * kPi * f_bx * t + p_bx) + rng.normal(0.0, tremor_px);
    pose.by = by_amp * std::sin(2 * kPi * f_by * t + p_by) + rng.normal(0.0, tremor_px);
    pose.a11 = std::max(0.2, std::cos(pose.yaw_deg * kDeg));  // horizontal foreshortening
  }
  return traj;
}

double visibility_gain(double yaw_deg, double view_angle_deg) {
  return std::max(0.0, std::cos((yaw_deg - view_angle_deg) * kDeg));
}

std::vector<std::uint8_t> skin_mask(const SceneConfig& cfg, const FramePose& pose) {
  const PatchGeometry geo = patch_geometry(cfg);
  const InversePose inv = invert(pose);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(cfg.height) * cfg.width, 0);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const double dx = x - geo.cx - pose.bx;
      const double dy = y - geo.cy - pose.by;
      const double rx = inv.i11 * dx + inv.i12 * dy;
      const double ry = inv.i21 * dx + inv.i22 * dy;
      const double e = (rx / geo.ax) * (rx / geo.ax) + (ry / geo.ay) * (ry / geo.ay);
      if (e <= 1.0) mask[static_cast<std::size_t>(y) * cfg.width + x] = 1;
    }
  return mask;
}

MultiViewClip render_clip(const SceneConfig& cfg) {
  cfg.validate();
  const Trajectory traj =
      gen_head_trajectory(cfg.scenario, cfg.frame_count(), cfg.seed, cfg.height, cfg.width);
  return render_clip_with_trajectory(cfg, traj);
}

MultiViewClip render_clip_with_trajectory(const SceneConfig& cfg, const Trajectory& traj) {
  cfg.validate();
  const int t_frames = cfg.frame_count();
  require(traj.frames() == t_frames, errc::parameter, "render: trajectory length mismatch");

  MultiViewClip clip;
  clip.scenario = cfg.scenario;
  clip.config = cfg;
  clip.hr_trace = gen_hr_trace(cfg);
  clip.gt_ppg = gen_ppg_waveform(clip.hr_trace, cfg.fps, cfg.seed);

  const PatchGeometry geo = patch_geometry(cfg);
  const SkinTexture tex(mix_seed(cfg.seed, kSaltTexture));

  // per-subject skin tone around (R,G,B) = (205, 160, 140)
  Rng tone_rng(mix_seed(cfg.seed, kSaltTexture + 7));
  const std::array<double, 3> skin_base = {205.0 + tone_rng.uniform(-15.0, 15.0),
                                           160.0 + tone_rng.uniform(-12.0, 12.0),
                                           140.0 + tone_rng.uniform(-10.0, 10.0)};
  const std::array<double, 3> bg_base = {72.0, 80.0, 92.0};

  // 4x4 keypoint grid over the patch in reference coordinates
  constexpr int kGrid = 4;
  const std::array<double, 4> frac = {-0.75, -0.25, 0.25, 0.75};
  std::vector<std::pair<double, double>> ref_kp;
  for (int i = 0; i < kGrid; ++i)
    for (int j = 0; j < kGrid; ++j)
      ref_kp.emplace_back(geo.cx + frac[static_cast<std::size_t>(j)] * geo.ax,
                          geo.cy + frac[static_cast<std::size_t>(i)] * geo.ay);

  for (int v = 0; v < 3; ++v) {
    const double view_angle = kViewAngles[static_cast<std::size_t>(v)];
    Video video(t_frames, cfg.height, cfg.width);
    KeypointTrack track(kGrid * kGrid, t_frames);
    Rng noise_rng(mix_seed(cfg.seed, kSaltNoiseBase + static_cast<std::uint64_t>(v)));
    Rng cam_rng(mix_seed(cfg.seed, kSaltCamera + static_cast<std::uint64_t>(v)));
    const double cam_gain = 1.0 + cam_rng.uniform(-0.04, 0.04);
    const SkinTexture bg_tex(mix_seed(cfg.seed, kSaltBackground + static_cast<std::uint64_t>(v)));

    for (int ti = 0; ti < t_frames; ++ti) {
      const FramePose& pose = traj.poses[static_cast<std::size_t>(ti)];
      const InversePose inv = invert(pose);
      const double vis = visibility_gain(pose.yaw_deg, view_angle);
      const bool occluded = vis < kOcclusionThreshold;
      const double pulse = clip.gt_ppg.samples[static_cast<std::size_t>(ti)];

      for (int k = 0; k < kGrid * kGrid; ++k) {
        const auto [rx, ry] = ref_kp[static_cast<std::size_t>(k)];
        const double px = pose.a11 * (rx - geo.cx) + pose.a12 * (ry - geo.cy) + geo.cx + pose.bx;
        const double py = pose.a21 * (rx - geo.cx) + pose.a22 * (ry - geo.cy) + geo.cy + pose.by;
        track.set(ti, k, quantize_f32(px), quantize_f32(py));
      }

      std::uint8_t* frame = video.frame(ti);
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
          const double bgt = bg_tex(x, y);
          double alpha = 0.0;
          double sx = 0.0, sy = 0.0;
          if (!occluded) {
            const double dx = x - geo.cx - pose.bx;
            const double dy = y - geo.cy - pose.by;
            sx = inv.i11 * dx + inv.i12 * dy;
            sy = inv.i21 * dx + inv.i22 * dy;
            const double e =
                (sx / geo.ax) * (sx / geo.ax) + (sy / geo.ay) * (sy / geo.ay);
            const double r = std::sqrt(e);
            alpha = std::clamp((1.0 - r) * geo.ax, 0.0, 1.0);  // ~1 px soft edge
          }
          const double t_skin = alpha > 0.0 ? tex(sx + geo.cx, sy + geo.cy) : 1.0;
          for (int ch = 0; ch < 3; ++ch) {
            const double bg = bg_base[static_cast<std::size_t>(ch)] * bgt;
            double value = bg;
            if (alpha > 0.0) {
              const double skin =
                  skin_base[static_cast<std::size_t>(ch)] * t_skin *
                  (1.0 + cfg.ppg_amplitude * kChannelGain[static_cast<std::size_t>(ch)] * vis *
                             pulse);
              value = alpha * skin + (1.0 - alpha) * bg;
            }
            value = value * cam_gain + noise_rng.normal(0.0, cfg.noise_sigma * 255.0);
            frame[(static_cast<std::size_t>(y) * cfg.width + x) * 3 +
                  static_cast<std::size_t>(ch)] =
                static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
          }
        }
    }
    clip.views[static_cast<std::size_t>(v)] = std::move(video);
    clip.keypoints[static_cast<std::size_t>(v)] = std::move(track);
  }
  return clip;
}

}  // namespace mvr::synth
