#pragma once

#include <filesystem>
#include <utility>

#include "mvr/synth.hpp"

namespace mvr::atoc {

using synth::KeypointTrack;
using synth::Scenario;
using synth::Video;

struct AtocConfig {
  double tau = 0.5;              // px, displacement threshold for region selection
  int neighbors = 6;             // keypoints per local affine fit
  double max_deformation = 0.5;  // bound on ||A_k - I||_F before the translation fallback
};

/// Binary per-pixel motion mask of one frame pair.
struct MotionMask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> mask;

  MotionMask() = default;
  MotionMask(int h_, int w_) : h(h_), w(w_), mask(static_cast<std::size_t>(h_) * w_, 0) {}
  std::uint8_t at(int y, int x) const { return mask[static_cast<std::size_t>(y) * w + x]; }
  void set(int y, int x, std::uint8_t v) { mask[static_cast<std::size_t>(y) * w + x] = v; }
  std::size_t count() const;
};

/// Local affine motion model anchored at one keypoint: the content at z near
/// p_k moves to p_k + A (z - p_k) + b.
struct KeypointAffine {
  double px = 0.0, py = 0.0;                      // anchor (previous frame)
  double a11 = 1.0, a12 = 0.0, a21 = 0.0, a22 = 1.0;
  double bx = 0.0, by = 0.0;
  bool translation_only = false;                  // collinear / unstable fallback
};

struct AffineField {
  std::vector<KeypointAffine> params;

  int nearest(double x, double y) const;
  /// Displacement at a pixel via its nearest keypoint: (A - I)(z - p) + b.
  std::pair<double, double> displacement(double x, double y) const;
};

/// Pixels selected for compensation (flat y*w + x indices).
struct MotionRegion {
  int h = 0, w = 0;
  double tau = 0.0;
  std::vector<std::uint32_t> pixels;
};

struct FlowStats {
  double n_v = 0.0;  // mean displacement magnitude over mask pixels
};

/// Per-pixel max-over-channels absolute difference of two frames.
std::vector<std::uint8_t> frame_abs_diff(const Video& video, int t_prev, int t_cur);

struct OtsuResult {
  double threshold = 0.0;
  bool degenerate = false;  // constant difference image
};
/// Otsu's between-class-variance maximizing threshold on a 256-bin histogram.
OtsuResult auto_threshold(const std::vector<std::uint8_t>& diff);

MotionMask motion_mask(const Video& video, int t_prev, int t_cur, double delta_m);

/// Morphological closing (3x3) followed by one 3x3 dilation.
MotionMask refine_mask(const MotionMask& mask);

/// Least-squares local affine fits over the m nearest keypoints, prev -> cur.
AffineField estimate_affine(const KeypointTrack& track, int t_prev, int t_cur,
                            const AtocConfig& cfg = {});

MotionRegion select_regions(const MotionMask& mask, const AffineField& field, double tau);

/// Compensated frame t: region pixels are sampled from frame t_prev at
/// position minus displacement (bilinear, border clamp); the rest is copied
/// from frame t_cur. out must hold h*w*3 bytes.
void warp_compensate(const Video& video, int t_prev, int t_cur, const MotionRegion& region,
                     const AffineField& field, std::uint8_t* out);

FlowStats flow_noise_score(const MotionMask& mask, const AffineField& field);

struct CompensationResult {
  Video frames;
  double flow_noise = 0.0;              // mean of the per-frame scores
  std::vector<double> per_frame_noise;  // one entry per frame pair
};

/// Runs the mask -> affine -> select -> warp chain over frames 2..T when the
/// scenario is movement; other scenarios pass through unchanged.
CompensationResult compensate_sequence(const Video& clip, const KeypointTrack& keypoints,
                                       Scenario scenario, const AtocConfig& cfg = {});

/// Mean squared residual between a frame of `video` and an external frame
/// buffer, restricted to the region (all channels).
double region_mse(const Video& video, int t, const std::uint8_t* other, const MotionRegion& region);

/// Binary mask dump, PGM (P5), values 0/255.
void write_pgm(const std::filesystem::path& file, const MotionMask& mask);

}  // namespace mvr::atoc
