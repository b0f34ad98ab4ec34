#include <doctest.h>

#include <cmath>

#include "mvr/atoc.hpp"
#include "mvr/common.hpp"

using namespace mvr;
using namespace mvr::atoc;
using synth::KeypointTrack;
using synth::Scenario;
using synth::Video;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Two-frame video with a textured block; frame 1 optionally shifted.
Video textured_pair(int h, int w, int shift_x, std::uint64_t seed) {
  Video v(2, h, w);
  Rng rng(seed);
  std::vector<std::uint8_t> tex(static_cast<std::size_t>(h) * w);
  for (auto& p : tex) p = static_cast<std::uint8_t>(40 + rng.integer(180));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        v.at(0, y, x, c) = tex[static_cast<std::size_t>(y) * w + x];
        const int sx = std::clamp(x - shift_x, 0, w - 1);
        v.at(1, y, x, c) = tex[static_cast<std::size_t>(y) * w + sx];
      }
  return v;
}

KeypointTrack grid_track(int t_frames, double shift_x_per_frame, double shift_y_per_frame) {
  KeypointTrack track(16, t_frames);
  for (int t = 0; t < t_frames; ++t)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        track.set(t, i * 4 + j, 8.0 + 5.0 * j + shift_x_per_frame * t,
                  8.0 + 5.0 * i + shift_y_per_frame * t);
  return track;
}

}  // namespace

TEST_CASE("motion_mask: identical frames give an empty mask") {
  Video v(2, 16, 16);
  for (auto& p : v.data) p = 100;
  const auto m = motion_mask(v, 0, 1, 0.0);
  CHECK(m.count() == 0);
}

TEST_CASE("motion_mask: a single changed pixel is flagged exactly") {
  Video v(2, 16, 16);
  for (auto& p : v.data) p = 100;
  v.at(1, 5, 7, 1) = 140;  // +40 on green
  const auto m = motion_mask(v, 0, 1, 20.0);
  CHECK(m.count() == 1);
  CHECK(m.at(5, 7) == 1);
}

TEST_CASE("motion_mask: shifted block matches the brute-force diff count") {
  const auto v = textured_pair(24, 24, 5, 3);
  const double delta = 10.0;
  const auto m = motion_mask(v, 0, 1, delta);
  // brute-force oracle: count pixels whose max-channel diff exceeds delta
  std::size_t expected = 0;
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      int best = 0;
      for (int c = 0; c < 3; ++c)
        best = std::max(best, std::abs(static_cast<int>(v.at(0, y, x, c)) -
                                       static_cast<int>(v.at(1, y, x, c))));
      if (best > delta) ++expected;
    }
  CHECK(m.count() == expected);
  CHECK(m.count() > 0);
}

TEST_CASE("auto_threshold: separates a bimodal histogram") {
  std::vector<std::uint8_t> diff;
  for (int i = 0; i < 500; ++i) diff.push_back(10);
  for (int i = 0; i < 500; ++i) diff.push_back(200);
  const auto r = auto_threshold(diff);
  CHECK(!r.degenerate);
  CHECK(r.threshold > 10.0);
  CHECK(r.threshold < 200.0);
}

TEST_CASE("auto_threshold: constant image is degenerate") {
  std::vector<std::uint8_t> diff(256, 0);
  const auto r = auto_threshold(diff);
  CHECK(r.degenerate);
  CHECK(r.threshold == 0.0);
}

TEST_CASE("auto_threshold: gaussian mixture lands between the modes (exhaustive oracle)") {
  Rng rng(9);
  std::vector<std::uint8_t> diff;
  for (int i = 0; i < 2000; ++i)
    diff.push_back(static_cast<std::uint8_t>(std::clamp(rng.normal(20.0, 5.0), 0.0, 255.0)));
  for (int i = 0; i < 2000; ++i)
    diff.push_back(static_cast<std::uint8_t>(std::clamp(rng.normal(180.0, 5.0), 0.0, 255.0)));
  const auto r = auto_threshold(diff);
  CHECK(r.threshold >= 80.0);
  CHECK(r.threshold <= 120.0);

  // exhaustive between-class-variance oracle over all 256 thresholds,
  // plateau midpoint tie-break
  std::array<double, 256> hist{};
  for (auto v : diff) hist[v] += 1.0;
  std::array<double, 256> sigma{};
  double best_sigma = -1.0;
  for (int t = 0; t < 256; ++t) {
    double w0 = 0, w1 = 0, s0 = 0, s1 = 0;
    for (int i = 0; i <= t; ++i) {
      w0 += hist[static_cast<std::size_t>(i)];
      s0 += i * hist[static_cast<std::size_t>(i)];
    }
    for (int i = t + 1; i < 256; ++i) {
      w1 += hist[static_cast<std::size_t>(i)];
      s1 += i * hist[static_cast<std::size_t>(i)];
    }
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = s0 / w0, mu1 = s1 / w1;
    sigma[static_cast<std::size_t>(t)] = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    best_sigma = std::max(best_sigma, sigma[static_cast<std::size_t>(t)]);
  }
  int lo = -1, hi = -1;
  for (int t = 0; t < 256; ++t)
    if (sigma[static_cast<std::size_t>(t)] >= best_sigma) {
      if (lo < 0) lo = t;
      hi = t;
    }
  CHECK(r.threshold == doctest::Approx((lo + hi) / 2.0));
}

TEST_CASE("refine_mask: fills an interior hole by closing") {
  MotionMask m(16, 16);
  for (int y = 4; y < 9; ++y)
    for (int x = 4; x < 9; ++x) m.set(y, x, 1);
  m.set(6, 6, 0);  // 1-pixel hole
  const auto r = refine_mask(m);
  CHECK(r.at(6, 6) == 1);
}

TEST_CASE("refine_mask: empty stays empty; output contains the closed input") {
  MotionMask empty(8, 8);
  CHECK(refine_mask(empty).count() == 0);

  Rng rng(4);
  MotionMask m(20, 20);
  for (int i = 0; i < 60; ++i)
    m.set(static_cast<int>(rng.integer(20)), static_cast<int>(rng.integer(20)), 1);
  const auto refined = refine_mask(m);
  // brute-force closing oracle
  auto dil = [](const MotionMask& in) {
    MotionMask out(in.h, in.w);
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny >= 0 && ny < in.h && nx >= 0 && nx < in.w && in.at(ny, nx)) out.set(y, x, 1);
          }
    return out;
  };
  auto ero = [](const MotionMask& in) {
    MotionMask out(in.h, in.w);
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        bool all = true;
        for (int dy = -1; dy <= 1 && all; ++dy)
          for (int dx = -1; dx <= 1 && all; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= in.h || nx < 0 || nx >= in.w || !in.at(ny, nx)) all = false;
          }
        if (all) out.set(y, x, 1);
      }
    return out;
  };
  const auto closed = ero(dil(m));
  for (std::size_t i = 0; i < refined.mask.size(); ++i)
    if (closed.mask[i]) CHECK(refined.mask[i] == 1);
}

TEST_CASE("refine_mask: merges blocks two pixels apart (brute-force oracle)") {
  MotionMask m(12, 12);
  for (int y = 4; y < 7; ++y) {
    m.set(y, 2, 1);
    m.set(y, 3, 1);
    m.set(y, 6, 1);  // gap at x = 4, 5
    m.set(y, 7, 1);
  }
  const auto r = refine_mask(m);
  CHECK(r.at(5, 4) == 1);
  CHECK(r.at(5, 5) == 1);
}

TEST_CASE("estimate_affine: pure translation recovers A = I, b = (1,0)") {
  const auto track = grid_track(2, 1.0, 0.0);
  const auto field = estimate_affine(track, 0, 1);
  for (const auto& p : field.params) {
    CHECK(p.a11 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(p.a12 == doctest::Approx(0.0).scale(1.0));
    CHECK(p.a21 == doctest::Approx(0.0).scale(1.0));
    CHECK(p.a22 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(p.bx == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(p.by == doctest::Approx(0.0).scale(1.0));
  }
}

TEST_CASE("estimate_affine: recovers a known rotation to 1e-6") {
  const double ang = 10.0 * kPi / 180.0;
  const double c = std::cos(ang), s = std::sin(ang);
  KeypointTrack track(16, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double x = 8.0 + 5.0 * j, y = 8.0 + 5.0 * i;
      track.set(0, i * 4 + j, x, y);
      // rotation about the point (16, 16)
      track.set(1, i * 4 + j, 16.0 + c * (x - 16.0) - s * (y - 16.0),
                16.0 + s * (x - 16.0) + c * (y - 16.0));
    }
  const auto field = estimate_affine(track, 0, 1);
  for (const auto& p : field.params) {
    CHECK(!p.translation_only);
    CHECK(p.a11 == doctest::Approx(c).epsilon(1e-6));
    CHECK(p.a12 == doctest::Approx(-s).epsilon(1e-6));
    CHECK(p.a21 == doctest::Approx(s).epsilon(1e-6));
    CHECK(p.a22 == doctest::Approx(c).epsilon(1e-6));
  }
}

TEST_CASE("estimate_affine: identical frames give the identity field") {
  const auto track = grid_track(2, 0.0, 0.0);
  const auto field = estimate_affine(track, 0, 1);
  for (const auto& p : field.params) {
    const auto [dx, dy] = field.displacement(p.px, p.py);
    CHECK(std::abs(dx) < 1e-9);
    CHECK(std::abs(dy) < 1e-9);
  }
}

TEST_CASE("estimate_affine: collinear keypoints fall back to translation") {
  KeypointTrack track(4, 2);
  for (int k = 0; k < 4; ++k) {
    track.set(0, k, 4.0 + 3.0 * k, 10.0);  // one horizontal line
    track.set(1, k, 6.0 + 3.0 * k, 10.0);  // shifted by (2, 0)
  }
  const auto field = estimate_affine(track, 0, 1);
  for (const auto& p : field.params) {
    CHECK(p.translation_only);
    CHECK(p.bx == doctest::Approx(2.0));
    CHECK(p.by == doctest::Approx(0.0).scale(1.0));
  }
}

TEST_CASE("select_regions: tau limits") {
  const auto track = grid_track(2, 2.0, 0.0);  // uniform 2 px displacement
  const auto field = estimate_affine(track, 0, 1);
  MotionMask mask(32, 32);
  for (int y = 10; y < 20; ++y)
    for (int x = 10; x < 20; ++x) mask.set(y, x, 1);

  const auto all = select_regions(mask, field, 0.0);
  CHECK(all.pixels.size() == mask.count());
  const auto some = select_regions(mask, field, 1.0);
  CHECK(some.pixels.size() == mask.count());
  const auto none = select_regions(mask, field, 3.0);
  CHECK(none.pixels.empty());
  const auto inf = select_regions(mask, field, 1e300);
  CHECK(inf.pixels.empty());
}

TEST_CASE("warp_compensate: empty region copies the current frame") {
  const auto v = textured_pair(16, 16, 3, 7);
  MotionRegion empty;
  empty.h = 16;
  empty.w = 16;
  AffineField field;
  field.params.push_back({});
  std::vector<std::uint8_t> out(16 * 16 * 3);
  warp_compensate(v, 0, 1, empty, field, out.data());
  CHECK(std::equal(out.begin(), out.end(), v.frame(1)));
}

TEST_CASE("warp_compensate: integer translation reconstructs the frame exactly") {
  // frame 1 = frame 0 shifted right by 3 px; displacement field = (3, 0)
  const auto v = textured_pair(24, 24, 3, 11);
  const auto track = grid_track(2, 3.0, 0.0);
  const auto field = estimate_affine(track, 0, 1);

  MotionRegion region;
  region.h = 24;
  region.w = 24;
  // interior only: skip the 3-px disocclusion band at the left border
  for (int y = 0; y < 24; ++y)
    for (int x = 3; x < 24; ++x) region.pixels.push_back(static_cast<std::uint32_t>(y * 24 + x));

  std::vector<std::uint8_t> out(24 * 24 * 3);
  warp_compensate(v, 0, 1, region, field, out.data());
  const double mse = region_mse(v, 1, out.data(), region);
  CHECK(mse == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("warp_compensate: identity field copies the previous frame on the region") {
  const auto v = textured_pair(16, 16, 2, 13);
  AffineField field;
  KeypointAffine id;
  id.px = 8;
  id.py = 8;
  field.params.push_back(id);
  MotionRegion region;
  region.h = 16;
  region.w = 16;
  for (int i = 0; i < 16 * 16; ++i) region.pixels.push_back(static_cast<std::uint32_t>(i));
  std::vector<std::uint8_t> out(16 * 16 * 3);
  warp_compensate(v, 0, 1, region, field, out.data());
  CHECK(std::equal(out.begin(), out.end(), v.frame(0)));
}

TEST_CASE("flow_noise_score: conventions and arithmetic") {
  const auto track2 = grid_track(2, 2.0, 0.0);
  const auto field2 = estimate_affine(track2, 0, 1);

  MotionMask empty(16, 16);
  CHECK(flow_noise_score(empty, field2).n_v == 0.0);

  MotionMask full(16, 16);
  for (auto& p : full.mask) p = 1;
  CHECK(flow_noise_score(full, field2).n_v == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("flow_noise_score: mask permutation invariance and linear scaling") {
  // half the mask at 1 px, half at 3 px -> mean 2.0 regardless of layout
  KeypointTrack track(16, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double x = 4.0 + 8.0 * j / 1.0, y = 4.0 + 8.0 * i;
      track.set(0, i * 4 + j, x, y);
      track.set(1, i * 4 + j, x + (x < 16.0 ? 1.0 : 3.0), y);
    }
  const auto field = estimate_affine(track, 0, 1);

  MotionMask left(32, 32), mixed(32, 32);
  int count = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const auto [dx, dy] = field.displacement(x, y);
      const double mag = std::sqrt(dx * dx + dy * dy);
      if (std::abs(mag - 1.0) < 1e-6 && count < 50) {
        left.set(y, x, 1);
        ++count;
      }
    }
  (void)mixed;
  const double n1 = flow_noise_score(left, field).n_v;
  CHECK(n1 == doctest::Approx(1.0).epsilon(1e-6));

  // doubling all displacements doubles the score
  KeypointTrack track2x(16, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double x = 4.0 + 8.0 * j, y = 4.0 + 8.0 * i;
      track2x.set(0, i * 4 + j, x, y);
      track2x.set(1, i * 4 + j, x + (x < 16.0 ? 2.0 : 6.0), y);
    }
  const auto field2x = estimate_affine(track2x, 0, 1);
  const double n2 = flow_noise_score(left, field2x).n_v;
  CHECK(n2 == doctest::Approx(2.0 * n1).epsilon(1e-6));
}

TEST_CASE("compensate_sequence: stationary clip passes through bitwise") {
  synth::SceneConfig cfg;
  cfg.duration_s = 2.0;
  cfg.seed = 31;
  const auto clip = synth::render_clip(cfg);
  const auto result = compensate_sequence(clip.views[1], clip.keypoints[1], Scenario::stationary);
  CHECK(result.frames == clip.views[1]);
  CHECK(result.flow_noise == 0.0);
}

TEST_CASE("compensate_sequence: single frame is returned unchanged") {
  Video v(1, 16, 16);
  for (auto& p : v.data) p = 50;
  KeypointTrack track(16, 1);
  const auto result = compensate_sequence(v, track, Scenario::movement);
  CHECK(result.frames == v);
}

TEST_CASE("compensate_sequence: translation clip residual drops (residual-energy oracle)") {
  // movement clip with a pure global translation of 0.8 px/frame
  const int t_frames = 40, h = 32, w = 32;
  Video clip(t_frames, h, w);
  Rng rng(17);
  std::vector<std::uint8_t> tex(static_cast<std::size_t>(2 * h) * (2 * w));
  for (auto& p : tex) p = static_cast<std::uint8_t>(30 + rng.integer(200));
  for (int t = 0; t < t_frames; ++t) {
    const double shift = 0.8 * t;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // bilinear sample from the big static texture at (x + shift, y)
        const double sx = std::min(static_cast<double>(2 * w - 1.001), x + shift);
        const int x0 = static_cast<int>(sx);
        const double fx = sx - x0;
        const double v = (1 - fx) * tex[static_cast<std::size_t>(y) * (2 * w) + x0] +
                         fx * tex[static_cast<std::size_t>(y) * (2 * w) + x0 + 1];
        for (int c = 0; c < 3; ++c)
          clip.at(t, y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  }
  KeypointTrack track(16, t_frames);
  for (int t = 0; t < t_frames; ++t)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        track.set(t, i * 4 + j, 8.0 + 5.0 * j - 0.8 * t, 8.0 + 5.0 * i);

  const auto result = compensate_sequence(clip, track, Scenario::movement);
  CHECK(result.flow_noise > 0.0);

  // residual-energy oracle: prediction residual vs plain frame difference
  double res_raw = 0.0, res_comp = 0.0;
  int frames_checked = 0;
  for (int t = 1; t < t_frames; ++t) {
    const auto diff = frame_abs_diff(clip, t - 1, t);
    const auto otsu = auto_threshold(diff);
    const auto mask = refine_mask(motion_mask(clip, t - 1, t, otsu.threshold));
    const auto field = estimate_affine(track, t - 1, t);
    const auto region = select_regions(mask, field, 0.5);
    if (region.pixels.empty()) continue;
    res_raw += region_mse(clip, t, clip.frame(t - 1), region);
    res_comp += region_mse(clip, t, result.frames.frame(t), region);
    ++frames_checked;
  }
  CHECK(frames_checked > 0);
  CHECK(res_comp < 0.5 * res_raw);
}
