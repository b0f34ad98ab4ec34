#include "mvr/atoc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

namespace mvr::atoc {

namespace {

// 3x3 binary dilation with a full structuring element.
MotionMask dilate3(const MotionMask& m) {
  MotionMask out(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!m.at(y, x)) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < m.h && nx >= 0 && nx < m.w) out.set(ny, nx, 1);
        }
    }
  return out;
}

// 3x3 binary erosion; pixels outside the image count as background.
MotionMask erode3(const MotionMask& m) {
  MotionMask out(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      bool all = true;
      for (int dy = -1; dy <= 1 && all; ++dy)
        for (int dx = -1; dx <= 1 && all; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w || !m.at(ny, nx)) all = false;
        }
      if (all) out.set(y, x, 1);
    }
  return out;
}

// Solves the 3x3 normal equations M s = r. Returns false when M is singular.
bool solve3(const std::array<double, 9>& m, const std::array<double, 3>& r,
            std::array<double, 3>& s) {
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  const double scale = std::abs(m[0]) + std::abs(m[4]) + std::abs(m[8]) + 1e-12;
  if (std::abs(det) < 1e-9 * scale * scale * scale) return false;
  const double inv = 1.0 / det;
  s[0] = inv * (r[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (r[1] * m[8] - m[5] * r[2]) +
                m[2] * (r[1] * m[7] - m[4] * r[2]));
  s[1] = inv * (m[0] * (r[1] * m[8] - m[5] * r[2]) - r[0] * (m[3] * m[8] - m[5] * m[6]) +
                m[2] * (m[3] * r[2] - r[1] * m[6]));
  s[2] = inv * (m[0] * (m[4] * r[2] - r[1] * m[7]) - m[1] * (m[3] * r[2] - r[1] * m[6]) +
                r[0] * (m[3] * m[7] - m[4] * m[6]));
  return true;
}

}  // namespace

std::size_t MotionMask::count() const {
  return static_cast<std::size_t>(std::accumulate(mask.begin(), mask.end(), 0L));
}

std::vector<std::uint8_t> frame_abs_diff(const Video& video, int t_prev, int t_cur) {
  require(t_prev >= 0 && t_cur >= 0 && t_prev < video.t && t_cur < video.t, errc::parameter,
          "frame_abs_diff: frame index out of range");
  std::vector<std::uint8_t> diff(static_cast<std::size_t>(video.h) * video.w, 0);
  const std::uint8_t* a = video.frame(t_prev);
  const std::uint8_t* b = video.frame(t_cur);
  for (std::size_t p = 0; p < diff.size(); ++p) {
    int best = 0;
    for (int c = 0; c < 3; ++c) {
      const int d = std::abs(static_cast<int>(a[p * 3 + c]) - static_cast<int>(b[p * 3 + c]));
      best = std::max(best, d);
    }
    diff[p] = static_cast<std::uint8_t>(best);
  }
  return diff;
}

OtsuResult auto_threshold(const std::vector<std::uint8_t>& diff) {
  require(!diff.empty(), errc::parameter, "auto_threshold: empty difference image");
  std::array<double, 256> hist{};
  for (std::uint8_t v : diff) hist[v] += 1.0;
  const double total = static_cast<double>(diff.size());

  int occupied = 0;
  for (double h : hist)
    if (h > 0.0) ++occupied;
  if (occupied <= 1) return {0.0, true};

  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];

  std::array<double, 256> sigma{};
  double best_sigma = -1.0;
  double w0 = 0.0, sum0 = 0.0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += t * hist[static_cast<std::size_t>(t)];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    sigma[static_cast<std::size_t>(t)] = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    best_sigma = std::max(best_sigma, sigma[static_cast<std::size_t>(t)]);
  }
  // the variance is flat across empty gaps; take the plateau midpoint
  int lo = -1, hi = -1;
  for (int t = 0; t < 256; ++t) {
    if (sigma[static_cast<std::size_t>(t)] >= best_sigma) {
      if (lo < 0) lo = t;
      hi = t;
    }
  }
  return {(static_cast<double>(lo) + static_cast<double>(hi)) / 2.0, false};
}

MotionMask motion_mask(const Video& video, int t_prev, int t_cur, double delta_m) {
  require(delta_m >= 0.0, errc::parameter, "motion_mask: negative threshold");
  const auto diff = frame_abs_diff(video, t_prev, t_cur);
  MotionMask out(video.h, video.w);
  for (std::size_t p = 0; p < diff.size(); ++p)
    if (static_cast<double>(diff[p]) > delta_m) out.mask[p] = 1;
  return out;
}

MotionMask refine_mask(const MotionMask& mask) {
  return dilate3(erode3(dilate3(mask)));  // closing, then one dilation
}

int AffineField::nearest(double x, double y) const {
  int best = 0;
  double best_d = std::numeric_limits<double>::max();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double dx = x - params[k].px;
    const double dy = y - params[k].py;
    const double d = dx * dx + dy * dy;
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

std::pair<double, double> AffineField::displacement(double x, double y) const {
  const KeypointAffine& p = params[static_cast<std::size_t>(nearest(x, y))];
  const double ux = x - p.px;
  const double uy = y - p.py;
  return {(p.a11 - 1.0) * ux + p.a12 * uy + p.bx, p.a21 * ux + (p.a22 - 1.0) * uy + p.by};
}

AffineField estimate_affine(const KeypointTrack& track, int t_prev, int t_cur,
                            const AtocConfig& cfg) {
  require(track.k >= 3, errc::parameter, "estimate_affine: need at least 3 keypoints");
  require(t_prev >= 0 && t_cur >= 0 && t_prev < track.t && t_cur < track.t, errc::parameter,
          "estimate_affine: frame index out of range");

  AffineField field;
  field.params.resize(static_cast<std::size_t>(track.k));
  const int m = std::min(cfg.neighbors, track.k);

  std::vector<int> order(static_cast<std::size_t>(track.k));
  for (int k = 0; k < track.k; ++k) {
    KeypointAffine& out = field.params[static_cast<std::size_t>(k)];
    out.px = track.x(t_prev, k);
    out.py = track.y(t_prev, k);

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const double da = (track.x(t_prev, a) - out.px) * (track.x(t_prev, a) - out.px) +
                        (track.y(t_prev, a) - out.py) * (track.y(t_prev, a) - out.py);
      const double db = (track.x(t_prev, b) - out.px) * (track.x(t_prev, b) - out.px) +
                        (track.y(t_prev, b) - out.py) * (track.y(t_prev, b) - out.py);
      return da < db;
    });

    // normal equations for d = A u + b over the m nearest neighbors
    std::array<double, 9> mat{};
    std::array<double, 3> rx{}, ry{};
    for (int j = 0; j < m; ++j) {
      const int kj = order[static_cast<std::size_t>(j)];
      const double ux = track.x(t_prev, kj) - out.px;
      const double uy = track.y(t_prev, kj) - out.py;
      const double dx = track.x(t_cur, kj) - out.px;
      const double dy = track.y(t_cur, kj) - out.py;
      mat[0] += ux * ux;
      mat[1] += ux * uy;
      mat[2] += ux;
      mat[4] += uy * uy;
      mat[5] += uy;
      mat[8] += 1.0;
      rx[0] += ux * dx;
      rx[1] += uy * dx;
      rx[2] += dx;
      ry[0] += ux * dy;
      ry[1] += uy * dy;
      ry[2] += dy;
    }
    mat[3] = mat[1];
    mat[6] = mat[2];
    mat[7] = mat[5];

    std::array<double, 3> sx{}, sy{};
    bool ok = solve3(mat, rx, sx) && solve3(mat, ry, sy);
    if (ok) {
      const double d11 = sx[0] - 1.0, d12 = sx[1], d21 = sy[0], d22 = sy[1] - 1.0;
      const double deform = std::sqrt(d11 * d11 + d12 * d12 + d21 * d21 + d22 * d22);
      if (deform > cfg.max_deformation) ok = false;
    }
    if (ok) {
      out.a11 = sx[0];
      out.a12 = sx[1];
      out.bx = sx[2];
      out.a21 = sy[0];
      out.a22 = sy[1];
      out.by = sy[2];
    } else {
      // collinear or unstable neighborhood: pure translation of the anchor
      out.translation_only = true;
      out.bx = track.x(t_cur, k) - out.px;
      out.by = track.y(t_cur, k) - out.py;
    }
  }
  return field;
}

MotionRegion select_regions(const MotionMask& mask, const AffineField& field, double tau) {
  require(tau >= 0.0, errc::parameter, "select_regions: negative tau");
  MotionRegion region;
  region.h = mask.h;
  region.w = mask.w;
  region.tau = tau;
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      if (!mask.at(y, x)) continue;
      const auto [dx, dy] = field.displacement(x, y);
      if (std::sqrt(dx * dx + dy * dy) > tau)
        region.pixels.push_back(static_cast<std::uint32_t>(y * mask.w + x));
    }
  return region;
}

void warp_compensate(const Video& video, int t_prev, int t_cur, const MotionRegion& region,
                     const AffineField& field, std::uint8_t* out) {
  require(region.h == video.h && region.w == video.w, errc::parameter,
          "warp_compensate: region shape mismatch");
  const std::uint8_t* prev = video.frame(t_prev);
  const std::uint8_t* cur = video.frame(t_cur);
  const std::size_t frame_bytes = static_cast<std::size_t>(video.h) * video.w * 3;
  std::copy_n(cur, frame_bytes, out);

  for (std::uint32_t flat : region.pixels) {
    const int y = static_cast<int>(flat) / video.w;
    const int x = static_cast<int>(flat) % video.w;
    const auto [dx, dy] = field.displacement(x, y);
    // backward sample with border clamp
    double sx = std::clamp(static_cast<double>(x) - dx, 0.0, static_cast<double>(video.w - 1));
    double sy = std::clamp(static_cast<double>(y) - dy, 0.0, static_cast<double>(video.h - 1));
    const int x0 = static_cast<int>(sx);
    const int y0 = static_cast<int>(sy);
    const int x1 = std::min(x0 + 1, video.w - 1);
    const int y1 = std::min(y0 + 1, video.h - 1);
    const double fx = sx - x0;
    const double fy = sy - y0;
    for (int c = 0; c < 3; ++c) {
      const double v00 = prev[(static_cast<std::size_t>(y0) * video.w + x0) * 3 + c];
      const double v01 = prev[(static_cast<std::size_t>(y0) * video.w + x1) * 3 + c];
      const double v10 = prev[(static_cast<std::size_t>(y1) * video.w + x0) * 3 + c];
      const double v11 = prev[(static_cast<std::size_t>(y1) * video.w + x1) * 3 + c];
      const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
      out[flat * 3 + static_cast<std::uint32_t>(c)] =
          static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
}

FlowStats flow_noise_score(const MotionMask& mask, const AffineField& field) {
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      if (!mask.at(y, x)) continue;
      const auto [dx, dy] = field.displacement(x, y);
      sum += std::sqrt(dx * dx + dy * dy);
      ++count;
    }
  return {count == 0 ? 0.0 : sum / static_cast<double>(count)};  // empty mask -> 0
}

CompensationResult compensate_sequence(const Video& clip, const KeypointTrack& keypoints,
                                       Scenario scenario, const AtocConfig& cfg) {
  CompensationResult result;
  result.frames = clip;
  if (scenario != Scenario::movement || clip.t < 2) return result;
  require(keypoints.t == clip.t, errc::parameter,
          "compensate_sequence: keypoints not aligned with frames");

  result.per_frame_noise.reserve(static_cast<std::size_t>(clip.t - 1));
  for (int t = 1; t < clip.t; ++t) {
    const auto diff = frame_abs_diff(clip, t - 1, t);
    const auto otsu = auto_threshold(diff);
    const auto mask = refine_mask(motion_mask(clip, t - 1, t, otsu.threshold));
    const auto field = estimate_affine(keypoints, t - 1, t, cfg);
    const auto region = select_regions(mask, field, cfg.tau);
    warp_compensate(clip, t - 1, t, region, field, result.frames.frame(t));
    result.per_frame_noise.push_back(flow_noise_score(mask, field).n_v);
  }
  result.flow_noise =
      std::accumulate(result.per_frame_noise.begin(), result.per_frame_noise.end(), 0.0) /
      static_cast<double>(result.per_frame_noise.size());
  return result;
}

double region_mse(const Video& video, int t, const std::uint8_t* other,
                  const MotionRegion& region) {
  if (region.pixels.empty()) return 0.0;
  const std::uint8_t* frame = video.frame(t);
  double sum = 0.0;
  for (std::uint32_t flat : region.pixels)
    for (int c = 0; c < 3; ++c) {
      const double d = static_cast<double>(frame[flat * 3 + static_cast<std::uint32_t>(c)]) -
                       static_cast<double>(other[flat * 3 + static_cast<std::uint32_t>(c)]);
      sum += d * d;
    }
  return sum / (3.0 * static_cast<double>(region.pixels.size()));
}

void write_pgm(const std::filesystem::path& file, const MotionMask& mask) {
  std::ofstream os(file, std::ios::binary);
  require(os.good(), errc::data, "cannot write " + file.string());
  os << "P5\n" << mask.w << " " << mask.h << "\n255\n";
  for (std::uint8_t v : mask.mask) os.put(v ? '\xff' : '\0');
}

}  // namespace mvr::atoc
