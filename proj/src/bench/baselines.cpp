#include "mvr/bench/baselines.hpp"

#include <cmath>
#include <numeric>

namespace mvr::bench {

namespace {

double mean_of(const std::vector<double>& xs, std::size_t lo, std::size_t hi) {
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) s += xs[i];
  return s / static_cast<double>(hi - lo);
}

double std_of(const std::vector<double>& xs) {
  const double m = mean_of(xs, 0, xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(xs.size()));
}

signal::TimeSeries standardized_or_degenerate(std::vector<double> samples, double fs,
                                              const char* who) {
  signal::TimeSeries ts;
  ts.fs = fs;
  ts.samples = std::move(samples);
  const auto out = signal::detrend_normalize(ts);
  if (out.degenerate) fail(errc::degenerate, std::string(who) + ": constant trace");
  return out.series;
}

}  // namespace

RgbTrace extract_rgb_trace(const synth::Video& video, const std::vector<std::uint8_t>& skin_mask,
                           double fs) {
  std::vector<std::vector<std::uint8_t>> masks(static_cast<std::size_t>(video.t), skin_mask);
  return extract_rgb_trace(video, masks, fs);
}

RgbTrace extract_rgb_trace(const synth::Video& video,
                           const std::vector<std::vector<std::uint8_t>>& masks, double fs) {
  require(static_cast<int>(masks.size()) == video.t, errc::parameter,
          "extract_rgb_trace: need one mask per frame");
  RgbTrace trace;
  trace.fs = fs;
  trace.r.resize(static_cast<std::size_t>(video.t));
  trace.g.resize(static_cast<std::size_t>(video.t));
  trace.b.resize(static_cast<std::size_t>(video.t));
  for (int t = 0; t < video.t; ++t) {
    const auto& mask = masks[static_cast<std::size_t>(t)];
    require(mask.size() == static_cast<std::size_t>(video.h) * video.w, errc::parameter,
            "extract_rgb_trace: mask size mismatch");
    double sr = 0.0, sg = 0.0, sb = 0.0;
    std::size_t count = 0;
    const std::uint8_t* frame = video.frame(t);
    for (std::size_t p = 0; p < mask.size(); ++p) {
      if (!mask[p]) continue;
      sr += frame[p * 3];
      sg += frame[p * 3 + 1];
      sb += frame[p * 3 + 2];
      ++count;
    }
    require(count > 0, errc::parameter, "extract_rgb_trace: empty mask");
    trace.r[static_cast<std::size_t>(t)] = sr / static_cast<double>(count);
    trace.g[static_cast<std::size_t>(t)] = sg / static_cast<double>(count);
    trace.b[static_cast<std::size_t>(t)] = sb / static_cast<double>(count);
  }
  return trace;
}

std::vector<std::uint8_t> central_crop_mask(int h, int w, double fraction) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w, 0);
  const int y0 = static_cast<int>(h * (1.0 - fraction) / 2.0);
  const int x0 = static_cast<int>(w * (1.0 - fraction) / 2.0);
  for (int y = y0; y < h - y0; ++y)
    for (int x = x0; x < w - x0; ++x) mask[static_cast<std::size_t>(y) * w + x] = 1;
  return mask;
}

signal::TimeSeries pos(const RgbTrace& trace, double window_s) {
  require(trace.fs > 0.0, errc::parameter, "pos: unknown sampling rate");
  const std::size_t n = trace.size();
  const auto l = static_cast<std::size_t>(std::lround(window_s * trace.fs));
  require(l >= 4 && l < n, errc::parameter, "pos: window must be shorter than the trace");

  std::vector<double> out(n, 0.0);
  std::vector<double> x1(l), x2(l);
  for (std::size_t start = 0; start + l <= n; ++start) {
    const double mr = mean_of(trace.r, start, start + l);
    const double mg = mean_of(trace.g, start, start + l);
    const double mb = mean_of(trace.b, start, start + l);
    if (mr == 0.0 || mg == 0.0 || mb == 0.0) continue;  // black (masked) stretch
    for (std::size_t i = 0; i < l; ++i) {
      const double rn = trace.r[start + i] / mr;
      const double gn = trace.g[start + i] / mg;
      const double bn = trace.b[start + i] / mb;
      x1[i] = gn - bn;
      x2[i] = gn + bn - 2.0 * rn;
    }
    const double s1 = std_of(x1);
    const double s2 = std_of(x2);
    const double alpha = s2 > 0.0 ? s1 / s2 : 0.0;
    double hm = 0.0;
    for (std::size_t i = 0; i < l; ++i) hm += x1[i] + alpha * x2[i];
    hm /= static_cast<double>(l);
    for (std::size_t i = 0; i < l; ++i) out[start + i] += x1[i] + alpha * x2[i] - hm;
  }
  return standardized_or_degenerate(std::move(out), trace.fs, "pos");
}

signal::TimeSeries chrom(const RgbTrace& trace) {
  require(trace.fs > 0.0, errc::parameter, "chrom: unknown sampling rate");
  const std::size_t n = trace.size();
  require(n >= 32, errc::parameter, "chrom: trace too short");

  const double mr = mean_of(trace.r, 0, n);
  const double mg = mean_of(trace.g, 0, n);
  const double mb = mean_of(trace.b, 0, n);
  if (mr == 0.0 || mg == 0.0 || mb == 0.0) fail(errc::degenerate, "chrom: zero-mean channel");

  auto normalized = [&](const std::vector<double>& c, double m) {
    signal::TimeSeries ts;
    ts.fs = trace.fs;
    ts.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) ts.samples[i] = c[i] / m - 1.0;
    return ts;
  };
  const auto rf = signal::bandpass(normalized(trace.r, mr));
  const auto gf = signal::bandpass(normalized(trace.g, mg));
  const auto bf = signal::bandpass(normalized(trace.b, mb));

  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = 3.0 * rf.samples[i] - 2.0 * gf.samples[i];
    y[i] = 1.5 * rf.samples[i] + gf.samples[i] - 1.5 * bf.samples[i];
  }
  const double sx = std_of(x);
  const double sy = std_of(y);
  const double alpha = sy > 0.0 ? sx / sy : 0.0;
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = x[i] - alpha * y[i];
  return standardized_or_degenerate(std::move(s), trace.fs, "chrom");
}

}  // namespace mvr::bench
