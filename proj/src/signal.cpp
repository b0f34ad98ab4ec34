#include "mvr/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mvr::signal {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

// Normalized biquad coefficients (a0 == 1).
struct Biquad {
  double b0, b1, b2, a1, a2;
};

// RBJ cookbook Butterworth sections, Q = 1/sqrt(2).
Biquad butter_lowpass(double fc, double fs) {
  const double w0 = 2.0 * kPi * fc / fs;
  const double alpha = std::sin(w0) / std::sqrt(2.0);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  return {(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0,
          -2.0 * c / a0, (1.0 - alpha) / a0};
}

Biquad butter_highpass(double fc, double fs) {
  const double w0 = 2.0 * kPi * fc / fs;
  const double alpha = std::sin(w0) / std::sqrt(2.0);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  return {(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0,
          -2.0 * c / a0, (1.0 - alpha) / a0};
}

void biquad_forward(const Biquad& q, std::vector<double>& x) {
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (double& v : x) {
    const double x0 = v;
    const double y0 = q.b0 * x0 + q.b1 * x1 + q.b2 * x2 - q.a1 * y1 - q.a2 * y2;
    x2 = x1;
    x1 = x0;
    y2 = y1;
    y1 = y0;
    v = y0;
  }
}

// Forward-backward application of a biquad cascade with odd-reflection
// padding at both ends to suppress edge transients.
std::vector<double> filtfilt(const std::vector<Biquad>& sections, const std::vector<double>& x) {
  const std::size_t n = x.size();
  const std::size_t padlen = std::min<std::size_t>(n - 1, 24);
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = 0; i < padlen; ++i) ext.push_back(2.0 * x[0] - x[padlen - i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 0; i < padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 2 - i]);

  for (const Biquad& q : sections) biquad_forward(q, ext);
  std::reverse(ext.begin(), ext.end());
  for (const Biquad& q : sections) biquad_forward(q, ext);
  std::reverse(ext.begin(), ext.end());

  return {ext.begin() + static_cast<std::ptrdiff_t>(padlen),
          ext.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

}  // namespace

TimeSeries resample(const TimeSeries& ts, double target_fs) {
  require(target_fs > 0.0, errc::parameter, "resample: target_fs must be > 0");
  require(ts.size() >= 2, errc::parameter, "resample: need at least 2 samples");
  require(ts.fs > 0.0, errc::parameter, "resample: input fs must be > 0");
  require(all_finite(ts.samples), errc::invalid_signal, "resample: non-finite input");

  const std::size_t n_in = ts.size();
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_in) * target_fs / ts.fs));
  TimeSeries out;
  out.fs = target_fs;
  out.samples.resize(std::max<std::size_t>(n_out, 1));
  for (std::size_t k = 0; k < out.samples.size(); ++k) {
    const double t = static_cast<double>(k) / target_fs;  // seconds
    const double pos = t * ts.fs;
    const auto i0 = static_cast<std::size_t>(std::min(pos, static_cast<double>(n_in - 1)));
    if (i0 + 1 >= n_in) {
      out.samples[k] = ts.samples[n_in - 1];
    } else {
      const double frac = pos - static_cast<double>(i0);
      out.samples[k] = ts.samples[i0] * (1.0 - frac) + ts.samples[i0 + 1] * frac;
    }
  }
  return out;
}

Standardized detrend_normalize(const TimeSeries& ts) {
  require(ts.size() >= 2, errc::parameter, "detrend_normalize: need at least 2 samples");
  require(all_finite(ts.samples), errc::invalid_signal, "detrend_normalize: non-finite input");

  const double n = static_cast<double>(ts.size());
  const double mean = std::accumulate(ts.samples.begin(), ts.samples.end(), 0.0) / n;
  double ssq = 0.0;
  for (double v : ts.samples) ssq += (v - mean) * (v - mean);
  const double sd = std::sqrt(ssq / n);

  Standardized out;
  out.series.fs = ts.fs;
  out.series.samples.resize(ts.size());
  if (sd <= 0.0) {
    out.degenerate = true;  // constant input
    return out;
  }
  for (std::size_t i = 0; i < ts.size(); ++i)
    out.series.samples[i] = (ts.samples[i] - mean) / sd;
  return out;
}

TimeSeries bandpass(const TimeSeries& ts, double lo_hz, double hi_hz) {
  require(ts.fs > 0.0, errc::parameter, "bandpass: fs must be > 0");
  require(lo_hz > 0.0 && lo_hz < hi_hz, errc::parameter, "bandpass: need 0 < lo < hi");
  require(hi_hz < ts.fs / 2.0, errc::parameter, "bandpass: hi must be below Nyquist");
  require(ts.size() >= 2, errc::parameter, "bandpass: need at least 2 samples");
  require(all_finite(ts.samples), errc::invalid_signal, "bandpass: non-finite input");

  const std::vector<Biquad> sections = {butter_highpass(lo_hz, ts.fs),
                                        butter_lowpass(hi_hz, ts.fs)};
  TimeSeries out;
  out.fs = ts.fs;
  out.samples = filtfilt(sections, ts.samples);
  return out;
}

std::vector<std::complex<double>> dft(std::span<const double> x, std::size_t n) {
  const bool pow2 = n != 0 && (n & (n - 1)) == 0;
  std::vector<std::complex<double>> a(n, {0.0, 0.0});
  if (!pow2) {
    // direct evaluation; only used for unusual nfft values
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> acc{0.0, 0.0};
      for (std::size_t j = 0; j < x.size() && j < n; ++j) {
        const double ang = -2.0 * kPi * static_cast<double>(k) * static_cast<double>(j) /
                           static_cast<double>(n);
        acc += x[j] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      out[k] = acc;
    }
    return out;
  }

  for (std::size_t i = 0; i < x.size() && i < n; ++i) a[i] = x[i];
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w{1.0, 0.0};
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  return a;
}

Spectrum psd(const TimeSeries& ts, std::size_t nfft) {
  require(ts.fs > 0.0, errc::parameter, "psd: fs must be > 0");
  require(ts.size() >= 32, errc::parameter, "psd: need at least 32 samples");
  require(nfft >= ts.size(), errc::parameter, "psd: nfft must be >= signal length");
  require(all_finite(ts.samples), errc::invalid_signal, "psd: non-finite input");

  const auto spec = dft(ts.samples, nfft);
  const std::size_t n_bins = nfft / 2 + 1;
  const double scale = 1.0 / (ts.fs * static_cast<double>(ts.size()));

  Spectrum out;
  out.freqs.resize(n_bins);
  out.power.resize(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) {
    out.freqs[k] = static_cast<double>(k) * ts.fs / static_cast<double>(nfft);
    double p = std::norm(spec[k]) * scale;
    const bool interior = k > 0 && !(nfft % 2 == 0 && k == nfft / 2);
    if (interior) p *= 2.0;  // fold the negative-frequency half
    out.power[k] = p;
  }
  return out;
}

HrEstimate hr_from_spectrum(const Spectrum& spec) {
  require(!spec.freqs.empty() && spec.freqs.size() == spec.power.size(), errc::parameter,
          "hr_from_spectrum: malformed spectrum");
  require(spec.freqs.front() <= kHrBandLoHz && spec.freqs.back() >= kHrBandHiHz, errc::parameter,
          "hr_from_spectrum: spectrum does not cover the 0.7-4.0 Hz band");

  double best_power = 0.0;
  double best_freq = -1.0;
  for (std::size_t k = 0; k < spec.freqs.size(); ++k) {
    const double f = spec.freqs[k];
    if (f < kHrBandLoHz || f > kHrBandHiHz) continue;
    if (spec.power[k] > best_power) {  // strict: ties keep the lower frequency
      best_power = spec.power[k];
      best_freq = f;
    }
  }
  if (best_power <= 0.0) fail(errc::no_pulse, "hr_from_spectrum: no in-band power");
  return HrEstimate{60.0 * best_freq};
}

double pearson_r(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), errc::parameter, "pearson_r: length mismatch");
  require(a.size() >= 2, errc::parameter, "pearson_r: need at least 2 samples");

  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) fail(errc::degenerate, "pearson_r: zero-variance argument");
  return sab / std::sqrt(saa * sbb);
}

MetricsReport metrics(const std::vector<HrEstimate>& pred, const std::vector<HrEstimate>& gt) {
  require(pred.size() == gt.size(), errc::parameter, "metrics: length mismatch");
  require(!pred.empty(), errc::parameter, "metrics: empty input");

  MetricsReport rep;
  rep.n = pred.size();
  double abs_sum = 0.0, sq_sum = 0.0;
  std::vector<double> p(pred.size()), g(gt.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p[i] = pred[i].bpm;
    g[i] = gt[i].bpm;
    const double d = p[i] - g[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  rep.mae = abs_sum / static_cast<double>(rep.n);
  rep.rmse = std::sqrt(sq_sum / static_cast<double>(rep.n));
  if (rep.n < 2) {
    rep.r = 0.0;
    rep.r_degenerate = true;
    return rep;
  }
  try {
    rep.r = pearson_r(p, g);
  } catch (const error& e) {
    if (e.kind() != errc::degenerate) throw;
    rep.r = 0.0;
    rep.r_degenerate = true;
  }
  return rep;
}

HrEstimate estimate_hr(const TimeSeries& ts, std::size_t nfft) {
  std::size_t n = nfft;
  while (n < ts.size()) n *= 2;
  return hr_from_spectrum(psd(bandpass(ts), n));
}

}  // namespace mvr::signal
