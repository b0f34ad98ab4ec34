#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "mvr/common.hpp"

namespace mvr::signal {

/// Uniformly sampled real-valued signal.
struct TimeSeries {
  std::vector<double> samples;
  double fs = 0.0;  // Hz

  std::size_t size() const { return samples.size(); }
  double duration_s() const { return fs > 0 ? static_cast<double>(samples.size()) / fs : 0.0; }
};

/// One-sided power spectral density. freqs strictly increasing, power >= 0.
struct Spectrum {
  std::vector<double> freqs;  // Hz
  std::vector<double> power;  // per Hz
};

struct HrEstimate {
  double bpm = 0.0;
};

/// HR-level evaluation metrics between predicted and reference series.
struct MetricsReport {
  double mae = 0.0;   // bpm
  double rmse = 0.0;  // bpm
  double r = 0.0;     // Pearson correlation of the two HR lists
  std::size_t n = 0;
  bool r_degenerate = false;  // r was replaced by 0 due to zero variance
};

struct Standardized {
  TimeSeries series;
  bool degenerate = false;  // input was constant; series is all-zero
};

inline constexpr double kHrBandLoHz = 0.7;
inline constexpr double kHrBandHiHz = 4.0;

/// Linear-interpolation resampling onto a target rate. Output length is
/// round(n * target_fs / fs) so the covered time span is preserved.
TimeSeries resample(const TimeSeries& ts, double target_fs);

/// Remove the mean and scale to unit (population) standard deviation.
/// A constant input yields an all-zero series with the degenerate flag set.
Standardized detrend_normalize(const TimeSeries& ts);

/// Zero-phase 4th-order IIR band-pass (Butterworth high-pass at lo cascaded
/// with low-pass at hi, applied forward and backward).
TimeSeries bandpass(const TimeSeries& ts, double lo_hz = kHrBandLoHz, double hi_hz = kHrBandHiHz);

/// Zero-padded one-sided periodogram with bin width fs/nfft. Satisfies
/// Parseval: sum(power) * binwidth == mean square of the samples.
Spectrum psd(const TimeSeries& ts, std::size_t nfft = 2048);

/// 60 x argmax frequency inside [0.7, 4.0] Hz; ties break toward the lower
/// frequency. Throws no_pulse if the in-band power is identically zero.
HrEstimate hr_from_spectrum(const Spectrum& spec);

/// Pearson correlation coefficient. Throws degenerate on zero variance.
double pearson_r(std::span<const double> a, std::span<const double> b);

MetricsReport metrics(const std::vector<HrEstimate>& pred, const std::vector<HrEstimate>& gt);

/// The standard HR readout chain: bandpass -> psd -> spectral peak.
HrEstimate estimate_hr(const TimeSeries& ts, std::size_t nfft = 2048);

/// DFT of a real signal zero-padded to n bins (radix-2 when n is a power of
/// two, direct evaluation otherwise).
std::vector<std::complex<double>> dft(std::span<const double> x, std::size_t n);

}  // namespace mvr::signal
