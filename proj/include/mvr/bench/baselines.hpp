#pragma once

#include "mvr/signal.hpp"
#include "mvr/synth.hpp"

namespace mvr::bench {

/// Spatial-mean color trace over a skin mask, one sample per frame.
struct RgbTrace {
  std::vector<double> r, g, b;
  double fs = 0.0;
  std::size_t size() const { return g.size(); }
};

/// Static mask variant: same mask for every frame (h*w bytes, nonzero = skin).
RgbTrace extract_rgb_trace(const synth::Video& video, const std::vector<std::uint8_t>& skin_mask,
                           double fs);
/// Per-frame masks (tracking the patch).
RgbTrace extract_rgb_trace(const synth::Video& video,
                           const std::vector<std::vector<std::uint8_t>>& masks, double fs);

/// Central crop fallback for frames without known geometry.
std::vector<std::uint8_t> central_crop_mask(int h, int w, double fraction = 0.6);

/// Plane-orthogonal-to-skin projection with sliding-window temporal
/// normalization and overlap-add; output standardized.
signal::TimeSeries pos(const RgbTrace& trace, double window_s = 1.6);

/// Chrominance projection on band-passed normalized channels; standardized.
signal::TimeSeries chrom(const RgbTrace& trace);

}  // namespace mvr::bench
