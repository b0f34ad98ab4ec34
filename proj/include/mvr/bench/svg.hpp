#pragma once

#include <filesystem>
#include <string>

#include "mvr/signal.hpp"

namespace mvr::bench {

/// Fixed 800x300 canvas, two polylines (prediction vs reference), no
/// external assets.
std::string waveform_svg(const signal::TimeSeries& pred, const signal::TimeSeries& reference,
                         const std::string& title);

/// Power spectra overlay restricted to [0, 5] Hz.
std::string psd_svg(const signal::Spectrum& pred, const signal::Spectrum& reference,
                    const std::string& title);

void write_svg(const std::filesystem::path& file, const std::string& svg);

}  // namespace mvr::bench
