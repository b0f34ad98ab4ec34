#include "mvr/bench/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace mvr::bench {

namespace {

constexpr int kWidth = 800;
constexpr int kHeight = 300;
constexpr int kMargin = 30;

std::string polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                     const char* color) {
  std::string out = "  <polyline fill=\"none\" stroke=\"";
  out += color;
  out += "\" stroke-width=\"1.2\" points=\"";
  char buf[48];
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", xs[i], ys[i]);
    out += buf;
  }
  out += "\"/>\n";
  return out;
}

std::string chart(const std::vector<double>& a, const std::vector<double>& b,
                  const std::string& title, const char* label_a, const char* label_b) {
  double lo = 1e300, hi = -1e300;
  for (double v : a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : b) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1.0;

  const double span_x = static_cast<double>(kWidth - 2 * kMargin);
  const double span_y = static_cast<double>(kHeight - 2 * kMargin);
  auto project = [&](const std::vector<double>& ys) {
    std::vector<double> px(ys.size()), py(ys.size());
    const double n = static_cast<double>(std::max<std::size_t>(ys.size() - 1, 1));
    for (std::size_t i = 0; i < ys.size(); ++i) {
      px[i] = kMargin + span_x * static_cast<double>(i) / n;
      py[i] = kHeight - kMargin - span_y * (ys[i] - lo) / (hi - lo);
    }
    return std::pair{px, py};
  };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"300\" "
                    "viewBox=\"0 0 800 300\">\n";
  svg += "  <rect x=\"0\" y=\"0\" width=\"800\" height=\"300\" fill=\"white\"/>\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "  <rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"none\" "
                "stroke=\"#888\"/>\n",
                kMargin, kMargin, kWidth - 2 * kMargin, kHeight - 2 * kMargin);
  svg += buf;
  const auto [ax, ay] = project(a);
  const auto [bx, by] = project(b);
  svg += polyline(bx, by, "#777777");
  svg += polyline(ax, ay, "#c0392b");
  std::snprintf(buf, sizeof(buf),
                "  <text x=\"%d\" y=\"20\" font-family=\"monospace\" font-size=\"13\">%s "
                "(%s red, %s gray)</text>\n",
                kMargin, title.c_str(), label_a, label_b);
  svg += buf;
  svg += "</svg>\n";
  return svg;
}

}  // namespace

std::string waveform_svg(const signal::TimeSeries& pred, const signal::TimeSeries& reference,
                         const std::string& title) {
  return chart(pred.samples, reference.samples, title, "prediction", "reference");
}

std::string psd_svg(const signal::Spectrum& pred, const signal::Spectrum& reference,
                    const std::string& title) {
  auto clip_band = [](const signal::Spectrum& s) {
    std::vector<double> out;
    for (std::size_t i = 0; i < s.freqs.size(); ++i)
      if (s.freqs[i] <= 5.0) out.push_back(s.power[i]);
    return out;
  };
  return chart(clip_band(pred), clip_band(reference), title, "prediction", "reference");
}

void write_svg(const std::filesystem::path& file, const std::string& svg) {
  std::ofstream os(file, std::ios::binary);
  require(os.good(), errc::data, "svg: cannot write " + file.string());
  os << svg;
}

}  // namespace mvr::bench
