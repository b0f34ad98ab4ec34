#pragma once

#include "mvr/bench/baselines.hpp"
#include "mvr/bench/report.hpp"
#include "mvr/nets/model.hpp"

namespace mvr::bench {

enum class Method { pos, chrom, mvrd_rppg };
std::string to_string(Method m);
Method method_from_string(const std::string& name);

std::string view_mask_string(const std::array<bool, 3>& views);
std::array<bool, 3> view_mask_from_string(const std::string& mask);

struct ExperimentConfig {
  std::filesystem::path dataset;
  std::optional<synth::Scenario> scenario;
  std::array<bool, 3> views{true, true, true};
  Method method = Method::pos;
  double split = 0.8;  // leading fraction of clips reserved for training
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;

  // fused-model evaluation
  std::filesystem::path checkpoint;
  nets::ModelConfig model;
  bool use_atoc = true;
  bool use_mvca = true;
  int window_frames = 300;
  std::optional<std::filesystem::path> dump_masks;  // PGM motion masks

  void validate() const;
};

struct ExperimentResult {
  ResultRow row;
  std::vector<double> pred_bpm;
  std::vector<double> gt_bpm;
  std::filesystem::path metrics_csv;
};

/// Evaluates the selected method on the test portion of the dataset over
/// non-overlapping windows; writes the metrics CSV, per-clip prediction
/// signals, and SVG plots into out_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Per-frame skin masks reconstructed from a clip's generation parameters.
std::vector<std::vector<std::uint8_t>> clip_skin_masks(const synth::SceneConfig& scene);

/// HR estimates for a method over the windows of one prepared clip.
struct ClipEstimates {
  std::vector<double> pred_bpm;
  std::vector<double> gt_bpm;
  signal::TimeSeries first_window_pred;  // saved for plots / artifacts
  signal::TimeSeries first_window_gt;
};
ClipEstimates estimate_clip(const ExperimentConfig& cfg, const nets::FusedModel* model,
                            const nets::PreparedClip& prepared, const synth::SceneConfig& scene);

}  // namespace mvr::bench
