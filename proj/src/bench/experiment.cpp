#include "mvr/bench/experiment.hpp"

#include <algorithm>

#include "mvr/bench/svg.hpp"
#include "mvr/dataset.hpp"

namespace mvr::bench {

std::string to_string(Method m) {
  switch (m) {
    case Method::pos: return "pos";
    case Method::chrom: return "chrom";
    case Method::mvrd_rppg: return "mvrd_rppg";
  }
  return "pos";
}

Method method_from_string(const std::string& name) {
  if (name == "pos") return Method::pos;
  if (name == "chrom") return Method::chrom;
  if (name == "mvrd_rppg") return Method::mvrd_rppg;
  fail(errc::parameter, "unknown method: " + name);
}

std::string view_mask_string(const std::array<bool, 3>& views) {
  std::string out;
  if (views[0]) out += 'l';
  if (views[1]) out += 'c';
  if (views[2]) out += 'r';
  return out;
}

std::array<bool, 3> view_mask_from_string(const std::string& mask) {
  std::array<bool, 3> views{false, false, false};
  for (char c : mask) {
    if (c == 'l') views[0] = true;
    else if (c == 'c') views[1] = true;
    else if (c == 'r') views[2] = true;
    else fail(errc::parameter, std::string("bad view mask character: ") + c);
  }
  require(views[0] || views[1] || views[2], errc::parameter,
          "at least one view must be available");
  return views;
}

void ExperimentConfig::validate() const {
  require(views[0] || views[1] || views[2], errc::parameter,
          "experiment: at least one view must be available");
  require(split > 0.0 && split < 1.0, errc::parameter, "experiment: split must be in (0,1)");
  require(window_frames >= 64, errc::parameter, "experiment: window must be >= 64 frames");
  if (method == Method::mvrd_rppg)
    require(!checkpoint.empty(), errc::parameter, "experiment: fused method needs a checkpoint");
}

std::vector<std::vector<std::uint8_t>> clip_skin_masks(const synth::SceneConfig& scene) {
  const auto traj = synth::gen_head_trajectory(scene.scenario, scene.frame_count(), scene.seed,
                                               scene.height, scene.width);
  std::vector<std::vector<std::uint8_t>> masks;
  masks.reserve(traj.poses.size());
  for (const auto& pose : traj.poses) masks.push_back(synth::skin_mask(scene, pose));
  return masks;
}

namespace {

// Baselines read the center view when available, otherwise the first one.
int baseline_view(const std::array<bool, 3>& views) {
  if (views[1]) return 1;
  if (views[0]) return 0;
  return 2;
}

}  // namespace

ClipEstimates estimate_clip(const ExperimentConfig& cfg, const nets::FusedModel* model,
                            const nets::PreparedClip& prepared, const synth::SceneConfig& scene) {
  ClipEstimates out;
  const int clip_t = prepared.clip.views[0].t;
  const int window = std::min(cfg.window_frames, clip_t);
  const int n_windows = clip_t / window;

  RgbTrace trace;
  if (cfg.method != Method::mvrd_rppg) {
    const auto masks = clip_skin_masks(scene);
    trace = extract_rgb_trace(prepared.clip.views[static_cast<std::size_t>(baseline_view(cfg.views))],
                              masks, scene.fps);
  }

  for (int wi = 0; wi < n_windows; ++wi) {
    const int t0 = wi * window;
    signal::TimeSeries gt_window;
    gt_window.fs = prepared.clip.gt_ppg.fs;
    gt_window.samples.assign(prepared.clip.gt_ppg.samples.begin() + t0,
                             prepared.clip.gt_ppg.samples.begin() + t0 + window);

    signal::TimeSeries pred;
    if (cfg.method == Method::mvrd_rppg) {
      pred = nets::predict_window(*model, prepared, t0, window, cfg.use_mvca);
    } else {
      RgbTrace slice;
      slice.fs = trace.fs;
      slice.r.assign(trace.r.begin() + t0, trace.r.begin() + t0 + window);
      slice.g.assign(trace.g.begin() + t0, trace.g.begin() + t0 + window);
      slice.b.assign(trace.b.begin() + t0, trace.b.begin() + t0 + window);
      pred = cfg.method == Method::pos ? pos(slice) : chrom(slice);
    }

    out.pred_bpm.push_back(signal::estimate_hr(pred).bpm);
    out.gt_bpm.push_back(signal::estimate_hr(gt_window).bpm);
    if (wi == 0) {
      out.first_window_pred = pred;
      const auto gt_std = signal::detrend_normalize(gt_window);
      out.first_window_gt = gt_std.degenerate ? gt_window : gt_std.series;
    }
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  require(std::filesystem::exists(cfg.dataset / "manifest.json"), errc::missing_file,
          "experiment: dataset not found at " + cfg.dataset.string());
  std::filesystem::create_directories(cfg.out_dir);

  const auto manifest = synth::read_manifest(cfg.dataset);
  const auto split = nets::split_dataset(manifest, cfg.scenario, cfg.split);
  require(!split.test.empty(), errc::data, "experiment: no test clips after the split");

  std::unique_ptr<nets::FusedModel> model;
  if (cfg.method == Method::mvrd_rppg) {
    model = std::make_unique<nets::FusedModel>(cfg.model);
    model->load(cfg.checkpoint);
  }

  ExperimentResult result;
  bool masks_dumped = false;
  for (const auto& entry : split.test) {
    auto prepared =
        nets::prepare_clip(synth::read_clip(cfg.dataset, entry), cfg.views,
                           cfg.method == Method::mvrd_rppg && cfg.use_atoc);

    if (cfg.dump_masks && !masks_dumped && entry.scenario == synth::Scenario::movement) {
      std::filesystem::create_directories(*cfg.dump_masks);
      const auto& video = prepared.clip.views[1];
      for (int t = 1; t < std::min(video.t, 9); ++t) {
        const auto diff = atoc::frame_abs_diff(video, t - 1, t);
        const auto mask =
            atoc::refine_mask(atoc::motion_mask(video, t - 1, t, atoc::auto_threshold(diff).threshold));
        atoc::write_pgm(*cfg.dump_masks / (entry.id + "_mask_" + std::to_string(t) + ".pgm"),
                        mask);
      }
      masks_dumped = true;
    }

    const auto estimates = estimate_clip(cfg, model.get(), prepared, entry.scene);
    result.pred_bpm.insert(result.pred_bpm.end(), estimates.pred_bpm.begin(),
                           estimates.pred_bpm.end());
    result.gt_bpm.insert(result.gt_bpm.end(), estimates.gt_bpm.begin(), estimates.gt_bpm.end());

    // per-clip artifacts: prediction signal and the two SVG plots
    if (!estimates.first_window_pred.samples.empty()) {
      synth::write_signal(cfg.out_dir / (entry.id + "_pred.mvs"), estimates.first_window_pred);
      write_svg(cfg.out_dir / (entry.id + "_wave.svg"),
                waveform_svg(estimates.first_window_pred, estimates.first_window_gt,
                             entry.id + " " + to_string(cfg.method)));
      const std::size_t nfft = 2048;
      write_svg(cfg.out_dir / (entry.id + "_psd.svg"),
                psd_svg(signal::psd(signal::bandpass(estimates.first_window_pred), nfft),
                        signal::psd(signal::bandpass(estimates.first_window_gt), nfft),
                        entry.id + " spectra"));
    }
  }

  std::vector<signal::HrEstimate> pred, gt;
  for (double bpm : result.pred_bpm) pred.push_back({bpm});
  for (double bpm : result.gt_bpm) gt.push_back({bpm});

  result.row.method = to_string(cfg.method);
  result.row.scenario = cfg.scenario ? synth::to_string(*cfg.scenario) : "all";
  result.row.view_mask = view_mask_string(cfg.views);
  result.row.metrics = signal::metrics(pred, gt);
  result.row.seed = cfg.seed;
  result.metrics_csv = cfg.out_dir / "metrics.csv";
  write_report(result.metrics_csv, {result.row});
  return result;
}

}  // namespace mvr::bench
