// Command-line front end: dataset generation, training, evaluation,
// component/loss ablations, and report merging.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "mvr/bench/experiment.hpp"
#include "mvr/bench/report.hpp"
#include "mvr/dataset.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace mvr;

namespace {

int exit_code_for(errc kind) {
  switch (kind) {
    case errc::parameter:
      return 2;
    case errc::data:
    case errc::bad_magic:
    case errc::truncated:
    case errc::version_mismatch:
    case errc::missing_file:
    case errc::invalid_signal:
      return 3;
    case errc::numeric:
    case errc::degenerate:
    case errc::no_pulse:
      return 4;
  }
  return 1;
}

json load_config(const std::string& path) {
  require(!path.empty(), errc::parameter, "--config is required");
  std::ifstream is(path);
  require(is.good(), errc::data, "cannot open config: " + path);
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    fail(errc::parameter, "malformed config " + path + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> views;
  std::optional<std::string> scenario;
  std::optional<std::string> out;
  std::optional<std::string> dump_masks;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "JSON configuration file");
  cmd->add_option("--seed", flags.seed, "Override the config seed");
  cmd->add_option("--views", flags.views, "View availability mask, subset of 'lcr'");
  cmd->add_option("--scenario", flags.scenario,
                  "Scenario filter: stationary|speaking|movement|all");
  cmd->add_option("--out", flags.out, "Override the output directory");
}

std::optional<synth::Scenario> scenario_filter(const std::string& name) {
  if (name.empty() || name == "all") return std::nullopt;
  return synth::scenario_from_string(name);
}

// ---------------------------------------------------------------- generate

int cmd_generate(const CommonFlags& flags) {
  const json cfg = load_config(flags.config);
  const fs::path out = flags.out.value_or(cfg.at("out").get<std::string>());
  const std::uint64_t seed = flags.seed.value_or(get_or<std::uint64_t>(cfg, "seed", 1));
  const int subjects = get_or(cfg, "subjects", 8);
  std::vector<std::string> scenario_names =
      get_or<std::vector<std::string>>(cfg, "scenarios", {"stationary", "speaking", "movement"});
  if (flags.scenario && *flags.scenario != "all") scenario_names = {*flags.scenario};

  synth::SceneConfig base;
  base.fps = get_or(cfg, "fps", 30.0);
  base.duration_s = get_or(cfg, "duration_s", 20.0);
  if (cfg.contains("resolution")) {
    const auto res = cfg.at("resolution").get<std::vector<int>>();
    require(res.size() == 2, errc::parameter, "resolution must be [height, width]");
    base.height = res[0];
    base.width = res[1];
  }
  base.ppg_amplitude = get_or(cfg, "ppg_amplitude", 0.05);
  base.noise_sigma = get_or(cfg, "noise_sigma", 2.0 / 255.0);
  base.hr_drift = get_or(cfg, "hr_drift", 0.0);
  const double hr_min = get_or(cfg, "hr_base_min", 60.0);
  const double hr_max = get_or(cfg, "hr_base_max", 110.0);
  require(subjects >= 1, errc::parameter, "subjects must be >= 1");

  std::vector<synth::MultiViewClip> clips;
  for (int subject = 0; subject < subjects; ++subject) {
    for (const auto& name : scenario_names) {
      synth::SceneConfig scene = base;
      scene.scenario = synth::scenario_from_string(name);
      scene.hr_base = subjects > 1
                          ? hr_min + (hr_max - hr_min) * subject / (subjects - 1)
                          : hr_min;
      scene.seed = mix_seed(seed, static_cast<std::uint64_t>(subject) * 8 +
                                      static_cast<std::uint64_t>(scene.scenario));
      auto clip = synth::render_clip(scene);
      clip.subject = subject;
      clips.push_back(std::move(clip));
    }
  }
  synth::write_dataset(clips, out);
  std::printf("wrote %zu clips to %s\n", clips.size(), out.string().c_str());
  return 0;
}

// ------------------------------------------------------------------- train

nets::TrainConfig train_config_from(const json& cfg, const CommonFlags& flags) {
  nets::TrainConfig tc;
  tc.dataset_dir = cfg.at("dataset").get<std::string>();
  tc.scenario = scenario_filter(flags.scenario.value_or(get_or<std::string>(cfg, "scenario", "all")));
  tc.views = bench::view_mask_from_string(flags.views.value_or(get_or<std::string>(cfg, "views", "lcr")));
  tc.split = get_or(cfg, "split", 0.8);
  tc.epochs = get_or(cfg, "epochs", 20);
  tc.lr = get_or(cfg, "lr", 1e-3);
  tc.lr_disc = get_or(cfg, "lr_disc", 1e-3);
  tc.train_frames = get_or(cfg, "train_frames", 300);
  tc.segments_k = get_or(cfg, "segments_k", 4);
  tc.crops_per_clip = get_or(cfg, "crops_per_clip", 1);
  tc.grad_clip = get_or(cfg, "grad_clip", 1.0);
  tc.use_atoc = get_or(cfg, "use_atoc", true);
  tc.use_mvca = get_or(cfg, "use_mvca", true);
  tc.use_pearson = get_or(cfg, "use_pearson", true);
  tc.use_psd = get_or(cfg, "use_psd", true);
  tc.use_gan = get_or(cfg, "use_gan", true);
  tc.seed = flags.seed.value_or(get_or<std::uint64_t>(cfg, "seed", 1));
  tc.out_dir = flags.out.value_or(cfg.at("out").get<std::string>());

  tc.model.seed = tc.seed;
  tc.model.backbone.c1 = get_or(cfg, "channels_c1", 16);
  tc.model.backbone.c2 = get_or(cfg, "channels_c2", 32);
  tc.model.backbone.feature_dim = get_or(cfg, "feature_dim", 16);
  tc.model.backbone.tokens_p = get_or(cfg, "tokens_p", 2);
  tc.model.mvca.gate_init = get_or(cfg, "gate_init", 0.5);
  tc.model.cfa.lambda_psd = get_or(cfg, "lambda_psd", 1.0);
  tc.model.cfa.lambda_g = get_or(cfg, "lambda_g", 0.1);
  return tc;
}

int cmd_train(const CommonFlags& flags) {
  const json cfg = load_config(flags.config);
  const auto tc = train_config_from(cfg, flags);
  const auto result = nets::train(tc);
  std::printf("checkpoint: %s\nlog: %s\nsteps: %zu, final total loss %.4f\n",
              result.checkpoint.string().c_str(), result.log_csv.string().c_str(),
              result.steps.size(), result.steps.empty() ? 0.0 : result.steps.back().total);
  return 0;
}

// -------------------------------------------------------------------- eval

bench::ExperimentConfig eval_config_from(const json& cfg, const CommonFlags& flags) {
  bench::ExperimentConfig ec;
  ec.dataset = cfg.at("dataset").get<std::string>();
  ec.scenario = scenario_filter(flags.scenario.value_or(get_or<std::string>(cfg, "scenario", "all")));
  ec.views = bench::view_mask_from_string(flags.views.value_or(get_or<std::string>(cfg, "views", "lcr")));
  ec.method = bench::method_from_string(get_or<std::string>(cfg, "method", "pos"));
  ec.split = get_or(cfg, "split", 0.8);
  ec.seed = flags.seed.value_or(get_or<std::uint64_t>(cfg, "seed", 1));
  ec.out_dir = flags.out.value_or(cfg.at("out").get<std::string>());
  ec.checkpoint = get_or<std::string>(cfg, "checkpoint", "");
  ec.window_frames = get_or(cfg, "window_frames", 300);
  ec.use_atoc = get_or(cfg, "use_atoc", true);
  ec.use_mvca = get_or(cfg, "use_mvca", true);
  if (cfg.contains("dump_masks")) ec.dump_masks = fs::path(cfg.at("dump_masks").get<std::string>());
  if (flags.dump_masks) ec.dump_masks = fs::path(*flags.dump_masks);
  ec.model.seed = get_or<std::uint64_t>(cfg, "model_seed", 1);
  ec.model.backbone.c1 = get_or(cfg, "channels_c1", 16);
  ec.model.backbone.c2 = get_or(cfg, "channels_c2", 32);
  ec.model.backbone.feature_dim = get_or(cfg, "feature_dim", 16);
  ec.model.backbone.tokens_p = get_or(cfg, "tokens_p", 2);
  return ec;
}

int cmd_eval(const CommonFlags& flags) {
  const json cfg = load_config(flags.config);
  const auto ec = eval_config_from(cfg, flags);
  const auto result = bench::run_experiment(ec);
  std::printf("%s", bench::human_table({result.row}).c_str());
  std::printf("metrics: %s\n", result.metrics_csv.string().c_str());
  return 0;
}

// ------------------------------------------------------------------ ablate

int cmd_ablate(const CommonFlags& flags) {
  const json cfg = load_config(flags.config);
  auto base = train_config_from(cfg, flags);
  const fs::path out_root = base.out_dir;

  struct Arm {
    std::string name;
    bool atoc, mvca, pearson, psd, gan;
    std::optional<std::string> views;  // fusion-less arms fall back to the center view
  };
  std::vector<Arm> arms;
  const auto groups =
      get_or<std::vector<std::string>>(cfg, "arms", {"structural", "loss"});
  arms.push_back({"full", true, true, true, true, true, std::nullopt});
  for (const auto& group : groups) {
    if (group == "structural") {
      arms.push_back({"wo_atoc_mvca", false, false, true, true, true, "c"});
      arms.push_back({"wo_atoc", false, true, true, true, true, std::nullopt});
      arms.push_back({"wo_mvca", true, false, true, true, true, "c"});
    } else if (group == "loss") {
      arms.push_back({"wo_pearson", true, true, false, true, true});
      arms.push_back({"wo_psd", true, true, true, false, true});
      arms.push_back({"wo_gan", true, true, true, true, false});
    } else {
      fail(errc::parameter, "unknown ablation group: " + group);
    }
  }

  std::vector<bench::ResultRow> rows;
  for (const auto& arm : arms) {
    nets::TrainConfig tc = base;
    tc.use_atoc = arm.atoc;
    tc.use_mvca = arm.mvca;
    tc.use_pearson = arm.pearson;
    tc.use_psd = arm.psd;
    tc.use_gan = arm.gan;
    if (arm.views) tc.views = bench::view_mask_from_string(*arm.views);
    tc.out_dir = out_root / arm.name;
    const auto trained = nets::train(tc);

    bench::ExperimentConfig ec;
    ec.dataset = tc.dataset_dir;
    ec.scenario = tc.scenario;
    ec.views = tc.views;
    ec.method = bench::Method::mvrd_rppg;
    ec.split = tc.split;
    ec.seed = tc.seed;
    ec.out_dir = out_root / arm.name / "eval";
    ec.checkpoint = trained.checkpoint;
    ec.model = tc.model;
    ec.use_atoc = arm.atoc;
    ec.use_mvca = arm.mvca;
    auto result = bench::run_experiment(ec);
    result.row.method = arm.name == "full" ? "mvrd_rppg" : "mvrd_rppg-" + arm.name;
    rows.push_back(result.row);
    std::printf("arm %-14s MAE %.4f RMSE %.4f R %.4f\n", arm.name.c_str(),
                result.row.metrics.mae, result.row.metrics.rmse, result.row.metrics.r);
  }
  bench::write_report(out_root / "ablation.csv", rows);
  std::ofstream table(out_root / "ablation.txt");
  table << bench::human_table(rows);
  std::printf("%s", bench::human_table(rows).c_str());
  return 0;
}

// ------------------------------------------------------------------ report

int cmd_report(const CommonFlags& flags, const std::vector<std::string>& inputs_flag) {
  std::vector<std::string> inputs = inputs_flag;
  fs::path out = flags.out.value_or("report");
  if (!flags.config.empty()) {
    const json cfg = load_config(flags.config);
    if (inputs.empty()) inputs = get_or<std::vector<std::string>>(cfg, "inputs", {});
    if (!flags.out) out = get_or<std::string>(cfg, "out", "report");
  }
  require(!inputs.empty(), errc::parameter, "report: no input CSV files");

  std::vector<bench::ResultRow> rows;
  for (const auto& path : inputs) {
    const auto part = bench::read_report(path);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  fs::create_directories(out);
  bench::write_report(out / "report.csv", rows);
  std::ofstream table(out / "report.txt");
  table << bench::human_table(rows);
  std::printf("%s", bench::human_table(rows).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view rPPG toolkit with a synthetic three-view benchmark"};
  app.require_subcommand(1);

  CommonFlags generate_flags, train_flags, eval_flags, ablate_flags, report_flags;
  std::vector<std::string> report_inputs;

  auto* generate = app.add_subcommand("generate", "Synthesize a three-view benchmark dataset");
  add_common(generate, generate_flags);
  auto* train = app.add_subcommand("train", "Train the fused estimator");
  add_common(train, train_flags);
  auto* eval = app.add_subcommand("eval", "Evaluate a method on the test split");
  add_common(eval, eval_flags);
  eval->add_option("--dump-masks", eval_flags.dump_masks,
                   "Write motion masks of one movement clip as PGM images");
  auto* ablate = app.add_subcommand("ablate", "Run component / loss ablation arms");
  add_common(ablate, ablate_flags);
  auto* report = app.add_subcommand("report", "Merge metric CSV files into one table");
  add_common(report, report_flags);
  report->add_option("--inputs", report_inputs, "Metric CSV files to merge");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(generate_flags);
    if (train->parsed()) return cmd_train(train_flags);
    if (eval->parsed()) return cmd_eval(eval_flags);
    if (ablate->parsed()) return cmd_ablate(ablate_flags);
    if (report->parsed()) return cmd_report(report_flags, report_inputs);
  } catch (const error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
