#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "mvr/atoc.hpp"
#include "mvr/dataset.hpp"
#include "mvr/nets/cfa.hpp"

namespace mvr::nets {

struct ModelConfig {
  BackboneConfig backbone;
  MvcaConfig mvca;
  CfaConfig cfa;
  std::uint64_t seed = 1;
};

/// One clip windowed and scaled for the network.
struct ClipInput {
  std::array<diff::Tensor, 3> views;  // (1, 3, H, W, len), values in [-1, 1]
  ViewWeights weights;
  signal::TimeSeries gt;  // aligned window of the ground truth
};

struct ForwardResult {
  diff::Var s;           // aggregated block (B,N,T)
  diff::Var s_prime;     // attention block (B,N,T)
  diff::Var u;           // gated blend
  diff::Var y;           // projection head output
  diff::Var prediction;  // (B,T), standardized
};

/// Dual-stream feature extraction plus the fusion stack and discriminator,
/// with generator and discriminator parameters held in separate stores.
class FusedModel {
 public:
  explicit FusedModel(ModelConfig cfg);

  /// use_mvca = false collapses the fusion stack to the plain view mean
  /// (structural ablation arm); s, s_prime, u and y then all alias it.
  ForwardResult forward(diff::Tape& tp, const ClipInput& input, bool use_mvca = true) const;

  diff::ParamStore& generator_params() { return gen_store_; }
  const diff::ParamStore& generator_params() const { return gen_store_; }
  diff::ParamStore& discriminator_params() { return disc_store_; }
  const Discriminator& discriminator() const { return *disc_; }
  const Mvca& mvca() const { return *mvca_; }
  const ModelConfig& config() const { return cfg_; }

  void save(const std::filesystem::path& gen_file, const std::filesystem::path& disc_file) const;
  void load(const std::filesystem::path& gen_file);

 private:
  ModelConfig cfg_;
  diff::ParamStore gen_store_;
  diff::ParamStore disc_store_;
  std::unique_ptr<RhythmStream> rhythm_;
  std::unique_ptr<VisualStream> visual_;
  std::unique_ptr<Mvca> mvca_;
  std::unique_ptr<Discriminator> disc_;
};

/// Clip after view masking and motion compensation.
struct PreparedClip {
  synth::MultiViewClip clip;
  std::array<double, 3> flow_noise{0.0, 0.0, 0.0};
  std::array<bool, 3> live{true, true, true};  // false for identically-zero views
};

/// Flow-noise weights restricted to live views; dead views get weight zero
/// so an absent camera cannot dominate the aggregation.
ViewWeights masked_flow_noise_weights(const std::array<double, 3>& noise,
                                      const std::array<bool, 3>& live, double eps = 1e-6);

/// Zeroes unavailable views, then runs temporal optical compensation on the
/// movement scenario (when enabled) and collects per-view flow-noise scores.
PreparedClip prepare_clip(synth::MultiViewClip clip, const std::array<bool, 3>& available,
                          bool use_atoc, const atoc::AtocConfig& atoc_cfg = {});

/// (1, 3, H, W, len) tensor over [t0, t0+len), scaled to [-1, 1].
diff::Tensor frames_to_tensor(const synth::Video& video, int t0, int len);

ClipInput make_input(const PreparedClip& prepared, int t0, int len);

/// Fused-model prediction for one window of a prepared clip.
signal::TimeSeries predict_window(const FusedModel& model, const PreparedClip& prepared, int t0,
                                  int len, bool use_mvca = true);

struct TrainConfig {
  ModelConfig model;
  std::filesystem::path dataset_dir;
  std::optional<synth::Scenario> scenario;  // nullopt = all scenarios
  std::array<bool, 3> views{true, true, true};
  double split = 0.8;  // leading fraction of clips used for training
  int epochs = 20;
  double lr = 1e-3;
  double lr_disc = 1e-3;
  double grad_clip = 1.0;  // global gradient-norm bound, <= 0 disables
  int train_frames = 300;  // clip length per step; toy runs shrink this
  int segments_k = 4;
  int crops_per_clip = 1;
  bool use_atoc = true;
  bool use_mvca = true;
  bool use_pearson = true;
  bool use_psd = true;
  bool use_gan = true;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;

  void validate() const;
};

struct TrainResult {
  std::filesystem::path checkpoint;       // generator parameters
  std::filesystem::path disc_checkpoint;  // discriminator parameters
  std::filesystem::path log_csv;
  std::vector<LossBundle> steps;
};

/// Deterministic alternating GAN training; one discriminator step then one
/// generator step per clip crop. Appends one CSV row per step.
TrainResult train(const TrainConfig& cfg);

/// Clips selected by the split rule: leading fraction trains, rest tests.
struct DatasetSplit {
  std::vector<synth::ClipEntry> train;
  std::vector<synth::ClipEntry> test;
};
DatasetSplit split_dataset(const synth::DatasetManifest& manifest,
                           std::optional<synth::Scenario> scenario, double split);

}  // namespace mvr::nets
