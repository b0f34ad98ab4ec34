#include "mvr/nets/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mvr::nets {

using namespace diff;

FusedModel::FusedModel(ModelConfig cfg) : cfg_(cfg) {
  Rng init(mix_seed(cfg_.seed, 0x6e65));
  rhythm_ = std::make_unique<RhythmStream>(gen_store_, "rhythm", cfg_.backbone, init);
  visual_ = std::make_unique<VisualStream>(gen_store_, "visual", cfg_.backbone, init);
  MvcaConfig mvca_cfg = cfg_.mvca;
  mvca_cfg.tokens_n = cfg_.backbone.tokens_p * cfg_.backbone.tokens_p;
  mvca_cfg.feature_dim = cfg_.backbone.feature_dim;
  mvca_ = std::make_unique<Mvca>(gen_store_, "mvca", mvca_cfg, init);
  disc_ = std::make_unique<Discriminator>(disc_store_, "disc", init);
}

ForwardResult FusedModel::forward(Tape& tp, const ClipInput& input, bool use_mvca) const {
  std::array<Var, 3> s_views;
  for (int v = 0; v < 3; ++v) {
    Var x = tp.constant(input.views[static_cast<std::size_t>(v)]);
    s_views[static_cast<std::size_t>(v)] = rhythm_->forward(tp, x);
  }

  ForwardResult out;
  if (!use_mvca) {
    // structural ablation: plain average of the per-view blocks
    Var mean = scale(tp, add(tp, add(tp, s_views[0], s_views[1]), s_views[2]), 1.0 / 3.0);
    out.s = mean;
    out.s_prime = mean;
    out.u = mean;
    out.y = mean;
    out.prediction = Mvca::predict_rppg(tp, mean);
    return out;
  }

  std::array<Var, 3> f_views;
  for (int v = 0; v < 3; ++v) {
    Var x = tp.constant(input.views[static_cast<std::size_t>(v)]);
    f_views[static_cast<std::size_t>(v)] = visual_->forward(tp, x);
  }
  // stack features to (B, V, D, T)
  const Tensor& f0 = tp.val(f_views[0]);
  const int b = f0.shape[0], d = f0.shape[1], t = f0.shape[2];
  Var f_stack = stack_rows(tp, {f_views[0], f_views[1], f_views[2]});  // (V, B, D, T)
  f_stack = permute(tp, reshape(tp, f_stack, {3, b, d, t}), {1, 0, 2, 3});

  out.s = mvca_->aggregate_st(tp, s_views, input.weights);
  out.s_prime = mvca_->cross_view(tp, f_stack);
  out.u = mvca_->gated_fusion(tp, out.s, out.s_prime);
  out.y = mvca_->project_head(tp, out.u);
  out.prediction = Mvca::predict_rppg(tp, out.y);
  return out;
}

void FusedModel::save(const std::filesystem::path& gen_file,
                      const std::filesystem::path& disc_file) const {
  gen_store_.save(gen_file);
  disc_store_.save(disc_file);
}

void FusedModel::load(const std::filesystem::path& gen_file) { gen_store_.load(gen_file); }

ViewWeights masked_flow_noise_weights(const std::array<double, 3>& noise,
                                      const std::array<bool, 3>& live, double eps) {
  ViewWeights out;
  double total = 0.0;
  for (int v = 0; v < 3; ++v) {
    const auto idx = static_cast<std::size_t>(v);
    out.w[idx] = live[idx] ? 1.0 / (noise[idx] + eps) : 0.0;
    total += out.w[idx];
  }
  require(total > 0.0, errc::parameter, "view weights: no live view");
  for (auto& w : out.w) w /= total;
  return out;
}

PreparedClip prepare_clip(synth::MultiViewClip clip, const std::array<bool, 3>& available,
                          bool use_atoc, const atoc::AtocConfig& atoc_cfg) {
  require(available[0] || available[1] || available[2], errc::parameter,
          "prepare_clip: at least one view must be available");
  PreparedClip out;
  for (int v = 0; v < 3; ++v) {
    if (!available[static_cast<std::size_t>(v)]) {
      auto& video = clip.views[static_cast<std::size_t>(v)];
      std::fill(video.data.begin(), video.data.end(), 0);
    }
  }
  for (int v = 0; v < 3; ++v) {
    const auto& data = clip.views[static_cast<std::size_t>(v)].data;
    out.live[static_cast<std::size_t>(v)] =
        std::any_of(data.begin(), data.end(), [](std::uint8_t p) { return p != 0; });
  }
  if (use_atoc) {
    for (int v = 0; v < 3; ++v) {
      auto result = atoc::compensate_sequence(clip.views[static_cast<std::size_t>(v)],
                                              clip.keypoints[static_cast<std::size_t>(v)],
                                              clip.scenario, atoc_cfg);
      clip.views[static_cast<std::size_t>(v)] = std::move(result.frames);
      out.flow_noise[static_cast<std::size_t>(v)] = result.flow_noise;
    }
  }
  out.clip = std::move(clip);
  return out;
}

Tensor frames_to_tensor(const synth::Video& video, int t0, int len) {
  require(t0 >= 0 && len >= 1 && t0 + len <= video.t, errc::parameter,
          "frames_to_tensor: window out of range");
  Tensor out({1, 3, video.h, video.w, len});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < video.h; ++y)
      for (int x = 0; x < video.w; ++x) {
        double* dst = out.data.data() +
                      (((static_cast<std::size_t>(c) * video.h + y) * video.w + x) *
                       static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i)
          dst[i] = static_cast<double>(video.at(t0 + i, y, x, c)) / 127.5 - 1.0;
      }
  return out;
}

ClipInput make_input(const PreparedClip& prepared, int t0, int len) {
  ClipInput input;
  for (int v = 0; v < 3; ++v)
    input.views[static_cast<std::size_t>(v)] =
        frames_to_tensor(prepared.clip.views[static_cast<std::size_t>(v)], t0, len);
  input.weights = masked_flow_noise_weights(prepared.flow_noise, prepared.live);
  input.gt.fs = prepared.clip.gt_ppg.fs;
  input.gt.samples.assign(prepared.clip.gt_ppg.samples.begin() + t0,
                          prepared.clip.gt_ppg.samples.begin() + t0 + len);
  return input;
}

signal::TimeSeries predict_window(const FusedModel& model, const PreparedClip& prepared, int t0,
                                  int len, bool use_mvca) {
  Tape tp(const_cast<ParamStore*>(&model.generator_params()));
  const ClipInput input = make_input(prepared, t0, len);
  const ForwardResult fwd = model.forward(tp, input, use_mvca);
  signal::TimeSeries out;
  out.fs = prepared.clip.gt_ppg.fs;
  out.samples = tp.val(fwd.prediction).data;
  return out;
}

void TrainConfig::validate() const {
  require(split > 0.0 && split < 1.0, errc::parameter, "train: split must be in (0,1)");
  require(epochs >= 1, errc::parameter, "train: epochs must be >= 1");
  require(train_frames >= 8, errc::parameter, "train: need at least 8 frames");
  require(segments_k >= 1, errc::parameter, "train: segments_k must be >= 1");
  const int seg_len = train_frames / segments_k;
  if (use_psd)
    require(seg_len >= 32, errc::parameter,
            "train: spectral loss needs segments of >= 32 samples (train_frames/k)");
  if (use_gan)
    require(seg_len >= Discriminator::min_segment_length(), errc::parameter,
            "train: discriminator needs segments of >= 16 samples");
}

DatasetSplit split_dataset(const synth::DatasetManifest& manifest,
                           std::optional<synth::Scenario> scenario, double split) {
  require(split > 0.0 && split < 1.0, errc::parameter, "split must be in (0,1)");
  std::vector<synth::ClipEntry> filtered;
  for (const auto& entry : manifest.clips)
    if (!scenario || entry.scenario == *scenario) filtered.push_back(entry);
  std::stable_sort(filtered.begin(), filtered.end(),
                   [](const synth::ClipEntry& a, const synth::ClipEntry& b) {
                     if (a.subject != b.subject) return a.subject < b.subject;
                     return a.id < b.id;
                   });
  // split along subjects so train/test stay disjoint across scenario filters
  std::vector<int> subjects;
  for (const auto& entry : filtered)
    if (subjects.empty() || subjects.back() != entry.subject) subjects.push_back(entry.subject);
  const auto n_train_subjects =
      static_cast<std::size_t>(split * static_cast<double>(subjects.size()));
  DatasetSplit out;
  for (const auto& entry : filtered) {
    const auto pos = static_cast<std::size_t>(
        std::find(subjects.begin(), subjects.end(), entry.subject) - subjects.begin());
    (pos < n_train_subjects ? out.train : out.test).push_back(entry);
  }
  return out;
}

namespace {

bool all_finite(const LossBundle& l) {
  return std::isfinite(l.pearson) && std::isfinite(l.psd) && std::isfinite(l.gen) &&
         std::isfinite(l.disc) && std::isfinite(l.total);
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);

  const auto manifest = synth::read_manifest(cfg.dataset_dir);
  const auto split = split_dataset(manifest, cfg.scenario, cfg.split);
  require(!split.train.empty(), errc::data, "train: no training clips after the split");

  std::vector<PreparedClip> clips;
  clips.reserve(split.train.size());
  for (const auto& entry : split.train)
    clips.push_back(
        prepare_clip(synth::read_clip(cfg.dataset_dir, entry), cfg.views, cfg.use_atoc));

  FusedModel model(cfg.model);
  const int n = model.config().backbone.tokens_p * model.config().backbone.tokens_p;
  (void)n;

  TrainResult result;
  result.checkpoint = cfg.out_dir / "model.mvp";
  result.disc_checkpoint = cfg.out_dir / "model_disc.mvp";
  result.log_csv = cfg.out_dir / "train_log.csv";

  std::ofstream log(result.log_csv);
  require(log.good(), errc::data, "train: cannot write " + result.log_csv.string());
  log << "step,l_pearson,l_psd,l_g,l_d,l_total,lr,seed\n";
  char row[256];

  Rng crop_rng(mix_seed(cfg.seed, 0xc509));
  const int seg_len = cfg.train_frames / cfg.segments_k;
  const BandMatrix band = make_band_matrix(seg_len, manifest.fps, cfg.model.cfa.band_lo_hz,
                                           cfg.model.cfa.band_hi_hz);

  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& prepared : clips) {
      for (int crop = 0; crop < cfg.crops_per_clip; ++crop) {
        const int clip_t = prepared.clip.views[0].t;
        const int len = std::min(cfg.train_frames, clip_t);
        const int max_start = clip_t - len;
        const int t0 =
            max_start > 0
                ? static_cast<int>(crop_rng.integer(static_cast<std::uint64_t>(max_start) + 1))
                : 0;
        const ClipInput input = make_input(prepared, t0, len);

        LossBundle losses;
        losses.lambda_psd = cfg.use_psd ? cfg.model.cfa.lambda_psd : 0.0;
        losses.lambda_g = cfg.use_gan ? cfg.model.cfa.lambda_g : 0.0;

        Tape tape(&model.generator_params());
        const ForwardResult fwd = model.forward(tape, input, cfg.use_mvca);
        SegmentTriplets triplets =
            segment_sampling(tape, fwd.s, fwd.s_prime, input.gt, cfg.segments_k);
        const std::vector<Var> y_segments = slice_like(tape, fwd.y, triplets);

        // ---- discriminator step (real: g segments, fake: prediction segments)
        if (cfg.use_gan) {
          Tensor real({triplets.count, 1, triplets.length});
          Tensor fake({triplets.count, 1, triplets.length});
          for (int i = 0; i < triplets.count; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            std::copy_n(triplets.g[idx].data.data(), triplets.length,
                        real.data.data() + idx * static_cast<std::size_t>(triplets.length));
            std::copy_n(tape.val(y_segments[idx]).data.data(), triplets.length,
                        fake.data.data() + idx * static_cast<std::size_t>(triplets.length));
          }
          Tape dt(&model.discriminator_params());
          Var d_real = model.discriminator().forward(dt, dt.constant(std::move(real)));
          Var d_fake = model.discriminator().forward(dt, dt.constant(std::move(fake)));
          Var l_d = disc_loss(dt, d_real, d_fake);
          losses.disc = dt.scalar(l_d);
          model.discriminator_params().zero_grad();
          dt.backward(l_d);
          if (cfg.grad_clip > 0.0) model.discriminator_params().clip_grad_norm(cfg.grad_clip);
          model.discriminator_params().adam_step(cfg.lr_disc);
        }

        // ---- generator step
        int degenerate = 0;
        Var l_pearson = pearson_loss(tape, triplets, &degenerate);
        const SpectralTriplets spectral = psd_triplets(tape, triplets, band, &degenerate);
        Var l_psd = psd_loss(tape, spectral);
        losses.pearson = tape.scalar(l_pearson);
        losses.psd = tape.scalar(l_psd);
        losses.degenerate_segments = degenerate;

        std::vector<Var> total_terms;
        if (cfg.use_pearson) total_terms.push_back(l_pearson);
        if (cfg.use_psd) total_terms.push_back(scale(tape, l_psd, cfg.model.cfa.lambda_psd));
        if (cfg.use_gan) {
          Var fake_stack = stack_rows(tape, y_segments);  // (M, L)
          fake_stack = reshape(tape, fake_stack, {triplets.count, 1, triplets.length});
          Var d_fake = model.discriminator().forward_frozen(tape, fake_stack,
                                                            model.discriminator_params());
          Var l_g = gen_loss(tape, d_fake);
          losses.gen = tape.scalar(l_g);
          total_terms.push_back(scale(tape, l_g, cfg.model.cfa.lambda_g));
        }
        require(!total_terms.empty(), errc::parameter, "train: every loss term disabled");
        Var l_total = add_many(tape, total_terms);
        losses.total = tape.scalar(l_total);
        // consistency with the scalar composition rule
        const LossBundle composed =
            total_loss(cfg.use_pearson ? losses.pearson : 0.0, losses.psd, losses.gen,
                       losses.disc, losses.lambda_psd, losses.lambda_g);
        require(std::abs(composed.total - losses.total) <= 1e-9 + 1e-9 * std::abs(losses.total),
                errc::numeric, "train: loss composition mismatch");

        if (!all_finite(losses)) {
          log.close();
          fail(errc::numeric,
               "train: non-finite loss at step " + std::to_string(step) +
                   "; last-good checkpoint: " + result.checkpoint.string());
        }

        model.generator_params().zero_grad();
        tape.backward(l_total);
        if (cfg.grad_clip > 0.0) model.generator_params().clip_grad_norm(cfg.grad_clip);
        model.generator_params().adam_step(cfg.lr);

        std::snprintf(row, sizeof(row), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%llu\n", step,
                      losses.pearson, losses.psd, losses.gen, losses.disc, losses.total, cfg.lr,
                      static_cast<unsigned long long>(cfg.seed));
        log << row;
        result.steps.push_back(losses);
        ++step;
      }
    }
    model.save(result.checkpoint, result.disc_checkpoint);  // last-good checkpoint
  }
  log.close();
  return result;
}

}  // namespace mvr::nets
