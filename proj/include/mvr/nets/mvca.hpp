#pragma once

#include "mvr/nets/dualstream.hpp"
#include "mvr/signal.hpp"

namespace mvr::nets {

/// Simplex weights over the three views derived from flow-noise scores.
struct ViewWeights {
  std::array<double, 3> w{1.0 / 3, 1.0 / 3, 1.0 / 3};
};

/// w_v = (1/(n_v+eps)) / sum_i 1/(n_i+eps); noisier views weigh less.
ViewWeights flow_noise_weights(double n_l, double n_c, double n_r, double eps = 1e-6);

struct MvcaConfig {
  int tokens_n = 4;     // N = P^2
  int feature_dim = 16; // D
  int heads = 2;        // temporal transformer heads
  int ffn_mult = 4;
  double gate_init = 0.5;  // raw beta; initial blend sigma(0.5) ~ 0.622
  double ln_eps = 1e-5;
};

/// Multi-view fusion stack: flow-noise-weighted aggregation, per-time-step
/// cross-view attention with a temporal transformer encoder, gated blending
/// and the per-token projection head.
class Mvca {
 public:
  Mvca(diff::ParamStore& store, std::string prefix, MvcaConfig cfg, Rng& init);

  /// Weighted sum of per-view (B,N,T) blocks followed by a kernel-3 temporal
  /// convolution.
  diff::Var aggregate_st(diff::Tape& tp, const std::array<diff::Var, 3>& s_views,
                         const ViewWeights& weights) const;

  /// f_stack (B,V,D,T) -> (B,N,T): per-step attention over views, view mean,
  /// sinusoidal positions + one transformer encoder layer over time, linear
  /// map to N tokens.
  diff::Var cross_view(diff::Tape& tp, diff::Var f_stack) const;

  /// sigma(beta) * s + (1 - sigma(beta)) * s_prime.
  diff::Var gated_fusion(diff::Tape& tp, diff::Var s, diff::Var s_prime) const;

  /// Per-token pointwise scale and bias (the 1x1 temporal convolution head).
  diff::Var project_head(diff::Tape& tp, diff::Var u) const;

  /// Token mean standardized over time: (B,N,T) -> (B,T).
  static diff::Var predict_rppg(diff::Tape& tp, diff::Var y);

  const MvcaConfig& config() const { return cfg_; }

 private:
  MvcaConfig cfg_;
  std::string prefix_;
};

/// Aligned (f_i, f'_i, g_i) time segments sampled from the two fused blocks.
struct SegmentTriplets {
  int count = 0;    // n = N * K (per batch item)
  int length = 0;   // samples per segment
  std::vector<diff::Var> f;        // from S
  std::vector<diff::Var> f_prime;  // from S'
  std::vector<diff::Tensor> g;     // ground-truth slices
  struct Range {
    int token = 0;
    int start = 0;
  };
  std::vector<Range> ranges;
};

/// Splits every token trace of S and S' into K non-overlapping segments of
/// length floor(T/K) (tail truncated) with time-aligned ground-truth slices.
SegmentTriplets segment_sampling(diff::Tape& tp, diff::Var s, diff::Var s_prime,
                                 const signal::TimeSeries& gt, int k);

/// Slices an extra (B,N,T) block with the same ranges as existing triplets.
std::vector<diff::Var> slice_like(diff::Tape& tp, diff::Var block,
                                  const SegmentTriplets& triplets);

}  // namespace mvr::nets
