#pragma once

#include "mvr/nets/mvca.hpp"

namespace mvr::nets {

struct CfaConfig {
  double lambda_psd = 1.0;
  double lambda_g = 0.1;
  double band_lo_hz = 0.7;
  double band_hi_hz = 4.0;
  double fs = 30.0;
};

/// Loss components of one step. total = pearson + lambda_psd * psd +
/// lambda_g * gen (terms removed by ablation enter with weight zero).
struct LossBundle {
  double pearson = 0.0;
  double psd = 0.0;
  double gen = 0.0;
  double disc = 0.0;
  double total = 0.0;
  double lambda_psd = 1.0;
  double lambda_g = 0.1;
  int degenerate_segments = 0;
};

/// Strided 1-D patch discriminator: 1 -> 16 -> 32 -> 1 channels, kernel 4,
/// stride 2, leaky slope 0.2; emits one least-squares score per patch.
class Discriminator {
 public:
  Discriminator(diff::ParamStore& store, std::string prefix, Rng& init);

  /// segments (M, 1, L) -> patch scores (M, 1, P).
  diff::Var forward(diff::Tape& tp, diff::Var segments) const;
  /// Same forward with the weights taken as constants (generator step).
  diff::Var forward_frozen(diff::Tape& tp, diff::Var segments,
                           const diff::ParamStore& disc_store) const;

  /// Smallest segment length the conv stack can score.
  static int min_segment_length();

 private:
  diff::Var stack(diff::Tape& tp, diff::Var x, const std::array<diff::Var, 6>& params) const;
  std::string prefix_;
};

/// Eq.-style Pearson correlation loss over the sampled triplets:
/// -(1/2n) sum_i [ r(f_i, g_i) + r(f'_i, g_i) ].
diff::Var pearson_loss(diff::Tape& tp, const SegmentTriplets& triplets, int* degenerate = nullptr);

/// Normalized in-band spectral distributions of every triplet member.
struct SpectralTriplets {
  std::vector<diff::Var> p;        // from f
  std::vector<diff::Var> p_prime;  // from f'
  std::vector<diff::Var> s;        // from g (constants)
  int bins = 0;
};
SpectralTriplets psd_triplets(diff::Tape& tp, const SegmentTriplets& triplets,
                              const diff::BandMatrix& bm, int* degenerate = nullptr);

/// (1/2n) sum_i ( ||p_i - s_i||^2 + ||p'_i - s_i||^2 ).
diff::Var psd_loss(diff::Tape& tp, const SpectralTriplets& spectral);

/// l_d = 1/2 E[(D(g) - 1)^2 + D(f)^2]; expectations over patches and batch.
diff::Var disc_loss(diff::Tape& tp, diff::Var d_real, diff::Var d_fake);

/// l_g = E[(D(f) - 1)^2].
diff::Var gen_loss(diff::Tape& tp, diff::Var d_fake);

/// total = pearson + lambda_psd * psd + lambda_g * gen.
LossBundle total_loss(double pearson, double psd, double gen, double disc,
                      double lambda_psd = 1.0, double lambda_g = 0.1);

}  // namespace mvr::nets
