#include "mvr/nets/cfa.hpp"

namespace mvr::nets {

using namespace diff;

Discriminator::Discriminator(ParamStore& store, std::string prefix, Rng& init)
    : prefix_(std::move(prefix)) {
  auto add_conv = [&](const std::string& name, int co, int ci) {
    store.add(name + ".w", xavier({co, ci, 4}, static_cast<std::size_t>(ci) * 4,
                                  static_cast<std::size_t>(co) * 4, init));
    store.add(name + ".b", Tensor::zeros({co}));
  };
  add_conv(prefix_ + ".c1", 16, 1);
  add_conv(prefix_ + ".c2", 32, 16);
  add_conv(prefix_ + ".c3", 1, 32);
}

int Discriminator::min_segment_length() { return 16; }

Var Discriminator::stack(Tape& tp, Var x, const std::array<Var, 6>& params) const {
  Var h = conv1d(tp, x, params[0], params[1], 2, 1);
  h = leaky_relu(tp, h, 0.2);
  h = conv1d(tp, h, params[2], params[3], 2, 1);
  h = leaky_relu(tp, h, 0.2);
  return conv1d(tp, h, params[4], params[5], 2, 1);  // per-patch scores
}

Var Discriminator::forward(Tape& tp, Var segments) const {
  return stack(tp, segments,
               {tp.param(prefix_ + ".c1.w"), tp.param(prefix_ + ".c1.b"),
                tp.param(prefix_ + ".c2.w"), tp.param(prefix_ + ".c2.b"),
                tp.param(prefix_ + ".c3.w"), tp.param(prefix_ + ".c3.b")});
}

Var Discriminator::forward_frozen(Tape& tp, Var segments, const ParamStore& disc_store) const {
  auto frozen = [&](const std::string& name) { return tp.constant(disc_store.at(name).value); };
  return stack(tp, segments,
               {frozen(prefix_ + ".c1.w"), frozen(prefix_ + ".c1.b"), frozen(prefix_ + ".c2.w"),
                frozen(prefix_ + ".c2.b"), frozen(prefix_ + ".c3.w"), frozen(prefix_ + ".c3.b")});
}

Var pearson_loss(Tape& tp, const SegmentTriplets& triplets, int* degenerate) {
  require(triplets.count >= 1, errc::parameter, "pearson_loss: no segments");
  require(triplets.length >= 2, errc::parameter, "pearson_loss: segments too short");
  std::vector<Var> terms;
  terms.reserve(2 * static_cast<std::size_t>(triplets.count));
  for (int i = 0; i < triplets.count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    terms.push_back(pearson_corr(tp, triplets.f[idx], triplets.g[idx], degenerate));
    terms.push_back(pearson_corr(tp, triplets.f_prime[idx], triplets.g[idx], degenerate));
  }
  return scale(tp, add_many(tp, terms), -1.0 / (2.0 * static_cast<double>(triplets.count)));
}

SpectralTriplets psd_triplets(Tape& tp, const SegmentTriplets& triplets, const BandMatrix& bm,
                              int* degenerate) {
  require(triplets.length >= 32, errc::parameter, "psd_triplets: segments must be >= 32 samples");
  require(bm.n == triplets.length, errc::parameter, "psd_triplets: band matrix length mismatch");
  SpectralTriplets out;
  out.bins = bm.bins();
  auto spectrum = [&](Var x) {
    return normalize_sum(tp, band_power(tp, standardize_lastdim(tp, x), bm), degenerate);
  };
  for (int i = 0; i < triplets.count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out.p.push_back(spectrum(triplets.f[idx]));
    out.p_prime.push_back(spectrum(triplets.f_prime[idx]));
    out.s.push_back(spectrum(tp.constant(triplets.g[idx])));
  }
  return out;
}

Var psd_loss(Tape& tp, const SpectralTriplets& spectral) {
  const std::size_t n = spectral.p.size();
  require(n >= 1, errc::parameter, "psd_loss: no spectra");
  std::vector<Var> terms;
  terms.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    terms.push_back(sum_all(tp, square(tp, sub(tp, spectral.p[i], spectral.s[i]))));
    terms.push_back(sum_all(tp, square(tp, sub(tp, spectral.p_prime[i], spectral.s[i]))));
  }
  return scale(tp, add_many(tp, terms), 1.0 / (2.0 * static_cast<double>(n)));
}

Var disc_loss(Tape& tp, Var d_real, Var d_fake) {
  Var real_term = mean_all(tp, square(tp, add_scalar(tp, d_real, -1.0)));
  Var fake_term = mean_all(tp, square(tp, d_fake));
  return scale(tp, add(tp, real_term, fake_term), 0.5);
}

Var gen_loss(Tape& tp, Var d_fake) {
  return mean_all(tp, square(tp, add_scalar(tp, d_fake, -1.0)));
}

LossBundle total_loss(double pearson, double psd, double gen, double disc, double lambda_psd,
                      double lambda_g) {
  LossBundle out;
  out.pearson = pearson;
  out.psd = psd;
  out.gen = gen;
  out.disc = disc;
  out.lambda_psd = lambda_psd;
  out.lambda_g = lambda_g;
  out.total = pearson + lambda_psd * psd + lambda_g * gen;
  return out;
}

}  // namespace mvr::nets
