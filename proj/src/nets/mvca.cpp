#include "mvr/nets/mvca.hpp"

#include <cmath>

namespace mvr::nets {

using namespace diff;

ViewWeights flow_noise_weights(double n_l, double n_c, double n_r, double eps) {
  require(n_l >= 0.0 && n_c >= 0.0 && n_r >= 0.0, errc::parameter,
          "flow_noise_weights: scores must be non-negative");
  ViewWeights out;
  const std::array<double, 3> inv = {1.0 / (n_l + eps), 1.0 / (n_c + eps), 1.0 / (n_r + eps)};
  const double total = inv[0] + inv[1] + inv[2];
  for (int v = 0; v < 3; ++v) out.w[static_cast<std::size_t>(v)] = inv[static_cast<std::size_t>(v)] / total;
  return out;
}

Mvca::Mvca(ParamStore& store, std::string prefix, MvcaConfig cfg, Rng& init)
    : cfg_(cfg), prefix_(std::move(prefix)) {
  const int n = cfg_.tokens_n;
  const int d = cfg_.feature_dim;
  // aggregation conv over time (N channels, kernel 3)
  store.add(prefix_ + ".agg.w",
            xavier({n, n, 3}, static_cast<std::size_t>(n) * 3, static_cast<std::size_t>(n) * 3,
                   init));
  store.add(prefix_ + ".agg.b", Tensor::zeros({n}));
  // cross-view attention projections
  for (const char* name : {".wq", ".wk", ".wv"})
    store.add(prefix_ + name, xavier({d, d}, static_cast<std::size_t>(d),
                                     static_cast<std::size_t>(d), init));
  // temporal transformer encoder layer
  for (const char* name : {".t.wq", ".t.wk", ".t.wv", ".t.wo"})
    store.add(prefix_ + name, xavier({d, d}, static_cast<std::size_t>(d),
                                     static_cast<std::size_t>(d), init));
  store.add(prefix_ + ".t.ln1.g", Tensor::full({d}, 1.0));
  store.add(prefix_ + ".t.ln1.b", Tensor::zeros({d}));
  const int hidden = cfg_.ffn_mult * d;
  store.add(prefix_ + ".t.ffn1.w", xavier({hidden, d}, static_cast<std::size_t>(d),
                                          static_cast<std::size_t>(hidden), init));
  store.add(prefix_ + ".t.ffn1.b", Tensor::zeros({hidden}));
  store.add(prefix_ + ".t.ffn2.w", xavier({d, hidden}, static_cast<std::size_t>(hidden),
                                          static_cast<std::size_t>(d), init));
  store.add(prefix_ + ".t.ffn2.b", Tensor::zeros({d}));
  store.add(prefix_ + ".t.ln2.g", Tensor::full({d}, 1.0));
  store.add(prefix_ + ".t.ln2.b", Tensor::zeros({d}));
  // token projection of the encoded sequence
  store.add(prefix_ + ".tok.w", xavier({n, d}, static_cast<std::size_t>(d),
                                       static_cast<std::size_t>(n), init));
  store.add(prefix_ + ".tok.b", Tensor::zeros({n}));
  // scalar gate and the per-token pointwise head (identity at init)
  store.add(prefix_ + ".beta", Tensor::scalar(cfg_.gate_init));
  store.add(prefix_ + ".head.w", Tensor::full({n}, 1.0));
  store.add(prefix_ + ".head.b", Tensor::zeros({n}));
}

Var Mvca::aggregate_st(Tape& tp, const std::array<Var, 3>& s_views,
                       const ViewWeights& weights) const {
  Var sum = scale(tp, s_views[0], weights.w[0]);
  sum = add(tp, sum, scale(tp, s_views[1], weights.w[1]));
  sum = add(tp, sum, scale(tp, s_views[2], weights.w[2]));
  return conv1d(tp, sum, tp.param(prefix_ + ".agg.w"), tp.param(prefix_ + ".agg.b"), 1, 1);
}

Var Mvca::cross_view(Tape& tp, Var f_stack) const {
  const Tensor& tf = tp.val(f_stack);
  require(tf.rank() == 4 && tf.shape[1] == 3, errc::parameter,
          "cross_view: input must be (B,3,D,T)");
  const int b = tf.shape[0];
  const int d = tf.shape[2];
  const int t = tf.shape[3];
  require(d == cfg_.feature_dim, errc::parameter, "cross_view: feature size mismatch");

  Var attended = cross_view_attention_core(tp, f_stack, tp.param(prefix_ + ".wq"),
                                           tp.param(prefix_ + ".wk"), tp.param(prefix_ + ".wv"));
  Var fused = mean_axis(tp, attended, 1);       // (B, D, T)
  Var seq = permute(tp, fused, {0, 2, 1});      // (B, T, D)

  // sinusoidal positions so the encoder can use temporal order
  Tensor pe({b, t, d});
  for (int bi = 0; bi < b; ++bi)
    for (int ti = 0; ti < t; ++ti)
      for (int di = 0; di < d; ++di) {
        const double rate = std::pow(10000.0, -2.0 * (di / 2) / static_cast<double>(d));
        const double ang = ti * rate;
        pe.data[(static_cast<std::size_t>(bi) * t + ti) * d + di] =
            (di % 2 == 0) ? std::sin(ang) : std::cos(ang);
      }
  seq = add(tp, seq, tp.constant(std::move(pe)));

  // post-norm transformer encoder layer
  Var attn = mha_time(tp, seq, tp.param(prefix_ + ".t.wq"), tp.param(prefix_ + ".t.wk"),
                      tp.param(prefix_ + ".t.wv"), tp.param(prefix_ + ".t.wo"), cfg_.heads);
  Var x1 = layer_norm_lastdim(tp, add(tp, seq, attn), tp.param(prefix_ + ".t.ln1.g"),
                              tp.param(prefix_ + ".t.ln1.b"), cfg_.ln_eps);
  Var ff = linear(tp, x1, tp.param(prefix_ + ".t.ffn1.w"), tp.param(prefix_ + ".t.ffn1.b"));
  ff = relu(tp, ff);
  ff = linear(tp, ff, tp.param(prefix_ + ".t.ffn2.w"), tp.param(prefix_ + ".t.ffn2.b"));
  Var x2 = layer_norm_lastdim(tp, add(tp, x1, ff), tp.param(prefix_ + ".t.ln2.g"),
                              tp.param(prefix_ + ".t.ln2.b"), cfg_.ln_eps);

  Var tokens = linear(tp, x2, tp.param(prefix_ + ".tok.w"), tp.param(prefix_ + ".tok.b"));
  return permute(tp, tokens, {0, 2, 1});  // (B, N, T)
}

Var Mvca::gated_fusion(Tape& tp, Var s, Var s_prime) const {
  return gated_blend(tp, s, s_prime, tp.param(prefix_ + ".beta"));
}

Var Mvca::project_head(Tape& tp, Var u) const {
  return channel_affine(tp, u, tp.param(prefix_ + ".head.w"), tp.param(prefix_ + ".head.b"));
}

Var Mvca::predict_rppg(Tape& tp, Var y) {
  Var mean = mean_axis(tp, y, 1);  // (B, T)
  return standardize_lastdim(tp, mean);
}

SegmentTriplets segment_sampling(Tape& tp, Var s, Var s_prime, const signal::TimeSeries& gt,
                                 int k) {
  const Tensor& ts = tp.val(s);
  const Tensor& tsp = tp.val(s_prime);
  require(ts.shape == tsp.shape, errc::parameter, "segment_sampling: block shape mismatch");
  require(ts.rank() == 3, errc::parameter, "segment_sampling: blocks must be (B,N,T)");
  const int b = ts.shape[0];
  const int n_tokens = ts.shape[1];
  const int t = ts.shape[2];
  require(k >= 1 && k <= t, errc::parameter, "segment_sampling: K must be in [1, T]");
  require(static_cast<int>(gt.samples.size()) == t, errc::parameter,
          "segment_sampling: ground truth not aligned with T");

  SegmentTriplets out;
  out.length = t / k;  // tail truncated when K does not divide T

  Var flat_s = reshape(tp, s, {b * n_tokens, t});
  Var flat_sp = reshape(tp, s_prime, {b * n_tokens, t});
  for (int row = 0; row < b * n_tokens; ++row)
    for (int seg = 0; seg < k; ++seg) {
      const int start = seg * out.length;
      out.ranges.push_back({row, start});
      out.f.push_back(slice_row_segment(tp, flat_s, row, start, out.length));
      out.f_prime.push_back(slice_row_segment(tp, flat_sp, row, start, out.length));
      Tensor g_slice({out.length});
      std::copy_n(gt.samples.data() + start, out.length, g_slice.data.data());
      out.g.push_back(std::move(g_slice));
    }
  out.count = static_cast<int>(out.ranges.size());
  return out;
}

std::vector<Var> slice_like(Tape& tp, Var block, const SegmentTriplets& triplets) {
  const Tensor& tb = tp.val(block);
  require(tb.rank() == 3, errc::parameter, "slice_like: block must be (B,N,T)");
  Var flat = reshape(tp, block, {tb.shape[0] * tb.shape[1], tb.shape[2]});
  std::vector<Var> out;
  out.reserve(triplets.ranges.size());
  for (const auto& range : triplets.ranges)
    out.push_back(slice_row_segment(tp, flat, range.token, range.start, triplets.length));
  return out;
}

}  // namespace mvr::nets
