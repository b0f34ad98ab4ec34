#include "mvr/nets/dualstream.hpp"

#include <cmath>

namespace mvr::nets {

using namespace diff;

Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data) v = rng.uniform(-a, a);
  return t;
}

namespace {

void add_conv(ParamStore& store, const std::string& name, int co, int ci, int kh, int kw, int kt,
              Rng& rng) {
  const std::size_t k = static_cast<std::size_t>(kh) * kw * kt;
  store.add(name + ".w",
            xavier({co, ci, kh, kw, kt}, static_cast<std::size_t>(ci) * k,
                   static_cast<std::size_t>(co) * k, rng));
  store.add(name + ".b", Tensor::zeros({co}));
}

void add_ln(ParamStore& store, const std::string& name, int channels) {
  store.add(name + ".g", Tensor::full({channels}, 1.0));
  store.add(name + ".b", Tensor::zeros({channels}));
}

}  // namespace

Backbone::Backbone(ParamStore& store, std::string prefix, BackboneConfig cfg, Rng& init)
    : cfg_(cfg), prefix_(std::move(prefix)) {
  add_conv(store, prefix_ + ".stem", cfg_.c1, cfg_.in_channels, 3, 3, 3, init);
  add_ln(store, prefix_ + ".stem.ln", cfg_.c1);
  add_conv(store, prefix_ + ".down1", cfg_.c2, cfg_.c1, 3, 3, 3, init);
  add_ln(store, prefix_ + ".down1.ln", cfg_.c2);
  add_conv(store, prefix_ + ".down2", cfg_.c2, cfg_.c2, 3, 3, 3, init);
  add_ln(store, prefix_ + ".down2.ln", cfg_.c2);
  add_conv(store, prefix_ + ".mid", cfg_.c2, cfg_.c2, 3, 3, 3, init);
  add_ln(store, prefix_ + ".mid.ln", cfg_.c2);
  add_conv(store, prefix_ + ".up1", cfg_.c2, cfg_.c2, 3, 3, 3, init);
  add_ln(store, prefix_ + ".up1.ln", cfg_.c2);
  add_conv(store, prefix_ + ".up2", cfg_.c1, cfg_.c2, 3, 3, 3, init);
  add_ln(store, prefix_ + ".up2.ln", cfg_.c1);
}

Var Backbone::conv_ln_relu(Tape& tp, Var x, const std::string& name,
                           std::array<int, 3> stride) const {
  Var y = conv3d(tp, x, tp.param(name + ".w"), tp.param(name + ".b"), stride, {1, 1, 1});
  y = layer_norm_dim1(tp, y, tp.param(name + ".ln.g"), tp.param(name + ".ln.b"), cfg_.ln_eps);
  return relu(tp, y);
}

Var Backbone::decode(Tape& tp, Var x) const {
  const Tensor& tx = tp.val(x);
  require(tx.rank() == 5, errc::parameter, "backbone: input must be (B,C,H,W,T)");
  require(tx.shape[2] >= 16 && tx.shape[3] >= 16, errc::parameter,
          "backbone: spatial size must be at least 16x16");
  require(tx.shape[4] >= 8, errc::parameter, "backbone: need at least 8 frames");

  Var h0 = conv_ln_relu(tp, x, prefix_ + ".stem", {2, 2, 1});
  const int t0 = tp.val(h0).shape[4];
  Var h1 = conv_ln_relu(tp, h0, prefix_ + ".down1", {2, 2, 2});
  const int t1 = tp.val(h1).shape[4];
  Var h2 = conv_ln_relu(tp, h1, prefix_ + ".down2", {2, 2, 2});

  Var mid = conv_ln_relu(tp, h2, prefix_ + ".mid", {1, 1, 1});
  mid = add(tp, mid, h2);  // residual transformation block

  Var u1 = upsample_lastdim(tp, mid, t1);
  u1 = conv_ln_relu(tp, u1, prefix_ + ".up1", {1, 1, 1});
  Var u2 = upsample_lastdim(tp, u1, t0);
  u2 = conv_ln_relu(tp, u2, prefix_ + ".up2", {1, 1, 1});
  return u2;
}

RhythmStream::RhythmStream(ParamStore& store, const std::string& prefix, BackboneConfig cfg,
                           Rng& init)
    : backbone_(store, prefix + ".bb", cfg, init), prefix_(prefix) {
  // temporal projection head over the pooled P x P map
  add_conv(store, prefix_ + ".head", 1, cfg.c1, 1, 1, 3, init);
}

Var RhythmStream::forward(Tape& tp, Var x) const {
  const BackboneConfig& cfg = backbone_.config();
  Var feat = backbone_.decode(tp, x);
  Var pooled = avg_pool_spatial(tp, feat, cfg.tokens_p, cfg.tokens_p);
  Var head = conv3d(tp, pooled, tp.param(prefix_ + ".head.w"), tp.param(prefix_ + ".head.b"),
                    {1, 1, 1}, {0, 0, 1});
  const Tensor& th = tp.val(head);  // (B, 1, P, P, T)
  const int b = th.shape[0];
  const int n = th.shape[2] * th.shape[3];
  const int t = th.shape[4];
  return reshape(tp, head, {b, n, t});
}

VisualStream::VisualStream(ParamStore& store, const std::string& prefix, BackboneConfig cfg,
                           Rng& init)
    : backbone_(store, prefix + ".bb", cfg, init), prefix_(prefix) {
  store.add(prefix_ + ".head.w",
            xavier({cfg.feature_dim, cfg.c1}, static_cast<std::size_t>(cfg.c1),
                   static_cast<std::size_t>(cfg.feature_dim), init));
  store.add(prefix_ + ".head.b", Tensor::zeros({cfg.feature_dim}));
}

Var VisualStream::forward(Tape& tp, Var x) const {
  const BackboneConfig& cfg = backbone_.config();
  Var feat = backbone_.decode(tp, x);
  Var pooled = avg_pool_spatial(tp, feat, 1, 1);  // (B, c1, 1, 1, T)
  const Tensor& tf = tp.val(pooled);
  const int b = tf.shape[0];
  const int t = tf.shape[4];
  Var flat = reshape(tp, pooled, {b, cfg.c1, t});
  Var per_step = permute(tp, flat, {0, 2, 1});  // (B, T, c1)
  Var projected =
      linear(tp, per_step, tp.param(prefix_ + ".head.w"), tp.param(prefix_ + ".head.b"));
  return permute(tp, projected, {0, 2, 1});  // (B, D, T)
}

}  // namespace mvr::nets
