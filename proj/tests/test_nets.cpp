#include <doctest.h>

#include <cmath>

#include "mvr/nets/model.hpp"

using namespace mvr;
using namespace mvr::diff;
using namespace mvr::nets;

namespace {

Tensor random_clip_tensor(int b, int c, int h, int w, int t, std::uint64_t seed) {
  Tensor x({b, c, h, w, t});
  Rng rng(seed);
  for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace

TEST_CASE("rhythm stream: output is B x N x T with N = 4") {
  ParamStore store;
  Rng init(1);
  RhythmStream stream(store, "r", BackboneConfig{}, init);
  Tape tp(&store);
  Var x = tp.constant(random_clip_tensor(1, 3, 32, 32, 32, 2));
  Var s = stream.forward(tp, x);
  CHECK(tp.val(s).shape == Shape{1, 4, 32});
  CHECK(tp.val(s).all_finite());
}

TEST_CASE("visual stream: output is B x D x T with default D = 16") {
  ParamStore store;
  Rng init(1);
  VisualStream stream(store, "v", BackboneConfig{}, init);
  Tape tp(&store);
  Var x = tp.constant(random_clip_tensor(1, 3, 32, 32, 32, 3));
  Var f = stream.forward(tp, x);
  CHECK(tp.val(f).shape == Shape{1, 16, 32});
  CHECK(tp.val(f).all_finite());
}

TEST_CASE("streams: temporal length is preserved for odd T") {
  ParamStore store;
  Rng init(4);
  RhythmStream stream(store, "r", BackboneConfig{}, init);
  for (int t : {9, 30, 75}) {
    Tape tp(&store);
    Var s = stream.forward(tp, tp.constant(random_clip_tensor(1, 3, 16, 16, t, 5)));
    CHECK(tp.val(s).shape.back() == t);
  }
}

TEST_CASE("streams: zero input stays finite") {
  ParamStore store;
  Rng init(6);
  RhythmStream rhythm(store, "r", BackboneConfig{}, init);
  VisualStream visual(store, "v", BackboneConfig{}, init);
  Tape tp(&store);
  Var x = tp.constant(Tensor({1, 3, 16, 16, 16}));
  CHECK(tp.val(rhythm.forward(tp, x)).all_finite());
  CHECK(tp.val(visual.forward(tp, x)).all_finite());
}

TEST_CASE("streams: deterministic per seed, different across seeds") {
  auto run = [](std::uint64_t seed) {
    ParamStore store;
    Rng init(seed);
    RhythmStream stream(store, "r", BackboneConfig{}, init);
    Tape tp(&store);
    Var s = stream.forward(tp, tp.constant(random_clip_tensor(1, 3, 16, 16, 16, 42)));
    return tp.val(s).data;
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));
}

TEST_CASE("streams: batch independence") {
  ParamStore store;
  Rng init(9);
  RhythmStream stream(store, "r", BackboneConfig{}, init);
  const Tensor one = random_clip_tensor(1, 3, 16, 16, 16, 10);
  Tensor two({2, 3, 16, 16, 16});
  std::copy(one.data.begin(), one.data.end(), two.data.begin());
  std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.data.size());

  Tape tp(&store);
  const auto& single = tp.val(stream.forward(tp, tp.constant(one))).data;
  const auto& batched = tp.val(stream.forward(tp, tp.constant(two))).data;
  for (std::size_t i = 0; i < single.size(); ++i) {
    CHECK(batched[i] == doctest::Approx(single[i]).epsilon(1e-12));
    CHECK(batched[single.size() + i] == doctest::Approx(single[i]).epsilon(1e-12));
  }
}

TEST_CASE("streams: parameter disjointness between rhythm and visual") {
  ParamStore store;
  Rng init(11);
  RhythmStream rhythm(store, "r", BackboneConfig{}, init);
  VisualStream visual(store, "v", BackboneConfig{}, init);
  const Tensor x = random_clip_tensor(1, 3, 16, 16, 16, 12);

  std::vector<double> visual_before;
  {
    Tape tp(&store);
    visual_before = tp.val(visual.forward(tp, tp.constant(x))).data;
  }
  // zero every rhythm-stream parameter
  for (int i = 0; i < store.size(); ++i)
    if (store.item(i).name.rfind("r.", 0) == 0)
      std::fill(store.item(i).value.data.begin(), store.item(i).value.data.end(), 0.0);
  {
    Tape tp(&store);
    const auto visual_after = tp.val(visual.forward(tp, tp.constant(x))).data;
    CHECK(visual_after == visual_before);
    const auto rhythm_out = tp.val(rhythm.forward(tp, tp.constant(x))).data;
    for (double v : rhythm_out) CHECK(v == 0.0);
  }
}

TEST_CASE("flow_noise_weights: symmetry, worked value, limit behavior") {
  const auto equal = flow_noise_weights(1.0, 1.0, 1.0);
  for (double w : equal.w) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

  const auto skewed = flow_noise_weights(1.0, 2.0, 4.0, 1e-12);
  CHECK(skewed.w[0] == doctest::Approx(4.0 / 7.0).epsilon(1e-6));
  CHECK(skewed.w[1] == doctest::Approx(2.0 / 7.0).epsilon(1e-6));
  CHECK(skewed.w[2] == doctest::Approx(1.0 / 7.0).epsilon(1e-6));

  const auto clean = flow_noise_weights(0.0, 5.0, 5.0, 1e-9);
  CHECK(clean.w[0] > 0.999);
}

TEST_CASE("flow_noise_weights: simplex and antitone properties") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const double nl = 5.0 * rng.uniform01(), nc = 5.0 * rng.uniform01(),
                 nr = 5.0 * rng.uniform01();
    const auto w = flow_noise_weights(nl, nc, nr);
    CHECK(std::abs(w.w[0] + w.w[1] + w.w[2] - 1.0) <= 1e-9);
    for (double v : w.w) CHECK(v >= 0.0);
    // raising one score lowers that view's weight
    const auto w2 = flow_noise_weights(nl + 0.5, nc, nr);
    CHECK(w2.w[0] <= w.w[0] + 1e-12);
  }
}

namespace {

struct MvcaFixture {
  ParamStore store;
  Rng init;
  Mvca mvca;
  static MvcaConfig make_cfg(int n, int d) {
    MvcaConfig cfg;
    cfg.tokens_n = n;
    cfg.feature_dim = d;
    return cfg;
  }
  explicit MvcaFixture(std::uint64_t seed, int n = 4, int d = 16)
      : init(seed), mvca(store, "m", make_cfg(n, d), init) {}
};

Tensor random_block(int b, int n, int t, std::uint64_t seed) {
  Tensor x({b, n, t});
  Rng rng(seed);
  for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
  return x;
}

// identity kernel: center tap 1 on the diagonal
void set_identity_agg(ParamStore& store) {
  Param& w = store.at("m.agg.w");
  std::fill(w.value.data.begin(), w.value.data.end(), 0.0);
  const int n = w.value.shape[0];
  for (int i = 0; i < n; ++i) w.value.data[(static_cast<std::size_t>(i) * n + i) * 3 + 1] = 1.0;
  std::fill(store.at("m.agg.b").value.data.begin(), store.at("m.agg.b").value.data.end(), 0.0);
}

}  // namespace

TEST_CASE("aggregate_st: identity conv reduces to the weighted sum") {
  MvcaFixture fx(3);
  set_identity_agg(fx.store);
  Tape tp(&fx.store);
  const Tensor s = random_block(1, 4, 20, 4);
  Var sl = tp.constant(s), sc = tp.constant(s), sr = tp.constant(s);

  // identical views and any simplex weights: the sum is that view
  const auto w = flow_noise_weights(0.3, 0.7, 1.9);
  Var agg = fx.mvca.aggregate_st(tp, {sl, sc, sr}, w);
  for (std::size_t i = 0; i < s.numel(); ++i)
    CHECK(tp.val(agg)[i] == doctest::Approx(s[i]).epsilon(1e-9));

  // w = (1, 0, 0) picks the left view exactly
  Var other = tp.constant(random_block(1, 4, 20, 5));
  ViewWeights left_only;
  left_only.w = {1.0, 0.0, 0.0};
  Var agg2 = fx.mvca.aggregate_st(tp, {sl, other, other}, left_only);
  for (std::size_t i = 0; i < s.numel(); ++i)
    CHECK(tp.val(agg2)[i] == doctest::Approx(s[i]).epsilon(1e-9));
}

TEST_CASE("cross-view attention: zero query/key with identity value gives the view mean") {
  Tape tp;
  Rng rng(8);
  const int b = 1, v = 3, d = 8, t = 6;
  Tensor f({b, v, d, t});
  for (auto& x : f.data) x = rng.uniform(-1.0, 1.0);
  Tensor zero({d, d});
  Tensor eye({d, d});
  for (int i = 0; i < d; ++i) eye.data[static_cast<std::size_t>(i) * d + i] = 1.0;

  Var out = cross_view_attention_core(tp, tp.constant(f), tp.constant(zero), tp.constant(zero),
                                      tp.constant(eye));
  for (int ti = 0; ti < t; ++ti)
    for (int di = 0; di < d; ++di) {
      double mean = 0.0;
      for (int vi = 0; vi < v; ++vi)
        mean += f.data[((static_cast<std::size_t>(vi)) * d + di) * t + ti] / v;
      for (int vi = 0; vi < v; ++vi)
        CHECK(tp.val(out)[((static_cast<std::size_t>(vi)) * d + di) * t + ti] ==
              doctest::Approx(mean).epsilon(1e-9));
    }
}

TEST_CASE("cross-view attention: symmetric projections make the view mean order-invariant") {
  Tape tp;
  Rng rng(13);
  const int d = 8, t = 5;
  Tensor w({d, d}), wv({d, d});
  for (auto& x : w.data) x = rng.uniform(-0.5, 0.5);
  for (auto& x : wv.data) x = rng.uniform(-0.5, 0.5);
  Tensor f({1, 3, d, t});
  for (auto& x : f.data) x = rng.uniform(-1.0, 1.0);
  // swap the two side views
  Tensor swapped = f;
  for (int di = 0; di < d; ++di)
    for (int ti = 0; ti < t; ++ti)
      std::swap(swapped.data[(static_cast<std::size_t>(0) * d + di) * t + ti],
                swapped.data[(static_cast<std::size_t>(2) * d + di) * t + ti]);

  Var a = cross_view_attention_core(tp, tp.constant(f), tp.constant(w), tp.constant(w),
                                    tp.constant(wv));
  Var b = cross_view_attention_core(tp, tp.constant(swapped), tp.constant(w), tp.constant(w),
                                    tp.constant(wv));
  Var ma = mean_axis(tp, a, 1);
  Var mb = mean_axis(tp, b, 1);
  for (std::size_t i = 0; i < tp.val(ma).numel(); ++i)
    CHECK(tp.val(ma)[i] == doctest::Approx(tp.val(mb)[i]).epsilon(1e-9));
}

TEST_CASE("gated fusion: saturation, midpoint, and the 0.5-init blend") {
  MvcaFixture fx(5);
  const Tensor s_t = Tensor::full({1, 4, 8}, 1.0);
  const Tensor sp_t = Tensor::full({1, 4, 8}, 0.0);

  auto blend_with_beta = [&](double beta) {
    fx.store.at("m.beta").value[0] = beta;
    Tape tp(&fx.store);
    Var u = fx.mvca.gated_fusion(tp, tp.constant(s_t), tp.constant(sp_t));
    return tp.val(u)[0];
  };
  CHECK(std::abs(blend_with_beta(20.0) - 1.0) <= 1e-6);
  CHECK(blend_with_beta(0.0) == doctest::Approx(0.5));
  CHECK(blend_with_beta(0.5) == doctest::Approx(0.62246).epsilon(1e-5));

  // convex combination bound for random blocks
  fx.store.at("m.beta").value[0] = -1.3;
  Tape tp(&fx.store);
  const Tensor a = random_block(1, 4, 8, 6), b = random_block(1, 4, 8, 7);
  Var u = fx.mvca.gated_fusion(tp, tp.constant(a), tp.constant(b));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(tp.val(u)[i] >= std::min(a[i], b[i]) - 1e-12);
    CHECK(tp.val(u)[i] <= std::max(a[i], b[i]) + 1e-12);
  }
}

TEST_CASE("segment sampling: counts, lengths, tiling, reassembly") {
  Tape tp;
  signal::TimeSeries gt;
  gt.fs = 30.0;
  Rng rng(14);
  for (int i = 0; i < 300; ++i) gt.samples.push_back(rng.normal());
  const Tensor s = random_block(1, 4, 300, 15);
  const Tensor sp = random_block(1, 4, 300, 16);
  Var sv = tp.constant(s), spv = tp.constant(sp);

  const auto triplets = segment_sampling(tp, sv, spv, gt, 2);
  CHECK(triplets.count == 8);
  CHECK(triplets.length == 150);
  // reassembly: the two segments of token n reproduce its trace
  for (int token = 0; token < 4; ++token)
    for (int seg = 0; seg < 2; ++seg) {
      const auto& fseg = tp.val(triplets.f[static_cast<std::size_t>(token * 2 + seg)]);
      for (int i = 0; i < 150; ++i)
        CHECK(fseg[static_cast<std::size_t>(i)] ==
              s[static_cast<std::size_t>(token) * 300 + static_cast<std::size_t>(seg * 150 + i)]);
    }
  // tiling: segment ranges cover [0, K * floor(T/K))
  std::vector<bool> covered(300, false);
  for (const auto& range : triplets.ranges)
    if (range.token == 0)
      for (int i = 0; i < triplets.length; ++i) covered[static_cast<std::size_t>(range.start + i)] = true;
  for (int i = 0; i < 300; ++i) CHECK(covered[static_cast<std::size_t>(i)] == (i < 300));

  const auto full = segment_sampling(tp, sv, spv, gt, 1);
  CHECK(full.count == 4);
  CHECK(full.length == 300);

  CHECK_THROWS_AS(segment_sampling(tp, sv, spv, gt, 301), error);
}

TEST_CASE("segment sampling: ground truth slices align with the segment clock") {
  Tape tp;
  signal::TimeSeries gt;
  gt.fs = 30.0;
  for (int i = 0; i < 64; ++i) gt.samples.push_back(static_cast<double>(i));
  Var s = tp.constant(random_block(1, 4, 64, 21));
  Var sp = tp.constant(random_block(1, 4, 64, 22));
  const auto triplets = segment_sampling(tp, s, sp, gt, 4);
  CHECK(triplets.length == 16);
  for (const auto& range : triplets.ranges) {
    const auto idx = static_cast<std::size_t>(&range - triplets.ranges.data());
    CHECK(triplets.g[idx][0] == doctest::Approx(static_cast<double>(range.start)));
  }
}

TEST_CASE("project head: identity at init; token mean and linearity") {
  MvcaFixture fx(17);
  Tape tp(&fx.store);
  const Tensor u = random_block(1, 4, 16, 23);
  Var y = fx.mvca.project_head(tp, tp.constant(u));
  for (std::size_t i = 0; i < u.numel(); ++i) CHECK(tp.val(y)[i] == doctest::Approx(u[i]));

  // all tokens equal to x -> prediction is standardized x
  Tensor same({1, 4, 16});
  Rng rng(24);
  std::vector<double> x;
  for (int i = 0; i < 16; ++i) x.push_back(rng.normal());
  for (int n = 0; n < 4; ++n)
    for (int i = 0; i < 16; ++i) same.data[static_cast<std::size_t>(n) * 16 + i] = x[static_cast<std::size_t>(i)];
  Var pred = Mvca::predict_rppg(tp, tp.constant(same));
  signal::TimeSeries xs;
  xs.fs = 30.0;
  xs.samples = x;
  const auto standardized = signal::detrend_normalize(xs);
  for (int i = 0; i < 16; ++i)
    CHECK(tp.val(pred)[static_cast<std::size_t>(i)] ==
          doctest::Approx(standardized.series.samples[static_cast<std::size_t>(i)]).epsilon(1e-3));

  // pre-standardization token mean is linear
  const Tensor y1 = random_block(1, 4, 16, 25), y2 = random_block(1, 4, 16, 26);
  Var lin = mean_axis(tp, add(tp, scale(tp, tp.constant(y1), 2.0), scale(tp, tp.constant(y2), -3.0)), 1);
  Var m1 = mean_axis(tp, tp.constant(y1), 1);
  Var m2 = mean_axis(tp, tp.constant(y2), 1);
  for (std::size_t i = 0; i < tp.val(lin).numel(); ++i)
    CHECK(tp.val(lin)[i] ==
          doctest::Approx(2.0 * tp.val(m1)[i] - 3.0 * tp.val(m2)[i]).epsilon(1e-9));
}

TEST_CASE("fused model: forward shapes and view masking exactness") {
  ModelConfig cfg;
  cfg.seed = 31;
  FusedModel model(cfg);

  synth::SceneConfig scene;
  scene.duration_s = 2.0;
  scene.seed = 44;
  auto clip = synth::render_clip(scene);

  auto prepared = prepare_clip(clip, {true, true, false}, false);
  // masked view is identically zero downstream of ingestion
  for (auto v : prepared.clip.views[2].data) CHECK(v == 0);

  const auto input = make_input(prepared, 0, 32);
  Tape tp(&model.generator_params());
  const auto fwd = model.forward(tp, input);
  CHECK(tp.val(fwd.s).shape == Shape{1, 4, 32});
  CHECK(tp.val(fwd.s_prime).shape == Shape{1, 4, 32});
  CHECK(tp.val(fwd.y).shape == Shape{1, 4, 32});
  CHECK(tp.val(fwd.prediction).shape == Shape{1, 32});
  CHECK(tp.val(fwd.prediction).all_finite());
}
