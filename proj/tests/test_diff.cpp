#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mvr/common.hpp"
#include "mvr/diff/gradcheck.hpp"
#include "mvr/diff/ops.hpp"
#include "mvr/diff/tape.hpp"

using namespace mvr;
using namespace mvr::diff;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -0.5, double hi = 0.5) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum against a fixed random tensor so every output element gets a
// distinct gradient.
Var weighted_sum(Tape& tp, Var y, Rng& rng) {
  Tensor w(tp.val(y).shape);
  for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
  return sum_all(tp, mul(tp, y, tp.constant(std::move(w))));
}

}  // namespace

TEST_CASE("linear: identity weight, zero bias") {
  Tape tp;
  Rng rng(1);
  Var x = tp.constant(random_tensor({3, 4}, rng));
  Tensor w({4, 4});
  for (int i = 0; i < 4; ++i) w[static_cast<std::size_t>(i * 4 + i)] = 1.0;
  Var y = linear(tp, x, tp.constant(std::move(w)), tp.constant(Tensor::zeros({4})));
  for (std::size_t i = 0; i < tp.val(x).numel(); ++i)
    CHECK(tp.val(y)[i] == doctest::Approx(tp.val(x)[i]));
}

TEST_CASE("softmax: rows sum to one and lie in (0,1)") {
  Tape tp;
  Rng rng(2);
  Var x = tp.constant(random_tensor({5, 7}, rng, -3.0, 3.0));
  Var y = softmax_lastdim(tp, x);
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int c = 0; c < 7; ++c) {
      const double v = tp.val(y)[static_cast<std::size_t>(r * 7 + c)];
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax and layer norm stay finite for large inputs") {
  Tape tp;
  Rng rng(3);
  Var x = tp.constant(random_tensor({4, 16}, rng, -1e3, 1e3));
  Var sm = softmax_lastdim(tp, x);
  Var ln = layer_norm_lastdim(tp, x, tp.constant(Tensor::full({16}, 1.0)),
                              tp.constant(Tensor::zeros({16})));
  CHECK(tp.val(sm).all_finite());
  CHECK(tp.val(ln).all_finite());
  for (double v : tp.val(sm).data) CHECK(v <= 1.0);
}

TEST_CASE("grad: elementwise and reductions") {
  Rng rng(10);
  ParamStore store;
  store.add("a", random_tensor({3, 5}, rng));
  store.add("b", random_tensor({3, 5}, rng));
  Rng wrng(11);
  auto loss = [&](Tape& tp) -> Var {
    Var a = tp.param("a");
    Var b = tp.param("b");
    Var y = mul(tp, add(tp, a, b), sub(tp, a, scale(tp, b, 0.5)));
    y = add_scalar(tp, relu(tp, y), 0.25);
    y = mul(tp, y, sigmoid(tp, b));
    Rng local(12);
    return weighted_sum(tp, y, local);
  };
  (void)wrng;
  auto rep = grad_check(store, loss, 1e-6);
  CHECK(rep.pass);
}

TEST_CASE("grad: linear + softmax + mean_axis") {
  Rng rng(20);
  ParamStore store;
  store.add("w", random_tensor({6, 4}, rng));
  store.add("b", random_tensor({6}, rng));
  store.add("x", random_tensor({2, 3, 4}, rng));
  auto loss = [&](Tape& tp) -> Var {
    Var y = linear(tp, tp.param("x"), tp.param("w"), tp.param("b"));
    y = softmax_lastdim(tp, y);
    y = mean_axis(tp, y, 1);
    Rng local(21);
    return weighted_sum(tp, y, local);
  };
  auto rep = grad_check(store, loss, 1e-6);
  CHECK(rep.pass);
}

TEST_CASE("grad: conv1d strided") {
  Rng rng(30);
  ParamStore store;
  store.add("x", random_tensor({2, 3, 11}, rng));
  store.add("w", random_tensor({4, 3, 4}, rng));
  store.add("b", random_tensor({4}, rng));
  auto loss = [&](Tape& tp) -> Var {
    Var y = conv1d(tp, tp.param("x"), tp.param("w"), tp.param("b"), 2, 1);
    Rng local(31);
    return weighted_sum(tp, y, local);
  };
  auto rep = grad_check(store, loss, 1e-6);
  CHECK(rep.pass);
}

TEST_CASE("grad: conv3d stride 1 and stride 2") {
  for (int s : {1, 2}) {
    Rng rng(40 + s);
    ParamStore store;
    store.add("x", random_tensor({1, 2, 5, 6, 6}, rng));
    store.add("w", random_tensor({2, 2, 3, 3, 3}, rng));
    store.add("b", random_tensor({2}, rng));
    auto loss = [&](Tape& tp) -> Var {
      Var y = conv3d(tp, tp.param("x"), tp.param("w"), tp.param("b"), {s, s, s}, {1, 1, 1});
      Rng local(42);
      return weighted_sum(tp, y, local);
    };
    auto rep = grad_check(store, loss, 1e-5);
    CHECK(rep.pass);
  }
}

TEST_CASE("grad: layer norms, pooling, upsampling, slicing") {
  Rng rng(50);
  ParamStore store;
  store.add("x", random_tensor({2, 3, 4, 4, 4}, rng));
  store.add("gamma", random_tensor({3}, rng, 0.5, 1.5));
  store.add("beta", random_tensor({3}, rng));
  auto loss = [&](Tape& tp) -> Var {
    Var y = layer_norm_dim1(tp, tp.param("x"), tp.param("gamma"), tp.param("beta"));
    y = avg_pool_spatial(tp, y, 2, 2);
    y = upsample_lastdim(tp, reshape(tp, y, {2, 3, 2 * 2 * 4}), 20);
    y = slice_lastdim(tp, y, 3, 9);
    Rng local(51);
    return weighted_sum(tp, y, local);
  };
  auto rep = grad_check(store, loss, 1e-5);
  CHECK(rep.pass);
}

TEST_CASE("grad: multi-head attention over time") {
  Rng rng(60);
  ParamStore store;
  store.add("x", random_tensor({1, 16, 8}, rng));
  store.add("wq", random_tensor({8, 8}, rng));
  store.add("wk", random_tensor({8, 8}, rng));
  store.add("wv", random_tensor({8, 8}, rng));
  store.add("wo", random_tensor({8, 8}, rng));
  auto loss = [&](Tape& tp) -> Var {
    Var y = mha_time(tp, tp.param("x"), tp.param("wq"), tp.param("wk"), tp.param("wv"),
                     tp.param("wo"), 2);
    Rng local(61);
    return weighted_sum(tp, y, local);
  };
  auto rep = grad_check(store, loss, 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("grad: cross-view attention (D=8, 3 views, T=16)") {
  Rng rng(70);
  ParamStore store;
  store.add("f", random_tensor({1, 3, 8, 16}, rng));
  store.add("wq", random_tensor({8, 8}, rng));
  store.add("wk", random_tensor({8, 8}, rng));
  store.add("wv", random_tensor({8, 8}, rng));
  auto loss = [&](Tape& tp) -> Var {
    Var y = cross_view_attention_core(tp, tp.param("f"), tp.param("wq"), tp.param("wk"),
                                      tp.param("wv"));
    Rng local(71);
    return weighted_sum(tp, y, local);
  };
  auto rep = grad_check(store, loss, 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("grad: gated blend moves beta") {
  Rng rng(80);
  ParamStore store;
  store.add("a", random_tensor({4, 6}, rng));
  store.add("b", random_tensor({4, 6}, rng));
  store.add("beta", Tensor::scalar(0.5));
  auto loss = [&](Tape& tp) -> Var {
    Var u = gated_blend(tp, tp.param("a"), tp.param("b"), tp.param("beta"));
    Rng local(81);
    return weighted_sum(tp, u, local);
  };
  auto rep = grad_check(store, loss, 1e-6);
  CHECK(rep.pass);
}

TEST_CASE("grad: pearson loss graph on random signals") {
  Rng rng(90);
  ParamStore store;
  store.add("f", random_tensor({48}, rng));
  Tensor g = random_tensor({48}, rng);
  auto loss = [&, g](Tape& tp) -> Var {
    Var r = pearson_corr(tp, tp.param("f"), g);
    return scale(tp, r, -1.0);
  };
  auto rep = grad_check(store, loss, 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("grad: band power + unit-sum normalization + standardize") {
  Rng rng(100);
  ParamStore store;
  store.add("x", random_tensor({48}, rng));
  const auto bm = make_band_matrix(48, 30.0);
  Tensor target({bm.bins()});
  for (auto& v : target.data) v = 1.0 / bm.bins();
  auto loss = [&, target](Tape& tp) -> Var {
    Var z = standardize_lastdim(tp, tp.param("x"));
    Var p = normalize_sum(tp, band_power(tp, z, bm));
    Var d = sub_const(tp, p, target);
    return sum_all(tp, square(tp, d));
  };
  auto rep = grad_check(store, loss, 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("grad: permute, stack, channel_affine") {
  Rng rng(110);
  ParamStore store;
  store.add("x", random_tensor({2, 3, 5}, rng));
  store.add("y", random_tensor({2, 3, 5}, rng));
  store.add("cw", random_tensor({2}, rng, 0.5, 1.5));
  store.add("cb", random_tensor({2}, rng));
  auto loss = [&](Tape& tp) -> Var {
    Var a = permute(tp, tp.param("x"), {1, 0, 2});
    Var b = permute(tp, tp.param("y"), {1, 0, 2});
    Var s = stack_rows(tp, {a, b});           // (2,3,2,5)
    Var r = reshape(tp, s, {2, 3 * 2, 5});    // (2,6,5)
    Var m = mean_axis(tp, r, 1);              // (2,5)
    Var c = channel_affine(tp, reshape(tp, m, {1, 2, 5}), tp.param("cw"), tp.param("cb"));
    Rng local(111);
    return weighted_sum(tp, c, local);
  };
  auto rep = grad_check(store, loss, 1e-6);
  CHECK(rep.pass);
}

TEST_CASE("grad: corrupted backward rule is caught (negative control)") {
  Rng rng(120);
  ParamStore store;
  store.add("x", random_tensor({8}, rng));
  auto loss = [&](Tape& tp) -> Var {
    Var x = tp.param("x");
    // y = 2x with a deliberately wrong backward (gradient 3 instead of 2)
    Tensor y(tp.val(x).shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = 2.0 * tp.val(x)[i];
    Var bad = tp.make(std::move(y), {x}, [x](Tape& t, int id) {
      const Tensor& g = t.grad(Var{id});
      Tensor& gx = t.grad(x);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += 3.0 * g[i];
    });
    return sum_all(tp, bad);
  };
  auto rep = grad_check(store, loss, 1e-4);
  CHECK(!rep.pass);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  Rng rng(130);
  ParamStore store;
  store.add("x", random_tensor({8}, rng));
  const Tensor before = store.at("x").value;
  store.zero_grad();
  store.adam_step(1e-2);
  for (std::size_t i = 0; i < before.numel(); ++i)
    CHECK(store.at("x").value[i] == doctest::Approx(before[i]));
}

TEST_CASE("adam: moves opposite the gradient sign") {
  ParamStore store;
  store.add("x", Tensor::scalar(1.0));
  store.zero_grad();
  store.at("x").grad[0] = 2.5;
  store.adam_step(1e-2);
  CHECK(store.at("x").value[0] < 1.0);
}

TEST_CASE("adam: quadratic bowl converges (closed-form optimum at zero)") {
  Rng rng(140);
  ParamStore store;
  store.add("x", random_tensor({16}, rng, 0.5, 1.5));
  auto loss_value = [&]() {
    double s = 0.0;
    for (double v : store.at("x").value.data) s += v * v;
    return s;
  };
  const double initial = loss_value();
  for (int step = 0; step < 200; ++step) {
    store.zero_grad();
    Tape tp(&store);
    Var l = sum_all(tp, square(tp, tp.param("x")));
    tp.backward(l);
    store.adam_step(1e-2);
  }
  CHECK(loss_value() <= 0.01 * initial);
}

TEST_CASE("checkpoint: round trip is byte-exact after quantization") {
  Rng rng(150);
  ParamStore a;
  a.add("layer.w", random_tensor({4, 3}, rng));
  a.add("layer.b", random_tensor({4}, rng));
  const auto dir = std::filesystem::temp_directory_path() / "mvr_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto f1 = dir / "a.mvp";
  const auto f2 = dir / "b.mvp";
  a.save(f1);
  ParamStore b;
  b.load(f1);
  b.save(f2);
  std::ifstream s1(f1, std::ios::binary), s2(f2, std::ios::binary);
  std::vector<char> d1((std::istreambuf_iterator<char>(s1)), std::istreambuf_iterator<char>());
  std::vector<char> d2((std::istreambuf_iterator<char>(s2)), std::istreambuf_iterator<char>());
  CHECK(d1 == d2);
  CHECK(b.at("layer.w").value.shape == Shape{4, 3});
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint: bad magic rejected") {
  const auto dir = std::filesystem::temp_directory_path() / "mvr_ckpt_bad";
  std::filesystem::create_directories(dir);
  const auto f = dir / "bad.mvp";
  {
    std::ofstream os(f, std::ios::binary);
    os.write("XXXX\0\0\0\0", 8);
  }
  ParamStore s;
  CHECK_THROWS_AS(s.load(f), error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("tape: determinism of forward passes") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tape tp;
    Var x = tp.constant(random_tensor({2, 3, 8}, rng));
    Var w = tp.constant(random_tensor({3, 3, 3}, rng));
    Var y = conv1d(tp, x, w, tp.constant(Tensor::zeros({3})), 1, 1);
    return tp.val(y).data;
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));
}
