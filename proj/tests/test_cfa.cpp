#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mvr/diff/gradcheck.hpp"
#include "mvr/nets/model.hpp"

using namespace mvr;
using namespace mvr::diff;
using namespace mvr::nets;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Triplets built directly from given per-segment vectors (graph constants
// promoted to inputs so gradients exist where tests need them).
SegmentTriplets make_triplets(Tape& tp, const std::vector<std::vector<double>>& f,
                              const std::vector<std::vector<double>>& fp,
                              const std::vector<std::vector<double>>& g) {
  SegmentTriplets out;
  out.count = static_cast<int>(f.size());
  out.length = static_cast<int>(f[0].size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    out.f.push_back(tp.input(Tensor({out.length}, f[i])));
    out.f_prime.push_back(tp.input(Tensor({out.length}, fp[i])));
    out.g.push_back(Tensor({out.length}, g[i]));
    out.ranges.push_back({static_cast<int>(i), 0});
  }
  return out;
}

std::vector<double> sine_vec(double freq, double fs, int n, double amp = 1.0, double phase = 0.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    v[static_cast<std::size_t>(i)] = amp * std::sin(2.0 * kPi * freq * i / fs + phase);
  return v;
}

std::vector<double> noise_vec(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("pearson loss: perfect correlation and anti-correlation") {
  Tape tp;
  const auto g1 = noise_vec(64, 1), g2 = noise_vec(64, 2);
  auto triplets = make_triplets(tp, {g1, g2}, {g1, g2}, {g1, g2});
  CHECK(tp.scalar(pearson_loss(tp, triplets)) == doctest::Approx(-1.0).epsilon(1e-6));

  std::vector<double> n1 = g1, n2 = g2;
  for (auto& v : n1) v = -v;
  for (auto& v : n2) v = -v;
  auto anti = make_triplets(tp, {n1, n2}, {n1, n2}, {g1, g2});
  CHECK(tp.scalar(pearson_loss(tp, anti)) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("pearson loss: half-informative triplets average near -0.5") {
  // f = g, f' = independent noise; mean over 100 seeds lands within 0.1
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Tape tp;
    const auto g = noise_vec(48, 1000 + seed);
    const auto junk = noise_vec(48, 5000 + seed);
    auto triplets = make_triplets(tp, {g}, {junk}, {g});
    sum += tp.scalar(pearson_loss(tp, triplets));
  }
  CHECK(sum / 100.0 == doctest::Approx(-0.5).epsilon(0.2));
  CHECK(std::abs(sum / 100.0 + 0.5) <= 0.1);
}

TEST_CASE("pearson loss: positive affine image of g reaches the minimum") {
  Tape tp;
  const auto g = noise_vec(64, 3);
  std::vector<double> affine = g;
  for (auto& v : affine) v = 2.0 * v + 3.0;
  auto triplets = make_triplets(tp, {affine}, {affine}, {g});
  CHECK(tp.scalar(pearson_loss(tp, triplets)) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("pearson loss: zero-variance segment contributes zero and is counted") {
  Tape tp;
  const auto g = noise_vec(32, 4);
  std::vector<double> flat(32, 2.5);
  auto triplets = make_triplets(tp, {flat}, {g}, {g});
  int degenerate = 0;
  const double loss = tp.scalar(pearson_loss(tp, triplets, &degenerate));
  CHECK(degenerate == 1);
  CHECK(loss == doctest::Approx(-0.5).epsilon(1e-6));  // only f' correlates
}

TEST_CASE("psd triplets: pure tone concentrates in-band mass (FFT oracle)") {
  Tape tp;
  const int len = 64;
  const auto seg = sine_vec(1.5, 30.0, len);
  auto triplets = make_triplets(tp, {seg}, {seg}, {seg});
  const auto bm = make_band_matrix(len, 30.0);
  const auto spectral = psd_triplets(tp, triplets, bm);

  // bin spacing 30/64 Hz; find the 1.5 Hz bin index within the band rows
  double mass = 0.0;
  for (int k = 0; k < spectral.bins; ++k) {
    if (std::abs(bm.freqs[static_cast<std::size_t>(k)] - 1.5) <= 30.0 / len + 1e-9)
      mass += tp.val(spectral.p[0])[static_cast<std::size_t>(k)];
  }
  CHECK(mass >= 0.9);

  // identical segments produce identical spectra; every spectrum sums to 1
  for (int k = 0; k < spectral.bins; ++k)
    CHECK(tp.val(spectral.p[0])[static_cast<std::size_t>(k)] ==
          doctest::Approx(tp.val(spectral.p_prime[0])[static_cast<std::size_t>(k)]));
  double total = 0.0;
  for (int k = 0; k < spectral.bins; ++k) total += tp.val(spectral.p[0])[static_cast<std::size_t>(k)];
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("psd triplets: all-zero segment flags degenerate and yields uniform") {
  Tape tp;
  std::vector<double> zero(32, 0.0);
  const auto g = noise_vec(32, 6);
  auto triplets = make_triplets(tp, {zero}, {g}, {g});
  const auto bm = make_band_matrix(32, 30.0);
  int degenerate = 0;
  const auto spectral = psd_triplets(tp, triplets, bm, &degenerate);
  CHECK(degenerate >= 1);
  for (int k = 0; k < spectral.bins; ++k)
    CHECK(tp.val(spectral.p[0])[static_cast<std::size_t>(k)] ==
          doctest::Approx(1.0 / spectral.bins).epsilon(1e-9));
}

TEST_CASE("psd loss: zero iff spectra coincide, worked value, symmetry") {
  Tape tp;
  SpectralTriplets spectral;
  spectral.bins = 2;
  spectral.p.push_back(tp.constant(Tensor({2}, {1.0, 0.0})));
  spectral.p_prime.push_back(tp.constant(Tensor({2}, {0.0, 1.0})));
  spectral.s.push_back(tp.constant(Tensor({2}, {0.0, 1.0})));
  CHECK(tp.scalar(psd_loss(tp, spectral)) == doctest::Approx(1.0));

  SpectralTriplets same;
  same.bins = 2;
  same.p.push_back(tp.constant(Tensor({2}, {0.25, 0.75})));
  same.p_prime.push_back(tp.constant(Tensor({2}, {0.25, 0.75})));
  same.s.push_back(tp.constant(Tensor({2}, {0.25, 0.75})));
  CHECK(tp.scalar(psd_loss(tp, same)) == doctest::Approx(0.0).scale(1.0));

  SpectralTriplets swapped;
  swapped.bins = 2;
  swapped.p.push_back(tp.constant(Tensor({2}, {0.0, 1.0})));
  swapped.p_prime.push_back(tp.constant(Tensor({2}, {1.0, 0.0})));
  swapped.s.push_back(tp.constant(Tensor({2}, {0.0, 1.0})));
  CHECK(tp.scalar(psd_loss(tp, swapped)) == doctest::Approx(1.0));
}

TEST_CASE("adversarial losses: perfect, uninformative, and fooled discriminators") {
  Tape tp;
  Var ones = tp.constant(Tensor::full({4, 1, 3}, 1.0));
  Var zeros = tp.constant(Tensor::full({4, 1, 3}, 0.0));
  Var halves = tp.constant(Tensor::full({4, 1, 3}, 0.5));

  CHECK(tp.scalar(disc_loss(tp, ones, zeros)) == doctest::Approx(0.0).scale(1.0));
  CHECK(tp.scalar(gen_loss(tp, zeros)) == doctest::Approx(1.0));
  CHECK(tp.scalar(disc_loss(tp, halves, halves)) == doctest::Approx(0.25));
  CHECK(tp.scalar(gen_loss(tp, halves)) == doctest::Approx(0.25));
  CHECK(tp.scalar(gen_loss(tp, ones)) == doctest::Approx(0.0).scale(1.0));

  // non-negativity for arbitrary scores
  Rng rng(7);
  Tensor scores({4, 1, 3});
  for (auto& v : scores.data) v = rng.uniform(-3.0, 3.0);
  Var random_scores = tp.constant(std::move(scores));
  CHECK(tp.scalar(disc_loss(tp, random_scores, random_scores)) >= 0.0);
  CHECK(tp.scalar(gen_loss(tp, random_scores)) >= 0.0);
}

TEST_CASE("total loss composition matches the weighted sum") {
  // components (-1, 0, 0) -> -1; (-0.5, 0.2, 0.3) with (1, 0.1) -> -0.27
  CHECK(total_loss(-1.0, 0.0, 0.0, 0.0).total == doctest::Approx(-1.0));
  const auto bundle = total_loss(-0.5, 0.2, 0.3, 0.1, 1.0, 0.1);
  CHECK(bundle.total == doctest::Approx(-0.27));
  CHECK(bundle.lambda_g == doctest::Approx(0.1));
  // lambda_g = 0 makes the total independent of the adversarial term
  CHECK(total_loss(-0.5, 0.2, 0.3, 0.0, 1.0, 0.0).total ==
        doctest::Approx(total_loss(-0.5, 0.2, 123.0, 0.0, 1.0, 0.0).total));
}

TEST_CASE("discriminator: patch scores exist for training segment lengths") {
  ParamStore store;
  Rng init(9);
  Discriminator disc(store, "d", init);
  for (int len : {16, 32, 75}) {
    Tape tp(&store);
    Rng rng(10);
    Tensor segs({3, 1, len});
    for (auto& v : segs.data) v = rng.uniform(-1.0, 1.0);
    Var scores = disc.forward(tp, tp.constant(std::move(segs)));
    CHECK(tp.val(scores).shape[0] == 3);
    CHECK(tp.val(scores).shape[2] >= 1);
  }
}

TEST_CASE("gradients: pearson and psd losses match finite differences") {
  Rng rng(11);
  ParamStore store;
  Tensor f({48});
  for (auto& v : f.data) v = rng.uniform(-1.0, 1.0);
  store.add("f", f);
  const auto g = noise_vec(48, 12);
  const auto bm = make_band_matrix(48, 30.0);

  auto loss = [&](Tape& tp) -> Var {
    SegmentTriplets triplets;
    triplets.count = 1;
    triplets.length = 48;
    triplets.f.push_back(tp.param("f"));
    triplets.f_prime.push_back(tp.param("f"));
    triplets.g.push_back(Tensor({48}, g));
    triplets.ranges.push_back({0, 0});
    Var lp = pearson_loss(tp, triplets);
    Var lpsd = psd_loss(tp, psd_triplets(tp, triplets, bm));
    return add(tp, lp, lpsd);
  };
  const auto rep = grad_check(store, loss, 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("training: tiny run is deterministic and zero lr freezes parameters") {
  const auto dir = std::filesystem::temp_directory_path() / "mvr_train_tiny";
  std::filesystem::remove_all(dir);

  std::vector<synth::MultiViewClip> clips;
  for (int subject = 0; subject < 2; ++subject) {
    synth::SceneConfig scene;
    scene.scenario = synth::Scenario::movement;
    scene.duration_s = 3.0;
    scene.hr_base = 72.0 + 10.0 * subject;
    scene.seed = 900 + static_cast<std::uint64_t>(subject);
    auto clip = synth::render_clip(scene);
    clip.subject = subject;
    clips.push_back(std::move(clip));
  }
  synth::write_dataset(clips, dir / "data");

  TrainConfig cfg;
  cfg.dataset_dir = dir / "data";
  cfg.scenario = synth::Scenario::movement;
  cfg.split = 0.6;  // 1 train, 1 test
  cfg.epochs = 2;
  cfg.train_frames = 32;
  cfg.segments_k = 1;
  cfg.lr = 1e-3;
  cfg.seed = 5;
  cfg.model.seed = 5;
  cfg.out_dir = dir / "run1";
  const auto r1 = train(cfg);

  cfg.out_dir = dir / "run2";
  const auto r2 = train(cfg);

  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(r1.log_csv) == slurp(r2.log_csv));
  CHECK(slurp(r1.checkpoint) == slurp(r2.checkpoint));
  CHECK(!r1.steps.empty());

  // zero learning rates leave parameters at their initial values
  TrainConfig frozen = cfg;
  frozen.lr = 0.0;
  frozen.lr_disc = 0.0;
  frozen.epochs = 1;
  frozen.out_dir = dir / "frozen";
  const auto rf = train(frozen);
  ParamStore after;
  after.load(rf.checkpoint);
  FusedModel reference(frozen.model);
  for (int i = 0; i < after.size(); ++i) {
    const auto& trained = after.item(i);
    const auto& init = reference.generator_params().at(trained.name);
    for (std::size_t j = 0; j < trained.value.numel(); ++j)
      CHECK(trained.value[j] == doctest::Approx(static_cast<double>(
                                    static_cast<float>(init.value[j]))));
  }
  std::filesystem::remove_all(dir);
}
