#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "rst/ops.hpp"
#include "rst/train.hpp"

using namespace rst;
using testing::random_tensor;

namespace {

RunConfig tiny_run() {
  RunConfig c;
  c.model.levels = 2;
  c.model.blocks = {1, 1};
  c.model.channels = 4;
  c.model.n_phi = {4, 4};
  c.model.n_r = {4, 4};
  c.train.steps = 50;
  return c;
}

}  // namespace

TEST_CASE("loss vanishes when prediction equals target") {
  std::mt19937_64 rng(80);
  auto x = random_tensor({3, 12, 10}, rng);
  CHECK(restoration_loss(x, x, 0.1).item() == 0.0f);
  auto y = random_tensor({3, 12, 10}, rng);
  CHECK(restoration_loss(x, y, 0.0).item() > 0.0f);
  CHECK_THROWS_AS(restoration_loss(x, random_tensor({3, 10, 12}, rng), 0.1), ShapeError);
}

TEST_CASE("loss decomposes into spatial and spectral L1 terms") {
  Tensor<double> p({1, 1, 2}, {1.0, 0.0}), t({1, 1, 2}, {0.0, 0.0});
  // spatial: mean(|1|, |0|) = 0.5; spectrum of p is (1, 1), of t is (0, 0)
  CHECK(restoration_loss(p, t, 0.0).item() == doctest::Approx(0.5));
  CHECK(restoration_loss(p, t, 0.25).item() == doctest::Approx(0.5 + 0.25 * 1.0));
}

TEST_CASE("one AdamW step on w^2/2 matches the closed form") {
  Tensor<double> w({1}, {1.0});
  w.set_requires_grad();
  TrainConfig hyper;
  AdamW<double> opt({w}, hyper);
  backward(scale(sum(mul(w, w)), 0.5));
  opt.step(0.1);
  // decay: 1 - 0.1 * 0.01; bias-corrected m = 1, v = 1
  const double want = 0.999 - 0.1 / (1.0 + 1e-8);
  CHECK(std::abs(w[0] - want) <= 1e-15);
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0, 200, 1e-3, 1e-7) == 1e-3);
  CHECK(cosine_lr(199, 200, 1e-3, 1e-7) == doctest::Approx(1e-7));
  CHECK(cosine_lr(50, 101, 1.0, 0.0) == doctest::Approx(0.5));
  for (std::size_t s = 1; s < 200; ++s) CHECK(cosine_lr(s, 200, 1e-3, 1e-7) <= cosine_lr(s - 1, 200, 1e-3, 1e-7));
}

TEST_CASE("psnr against an explicit MSE") {
  std::vector<float> a(100, 0.5f), b(100, 0.5f);
  CHECK(std::isinf(psnr(a, b)));
  for (std::size_t i = 0; i < 100; ++i) b[i] = 0.6f;
  CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(1 / 0.01)).epsilon(1e-5));
  CHECK_THROWS(psnr(a, std::vector<float>(3)));
}

TEST_CASE("synthetic pair is seeded and the blur is a 9-tap box") {
  auto p = make_synthetic_pair(32, 7), q = make_synthetic_pair(32, 7);
  CHECK(p.sharp.pixels == q.sharp.pixels);
  CHECK(p.blur.pixels == q.blur.pixels);
  CHECK(psnr(p.blur.pixels, p.sharp.pixels) < 30.0);
  io::Image flat{4, 12, std::vector<float>(3 * 48, 0.25f)};
  for (auto v : blur_horizontal(flat, 9).pixels) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("trailing mean window") {
  std::vector<double> l{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  CHECK(trailing_mean(l, 10) == doctest::Approx(5.5));
  CHECK(trailing_mean(l, 11) == doctest::Approx(6.5));
  CHECK_THROWS(trailing_mean(l, 5));
}

TEST_CASE("a seeded 50-step run reproduces its loss log and weights") {
  const auto cfg = tiny_run();
  const std::vector<TrainingPair> pairs{make_synthetic_pair(16, 3)};
  TrainLog a, b;
  auto wa = train_demo(cfg, pairs, 50, 9, &a);
  auto wb = train_demo(cfg, pairs, 50, 9, &b);
  CHECK(a.loss.size() == 50);
  CHECK(a.to_csv() == b.to_csv());
  CHECK(a.to_csv().starts_with("# seed 9\nstep,lr,loss\n"));
  CHECK(io::encode_weights(wa) == io::encode_weights(wb));
  CHECK(a.loss.back() < a.loss.front());
}

TEST_CASE("training pairs are discovered by suffix") {
  auto dir = testing::scratch_dir("pairs");
  CHECK_THROWS_AS(load_pairs(dir), io::IoError);
  auto p = make_synthetic_pair(8, 1);
  io::write_ppm(dir / "b_blur.ppm", p.blur);
  io::write_ppm(dir / "b_sharp.ppm", p.sharp);
  io::write_ppm(dir / "a_blur.ppm", p.blur);
  io::write_ppm(dir / "a_sharp.ppm", p.sharp);
  io::write_ppm(dir / "orphan_blur.ppm", p.blur);
  auto pairs = load_pairs(dir);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].name == "a");
  CHECK(pairs[1].name == "b");

  io::write_ppm(dir / "c_blur.ppm", p.blur);
  io::write_ppm(dir / "c_sharp.ppm", make_synthetic_pair(6, 1).sharp);
  CHECK_THROWS_AS(load_pairs(dir), io::IoError);
  CHECK_THROWS_AS(load_pairs(dir / "nope"), io::IoError);
}
