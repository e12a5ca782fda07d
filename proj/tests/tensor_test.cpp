#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "rst/audit.hpp"
#include "rst/ops.hpp"
#include "rst/oracle.hpp"

using namespace rst;
using testing::as_double;
using testing::random_tensor;
using TF = Tensor<float>;

TEST_CASE("add and mul follow their componentwise definitions") {
  TF a({2}, {1, 2}), b({2}, {3, 4});
  auto c = add(a, b);
  CHECK(c[0] == 4.0f);
  CHECK(c[1] == 6.0f);

  std::mt19937_64 rng(1);
  auto x = random_tensor({3, 4}, rng);
  CHECK(testing::bitwise_equal(mul(x, TF::full({3, 4}, 1.0f)), x));
}

TEST_CASE("broadcasting uses trailing dimensions") {
  TF a({2, 3}, {1, 2, 3, 4, 5, 6}), b({3}, {10, 20, 30});
  auto c = add(a, b);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c[4] == 25.0f);
  CHECK(broadcast_shape({4, 1, 3}, {2, 1}) == Shape{4, 2, 3});
}

TEST_CASE("elementwise shape mismatch names both shapes") {
  TF a({2, 3}, std::vector<float>(6)), b({4}, std::vector<float>(4));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4]") != std::string::npos);
  }
}

TEST_CASE("layer norm moments match an independent double-precision recomputation") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({4, 8}, rng, -2.0, 2.0);
  auto y = layer_norm(x, 0);
  for (std::size_t c = 0; c < 8; ++c) {
    double m = 0, v = 0, xm = 0, xv = 0;
    for (std::size_t r = 0; r < 4; ++r) {
      m += y[r * 8 + c];
      xm += x[r * 8 + c];
    }
    m /= 4;
    xm /= 4;
    for (std::size_t r = 0; r < 4; ++r) {
      v += (y[r * 8 + c] - m) * (y[r * 8 + c] - m);
      xv += (x[r * 8 + c] - xm) * (x[r * 8 + c] - xm);
    }
    v /= 4;
    xv /= 4;
    CHECK(std::abs(m) <= 1e-6);
    CHECK(std::abs(v - xv / (xv + kLayerNormEps)) <= 1e-5);
    CHECK(std::abs(v - 1.0) <= 1e-5 + kLayerNormEps / xv);
  }
}

TEST_CASE("matmul examples") {
  TF eye({2, 2}, {1, 0, 0, 1}), m({2, 2}, {1, 2, 3, 4});
  CHECK(testing::bitwise_equal(matmul(eye, m), m));
  auto r = matmul(TF({1, 2}, {1, 0}), TF({2, 1}, {5, 7}));
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r[0] == 5.0f);

  std::mt19937_64 rng(4);
  auto a = random_tensor({7, 5}, rng), b = random_tensor({5, 3}, rng);
  auto want = oracle::naive_matmul(as_double(a), as_double(b), 7, 5, 3);
  auto got = as_double(matmul(a, b));
  CHECK(oracle::max_abs_diff(got, want).first <= 1e-5);

  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("softmax examples") {
  auto p = softmax(TF({2}, {0, 0}), 0);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));
  auto q = softmax(Tensor<double>({2}, {std::log(2.0), 0.0}), 0);
  CHECK(q[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  auto big = softmax(TF({2}, {1000, 0}), 0);
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] == doctest::Approx(0.0));
  CHECK_THROWS(softmax(TF({2, 0}, {}), 1));
}

TEST_CASE("conv2d examples") {
  std::mt19937_64 rng(5);
  auto x = random_tensor({1, 5, 6}, rng);
  std::vector<float> k(9, 0.0f);
  k[4] = 1.0f;
  CHECK(testing::bitwise_equal(conv2d(x, TF({1, 1, 3, 3}, k), 1, 1), x));

  auto ones = conv2d(TF::full({1, 3, 3}, 1.0f), TF::full({1, 1, 3, 3}, 1.0f), 1, 1);
  CHECK(ones[4] == 9.0f);
  for (std::size_t corner : {0, 2, 6, 8}) CHECK(ones[corner] == 4.0f);

  auto xi = random_tensor({2, 8, 8}, rng), kk = random_tensor({4, 2, 3, 3}, rng);
  auto want = oracle::naive_conv2d(as_double(xi), 2, 8, 8, as_double(kk), 4, 3, 3, 1, 1);
  CHECK(oracle::max_abs_diff(as_double(conv2d(xi, kk, 1, 1)), want).first <= 1e-5);

  auto strided = conv2d(xi, kk, 2, 0);
  CHECK(strided.shape() == Shape{4, 3, 3});  // (8 - 3) / 2 + 1
  CHECK_THROWS_AS(conv2d(TF::zeros({1, 2, 2}), TF::zeros({1, 1, 5, 5}), 1, 0), ShapeError);
}

TEST_CASE("conv2d_transpose examples") {
  auto y = conv2d_transpose(TF({1, 1, 1}, {2.5f}), TF::full({1, 1, 2, 2}, 1.0f), 2);
  CHECK(y.shape() == Shape{1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == 2.5f);

  std::mt19937_64 rng(6);
  auto x = random_tensor({3, 4, 4}, rng), k = random_tensor({2, 3, 2, 2}, rng);
  auto g = random_tensor({2, 2, 2}, rng);
  auto cx = conv2d(x, k, 2, 0);
  auto tg = conv2d_transpose(g, k, 2);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cx.numel(); ++i) lhs += static_cast<double>(cx[i]) * g[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += static_cast<double>(x[i]) * tg[i];
  CHECK(std::abs(lhs - rhs) <= 1e-5);

  auto z = conv2d_transpose(TF::zeros({2, 3, 3}), k, 2);
  for (auto v : z.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(conv2d_transpose(TF::zeros({2, 0, 3}), k, 2), ShapeError);
}

TEST_CASE("rfft2 examples") {
  auto spec = rfft2(TF::full({1, 8, 8}, 0.75f));
  CHECK(spec.shape() == Shape{1, 8, 5, 2});
  CHECK(spec[0] == doctest::Approx(64 * 0.75));
  for (std::size_t i = 1; i < spec.numel(); ++i) CHECK(std::abs(spec[i]) <= 1e-6);

  std::vector<float> wave(64);
  for (std::size_t h = 0; h < 8; ++h)
    for (std::size_t w = 0; w < 8; ++w) wave[h * 8 + w] = static_cast<float>(std::cos(2 * std::numbers::pi * w / 8.0));
  auto ws = rfft2(TF({8, 8}, wave));
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t v = 0; v < 5; ++v) {
      const double re = ws[(u * 5 + v) * 2], im = ws[(u * 5 + v) * 2 + 1];
      const double mag = std::hypot(re, im);
      if (u == 0 && v == 1) {
        CHECK(mag == doctest::Approx(32.0));
      } else {
        CHECK(mag <= 1e-5);
      }
    }

  std::mt19937_64 rng(7);
  auto x = random_tensor({1, 16, 16}, rng);
  auto full = oracle::naive_dft2(as_double(x), 16, 16);
  auto got = rfft2(x);
  double worst = 0;
  for (std::size_t u = 0; u < 16; ++u)
    for (std::size_t v = 0; v < 9; ++v) {
      worst = std::max(worst, std::abs(got[(u * 9 + v) * 2] - full[u * 16 + v].real()));
      worst = std::max(worst, std::abs(got[(u * 9 + v) * 2 + 1] - full[u * 16 + v].imag()));
    }
  CHECK(worst <= 1e-5);
}

TEST_CASE("rfft2 round trip and Parseval, including non power-of-two extents") {
  std::mt19937_64 rng(8);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 4}, {6, 10}, {5, 7}, {1, 1}}) {
    auto x = random_tensor({2, h, w}, rng);
    auto spec = rfft2(x);
    CHECK(testing::max_abs_diff(irfft2(spec, w), x) <= 1e-6);
    // Parseval on the half spectrum: weight interior columns twice.
    double spatial = 0, spectral = 0;
    for (auto v : x.data()) spatial += static_cast<double>(v) * v;
    const std::size_t half = w / 2 + 1;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < half; ++v) {
          const std::size_t i = ((c * h + u) * half + v) * 2;
          const double e = static_cast<double>(spec[i]) * spec[i] + static_cast<double>(spec[i + 1]) * spec[i + 1];
          const bool edge = v == 0 || (w % 2 == 0 && v == w / 2);
          spectral += edge ? e : 2 * e;
        }
    spectral /= static_cast<double>(h * w);
    CHECK(std::abs(spatial - spectral) <= 1e-4 * spatial);
  }
}

TEST_CASE("backward examples") {
  TF x({3}, {1, -2, 3});
  x.set_requires_grad();
  auto loss = scale(sum(mul(x, x)), 0.5f);
  backward(loss);
  CHECK(x.grad()[0] == 1.0f);
  CHECK(x.grad()[1] == -2.0f);
  CHECK(x.grad()[2] == 3.0f);

  TF a({2}, {1, 2}), w({2}, {5, 6});
  a.set_requires_grad();
  w.set_requires_grad();
  backward(add(sum(mul(a, a)), scale(sum(w), 0.0f)));
  for (auto g : w.grad()) CHECK(g == 0.0f);

  TF untracked({2}, {1, 1}), leaf({2}, {1, 2});
  leaf.set_requires_grad();
  backward(sum(mul(leaf, untracked)));
  CHECK_FALSE(untracked.has_grad());
}

TEST_CASE("backward rejects non-scalar and disconnected losses") {
  TF x({2}, {1, 2});
  x.set_requires_grad();
  CHECK_THROWS_AS(backward(mul(x, x)), AutodiffError);
  TF c({2}, {1, 2});
  CHECK_THROWS_AS(backward(sum(c)), AutodiffError);
}

TEST_CASE("grad tape replays every node exactly once, inputs before outputs") {
  TF x({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad();
  auto y = matmul(x, x);
  auto loss = sum(add(y, mul(y, x)));
  auto tape = GradTape<float>::record(loss);
  std::set<const void*> seen;
  for (const auto& n : tape.nodes()) CHECK(seen.insert(n.get()).second);
  std::size_t pos_y = 0, pos_loss = 0;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    if (tape.nodes()[i] == y.node_ptr()) pos_y = i;
    if (tape.nodes()[i] == loss.node_ptr()) pos_loss = i;
  }
  CHECK(pos_y < pos_loss);
  CHECK(pos_loss == tape.size() - 1);
}

TEST_CASE("ops are bitwise deterministic") {
  std::mt19937_64 rng(9);
  auto x = random_tensor({2, 8, 8}, rng), k = random_tensor({3, 2, 3, 3}, rng);
  CHECK(testing::bitwise_equal(conv2d(x, k, 1, 1), conv2d(x, k, 1, 1)));
  CHECK(testing::bitwise_equal(rfft2(x), rfft2(x)));
  CHECK(testing::bitwise_equal(layer_norm(x, 0), layer_norm(x, 0)));
}

TEST_CASE("per-op gradients agree with central differences on 20 seeds") {
  using Fn = std::function<TF(const std::vector<TF>&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    Fn fn;
  };
  const std::vector<Case> cases = {
      {"mul", {{3, 4}, {4}}, [](const auto& v) { return mul(v[0], v[1]); }},
      {"gelu", {{3, 4}}, [](const auto& v) { return gelu(v[0]); }},
      {"layer_norm", {{4, 3, 3}}, [](const auto& v) { return layer_norm(v[0], 0); }},
      {"matmul", {{3, 4}, {4, 2}}, [](const auto& v) { return matmul(v[0], v[1]); }},
      {"softmax", {{3, 4}}, [](const auto& v) { return softmax(v[0], 1); }},
      {"conv2d", {{2, 5, 5}, {2, 2, 3, 3}}, [](const auto& v) { return conv2d(v[0], v[1], 1, 1); }},
      {"conv2d_transpose", {{2, 3, 3}, {2, 2, 2, 2}}, [](const auto& v) { return conv2d_transpose(v[0], v[1], 2); }},
      {"rfft2", {{2, 4, 8}}, [](const auto& v) { return rfft2(v[0]); }},
      {"irfft2", {{2, 4, 5, 2}}, [](const auto& v) { return irfft2(v[0], 8); }},
      {"complex_mul", {{3, 5, 2}, {5, 2}}, [](const auto& v) { return complex_mul(v[0], v[1]); }},
      {"pad_reflect", {{2, 4, 5}}, [](const auto& v) { return pad_reflect(v[0], 2, 1, 1, 3); }},
  };
  for (const auto& c : cases) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed);
      std::vector<TF> inputs;
      for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng));
      auto r = audit::gradient_check<float>(c.name, "", inputs, c.fn, rng, 24, 1e-3);
      INFO(c.name << " seed " << seed << " rel " << r.relative_error);
      CHECK(r.passed);
    }
  }
}

TEST_CASE("f64 gradients meet the tighter tolerance") {
  std::mt19937_64 rng(10);
  std::vector<Tensor<double>> in{random_tensor<double>({2, 6, 6}, rng), random_tensor<double>({3, 2, 3, 3}, rng)};
  std::function<Tensor<double>(const std::vector<Tensor<double>>&)> fn = [](const auto& v) {
    return gelu(conv2d(v[0], v[1], 1, 1));
  };
  auto r = audit::gradient_check<double>("conv2d+gelu", "", in, fn, rng, 40, 1e-6);
  CHECK(r.passed);
}

TEST_CASE("gather scatters gradients back to repeated sources") {
  TF a({3}, {1, 2, 3});
  a.set_requires_grad();
  backward(sum(gather(a, Shape{4}, {0, 2, 2, 2})));
  CHECK(a.grad()[0] == 1.0f);
  CHECK(a.grad()[1] == 0.0f);
  CHECK(a.grad()[2] == 3.0f);
}

TEST_CASE("reflect padding mirrors without repeating the edge") {
  CHECK(reflect_index(-1, 4) == 1);
  CHECK(reflect_index(4, 4) == 2);
  CHECK(reflect_index(-5, 4) == 1);
  CHECK(reflect_index(0, 1) == 0);
  TF x({1, 1, 3}, {1, 2, 3});
  auto p = pad_reflect(x, 0, 0, 2, 2);
  const std::vector<float> want{3, 2, 1, 2, 3, 2, 1};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(p[i] == want[i]);
}

TEST_CASE("fault injection corrupts only the conv2d kernel gradient") {
  std::mt19937_64 rng(11);
  std::vector<TF> in{random_tensor({2, 5, 5}, rng), random_tensor({2, 2, 3, 3}, rng)};
  std::function<TF(const std::vector<TF>&)> fn = [](const auto& v) { return conv2d(v[0], v[1], 1, 1); };
  debug::set_fault(debug::Fault::kConv2dKernelGrad);
  auto bad = audit::gradient_check<float>("conv2d", "", in, fn, rng, 200, 1e-3);
  debug::set_fault(debug::Fault::kNone);
  auto good = audit::gradient_check<float>("conv2d", "", in, fn, rng, 200, 1e-3);
  CHECK_FALSE(bad.passed);
  CHECK(good.passed);
}
