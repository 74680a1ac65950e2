#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hlmg/tensor.hpp"

using namespace hlmg;
using namespace hlmg::ad;

namespace {

Tensor<double> randt(int r, int c, Rng& rng, bool rg = true) {
  return Tensor<double>::randn(r, c, 0.5, rng, rg);
}

// finite-difference oracle for one scalar-valued builder over a parameter list
double fd_max_err(const std::function<Tensor<double>()>& f,
                  const std::vector<std::pair<std::string, Tensor<double>>>& params) {
  auto report = grad_check<double>(f, params, 1e-6, 64, 7);
  return report.max_rel_err;
}

}  // namespace

TEST_CASE("softmax of a uniform row is uniform") {
  auto x = Tensor<float>::from_data(1, 4, {2.f, 2.f, 2.f, 2.f});
  auto p = softmax_rows(x);
  for (float v : p.value()) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  auto x = Tensor<float>::randn(5, 9, 3.f, rng);
  auto p = softmax_rows(x);
  for (int i = 0; i < 5; ++i) {
    float s = 0;
    for (int j = 0; j < 9; ++j) s += p.value()[i * 9 + j];
    CHECK(s == doctest::Approx(1.f).epsilon(1e-6));
  }
}

TEST_CASE("masked fill then softmax puts full weight on the only unmasked entry") {
  auto x = Tensor<float>::from_data(1, 4, {0.3f, -1.f, 2.f, 0.9f});
  std::vector<uint8_t> mask{1, 1, 0, 1};
  auto p = softmax_rows(masked_fill(x, mask, -1e9f));
  CHECK(p.value()[0] == 0.0f);
  CHECK(p.value()[1] == 0.0f);
  CHECK(p.value()[2] == 1.0f);
  CHECK(p.value()[3] == 0.0f);
}

TEST_CASE("cross entropy of uniform 2-class logits is ln 2") {
  auto x = Tensor<float>::from_data(1, 2, {0.7f, 0.7f});
  CHECK(cross_entropy_logits(x, 0).item() == doctest::Approx(std::log(2.f)));
  CHECK(cross_entropy_logits(x, 1).item() == doctest::Approx(std::log(2.f)));
}

TEST_CASE("sum of squares gradient matches the analytic value") {
  auto x = Tensor<double>::from_data(1, 2, {1.0, 2.0}, true);
  auto loss = sum_all(mul(x, x));
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));

  auto report = grad_check<double>([&]() { return sum_all(mul(x, x)); }, {{"x", x}}, 1e-6);
  CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("finite differences validate every primitive") {
  Rng rng(11);
  auto a = randt(3, 4, rng);
  auto b = randt(4, 5, rng);
  auto c = randt(3, 4, rng);
  auto row = randt(1, 4, rng);
  auto gain = randt(1, 4, rng);
  auto bias = randt(1, 4, rng);
  auto table = randt(6, 4, rng);
  std::vector<std::pair<std::string, Tensor<double>>> params{
      {"a", a}, {"b", b}, {"c", c}, {"row", row}, {"gain", gain}, {"bias", bias}, {"table", table}};

  SUBCASE("matmul") {
    CHECK(fd_max_err([&]() { return sum_all(matmul(a, b)); }, params) < 1e-7);
  }
  SUBCASE("add and mul") {
    CHECK(fd_max_err([&]() { return sum_all(mul(add(a, c), c)); }, params) < 1e-7);
  }
  SUBCASE("add_rowwise and transpose") {
    CHECK(fd_max_err([&]() { return sum_all(transpose(add_rowwise(a, row))); }, params) < 1e-7);
  }
  SUBCASE("softmax") {
    CHECK(fd_max_err([&]() { return sum_all(mul(softmax_rows(a), c)); }, params) < 1e-6);
  }
  SUBCASE("layer_norm") {
    CHECK(fd_max_err([&]() { return sum_all(mul(layer_norm_rows(a, gain, bias), c)); }, params) <
          1e-6);
  }
  SUBCASE("gelu") {
    CHECK(fd_max_err([&]() { return sum_all(gelu(a)); }, params) < 1e-7);
  }
  SUBCASE("sigmoid and scalar broadcast") {
    auto s = randt(1, 1, rng);
    std::vector<std::pair<std::string, Tensor<double>>> ps{{"a", a}, {"s", s}};
    CHECK(fd_max_err([&]() { return sum_all(mul_scalar(a, sigmoid(s))); }, ps) < 1e-7);
  }
  SUBCASE("embedding lookup") {
    std::vector<int> ids{0, 3, 3};
    CHECK(fd_max_err([&]() { return sum_all(mul(embedding_rows(table, ids), a)); }, params) < 1e-7);
  }
  SUBCASE("mean, slices, concat") {
    CHECK(fd_max_err(
              [&]() {
                auto m = mean_rows(a, 0, 2);
                auto s = slice_rows(a, 1, 3);
                auto cc = concat_cols(slice_cols(a, 0, 2), slice_cols(a, 2, 4));
                return add(add(sum_all(m), sum_all(s)), sum_all(mul(cc, c)));
              },
              params) < 1e-7);
  }
  SUBCASE("cross entropy") {
    auto logits = randt(1, 5, rng);
    std::vector<std::pair<std::string, Tensor<double>>> ps{{"logits", logits}};
    CHECK(fd_max_err([&]() { return cross_entropy_logits(logits, 2); }, ps) < 1e-7);
  }
  SUBCASE("masked fill") {
    std::vector<uint8_t> mask(12, 0);
    mask[1] = mask[5] = mask[10] = 1;
    CHECK(fd_max_err(
              [&]() { return sum_all(mul(softmax_rows(masked_fill(a, mask, -1e9)), c)); },
              params) < 1e-6);
  }
}

TEST_CASE("backward is linear: grad of a*f + b*g") {
  Rng rng(5);
  auto x = randt(2, 3, rng);
  auto w = randt(3, 3, rng, false);

  auto run = [&](double ca, double cb) {
    x.zero_grad();
    auto f = sum_all(matmul(x, w));
    auto g = sum_all(mul(x, x));
    auto loss = add(scale(f, ca), scale(g, cb));
    loss.backward();
    return x.grad();
  };
  auto gf = run(1.0, 0.0);
  auto gg = run(0.0, 1.0);
  auto gc = run(2.5, -1.25);
  for (size_t i = 0; i < gc.size(); ++i)
    CHECK(gc[i] == doctest::Approx(2.5 * gf[i] - 1.25 * gg[i]).epsilon(1e-9));
}

TEST_CASE("gradients accumulate across fan-out and repeated backward") {
  auto x = Tensor<double>::from_data(1, 1, {3.0}, true);
  auto y = mul(x, x);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  auto z = mul(x, x);
  z.backward();  // leaf grads are not cleared between calls
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("layer_norm rows have mean 0 and variance 1 before the affine") {
  Rng rng(17);
  auto x = Tensor<float>::randn(6, 32, 2.f, rng);
  auto gain = Tensor<float>::filled(1, 32, 1.f);
  auto bias = Tensor<float>::zeros(1, 32);
  auto y = layer_norm_rows(x, gain, bias);
  for (int i = 0; i < 6; ++i) {
    double mean = 0, var = 0;
    for (int j = 0; j < 32; ++j) mean += y.value()[i * 32 + j];
    mean /= 32;
    for (int j = 0; j < 32; ++j) {
      double d = y.value()[i * 32 + j] - mean;
      var += d * d;
    }
    var /= 32;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("dropout scales kept entries and is identity in eval mode") {
  Rng rng(9);
  auto x = Tensor<float>::filled(4, 50, 1.f, true);
  Rng drng(42);
  auto eval = dropout(x, 0.5, false, drng);
  CHECK(eval.n.get() == x.n.get());

  auto train = dropout(x, 0.5, true, drng);
  int zeros = 0;
  for (float v : train.value()) {
    if (v == 0.f) ++zeros;
    else CHECK(v == doctest::Approx(2.f));
  }
  CHECK(zeros > 40);
  CHECK(zeros < 160);
}

TEST_CASE("identical seeds give bit-identical forward values") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto x = Tensor<float>::randn(4, 8, 1.f, rng);
    auto w = Tensor<float>::randn(8, 8, 1.f, rng);
    Rng drng(seed + 1);
    auto y = dropout(gelu(matmul(x, w)), 0.3, true, drng);
    return y.value();
  };
  CHECK(run(7) == run(7));
}

TEST_CASE("shape errors name the op and both shapes") {
  auto a = Tensor<float>::zeros(2, 3);
  auto b = Tensor<float>::zeros(2, 3);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_AS(add(a, Tensor<float>::zeros(3, 2)), ShapeError);
  CHECK_THROWS_AS(mean_rows(a, 1, 1), ShapeError);
  CHECK_THROWS_AS(select(a, 5, 0), ShapeError);
}

TEST_CASE("no-grad mode skips graph construction") {
  auto x = Tensor<float>::from_data(1, 2, {1.f, 2.f}, true);
  NoGradGuard ng;
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.n->parents.empty());
}
