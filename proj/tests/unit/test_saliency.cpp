#include <doctest.h>

#include <cmath>

#include "featclust/error.hpp"
#include "featclust/saliency.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace featclust;

namespace {

Tensor constant_grad(std::uint32_t h, std::uint32_t w, std::vector<float> alpha) {
  const auto c = static_cast<std::uint32_t>(alpha.size());
  std::vector<float> data;
  for (std::uint32_t n = 0; n < h * w; ++n) data.insert(data.end(), alpha.begin(), alpha.end());
  return Tensor({h, w, c}, DType::kSigned, std::move(data));
}

TileComparison make_tile(int label, const std::vector<std::vector<double>>& class_maps,
                         std::vector<double> saliency) {
  TileComparison t;
  t.label = label;
  t.k = static_cast<int>(class_maps.size());
  t.saliency = std::move(saliency);
  t.weights.resize(t.saliency.size() * class_maps.size());
  for (std::size_t n = 0; n < t.saliency.size(); ++n)
    for (std::size_t c = 0; c < class_maps.size(); ++c) t.weights[n * class_maps.size() + c] = class_maps[c][n];
  return t;
}

}  // namespace

TEST_SUITE("saliency") {
  TEST_CASE("gradcam single-cell examples") {
    const Tensor a({1, 1, 2}, DType::kNonNegative, {2.0F, 3.0F});
    CHECK(gradcam(a, constant_grad(1, 1, {1.0F, -1.0F})).values == std::vector<float>{0.0F});
    const Tensor b({1, 1, 2}, DType::kNonNegative, {2.0F, 1.0F});
    CHECK(gradcam(b, constant_grad(1, 1, {3.0F, 1.0F})).values == std::vector<float>{7.0F});
  }

  TEST_CASE("gradcam uses the spatial mean of the gradient") {
    // Gradients vary per cell but average to (1, 0).
    const Tensor a({1, 2, 2}, DType::kNonNegative, {1.0F, 5.0F, 2.0F, 5.0F});
    const Tensor g({1, 2, 2}, DType::kSigned, {3.0F, 4.0F, -1.0F, -4.0F});
    const SaliencyGrid s = gradcam(a, g);
    CHECK(s.width == 2);
    CHECK(s.height == 1);
    CHECK(s.values == std::vector<float>{1.0F, 2.0F});
  }

  TEST_CASE("gradcam matches the oracle") {
    gen::Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
      const auto h = static_cast<std::uint32_t>(rng.integer(1, 8));
      const auto w = static_cast<std::uint32_t>(rng.integer(1, 8));
      const auto c = static_cast<std::uint32_t>(rng.integer(1, 16));
      const Tensor a = gen::tensor(rng, h, w, c);
      const Tensor g = gen::tensor(rng, h, w, c, DType::kSigned);
      const auto expected = oracle::gradcam(a, g);
      const SaliencyGrid s = gradcam(a, g);
      REQUIRE(s.values.size() == expected.size());
      for (std::size_t n = 0; n < expected.size(); ++n) CHECK(std::abs(s.values[n] - expected[n]) <= 1e-6);
      const Tensor t = s.to_tensor();
      CHECK(t.shape() == TensorShape{h, w, 1});
    }
  }

  TEST_CASE("gradcam shape and dtype errors") {
    const Tensor a({2, 2, 3}, DType::kNonNegative);
    CHECK_THROWS_AS(gradcam(a, Tensor({2, 2, 4}, DType::kSigned)), ValidationError);
    CHECK_THROWS_AS(gradcam(Tensor({2, 2, 3}, DType::kSigned), Tensor({2, 2, 3}, DType::kSigned)), ValidationError);
  }

  TEST_CASE("IoU example and oracle") {
    // Four positive cells each, overlapping on two: 2 / 6.
    const std::vector<double> a{1, 1, 1, 1, 0, 0}, b{0, 0, 1, 1, 1, 1};
    CHECK(iou_positive(a, b).iou == doctest::Approx(1.0 / 3.0));
    const IouResult empty = iou_positive(std::vector<double>(4, 0.0), std::vector<double>(4, 0.0));
    CHECK(empty.empty_union);
    CHECK(empty.iou == 0.0);

    gen::Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
      const auto n = static_cast<std::size_t>(rng.integer(1, 40));
      std::vector<double> x(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.coin(0.5) ? 0.0 : rng.uniform();
        y[i] = rng.coin(0.5) ? 0.0 : rng.uniform();
      }
      const double eps = rng.coin() ? 0.0 : 0.3;
      const double got = iou_positive(x, y, eps).iou;
      CHECK(got == oracle::iou_sets(x, y, eps));
      CHECK(got == iou_positive(y, x, eps).iou);
      CHECK(got >= 0.0);
      CHECK(got <= 1.0);
    }
    CHECK_THROWS_AS(iou_positive(a, std::vector<double>(3, 0.0)), ValidationError);
  }

  TEST_CASE("correlation per label group") {
    const std::vector<double> s{0.0, 1.0, 2.0, 3.0};
    const std::vector<TileComparison> tiles{
        make_tile(1, {{0, 2, 4, 6}, {3, 2, 1, 0}, {1, 1, 1, 1}}, s),
        make_tile(0, {{0, 1, 2, 3}, {6, 4, 2, 0}, {1, 1, 1, 1}}, s),
    };
    const auto corr = saliency_correlation(tiles, 3);
    CHECK(corr[0].cancer.mean() == doctest::Approx(1.0));
    CHECK(corr[0].benign.mean() == doctest::Approx(1.0));
    CHECK(corr[1].cancer.mean() == doctest::Approx(-1.0));
    CHECK(corr[1].benign.mean() == doctest::Approx(-1.0));
    CHECK(corr[2].cancer.count() == 0);
    CHECK(corr[2].skipped_cancer == 1);
    CHECK(corr[2].skipped_benign == 1);
  }

  TEST_CASE("correlation is invariant to positive affine maps of either input") {
    gen::Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> w(10), s(10);
      for (std::size_t n = 0; n < 10; ++n) {
        w[n] = rng.uniform();
        s[n] = rng.uniform();
      }
      std::vector<double> w2(w), s2(s);
      const double a = rng.uniform(0.1, 5.0), b = rng.uniform(0.0, 3.0);
      for (double& x : w2) x = a * x + b;
      for (double& x : s2) x = x * 2.0 + 1.0;
      const std::vector<TileComparison> t1{make_tile(0, {w}, s)}, t2{make_tile(0, {w2}, s2)};
      CHECK(saliency_correlation(t1, 1)[0].benign.mean() ==
            doctest::Approx(saliency_correlation(t2, 1)[0].benign.mean()).epsilon(1e-9));
      CHECK(saliency_correlation(t1, 1)[0].benign.mean() == doctest::Approx(*oracle::pearson(w, s)));
    }
  }

  TEST_CASE("suppression zeroes values at or below the thresholds") {
    TileComparison t = make_tile(0, {{0.1, 0.5, 0.2}, {0.3, 0.3, 0.9}}, {0.05, 0.5, 0.06});
    const std::vector<double> thresholds{0.2, 0.3};
    suppress_small_values(t, thresholds, 0.05);
    CHECK(t.class_map(0) == std::vector<double>{0.0, 0.5, 0.0});
    CHECK(t.class_map(1) == std::vector<double>{0.0, 0.0, 0.9});
    CHECK(t.saliency == std::vector<double>{0.0, 0.5, 0.06});
    CHECK_THROWS_AS(suppress_small_values(t, std::vector<double>{0.1}, 0.0), ValidationError);
  }

  TEST_CASE("comparison report and table") {
    const std::vector<TileComparison> tiles{
        make_tile(1, {{0, 1, 1, 0}, {1, 0, 0, 1}}, {0, 1, 1, 0}),
        make_tile(0, {{0, 0, 1, 1}, {1, 1, 0, 0}}, {0, 0, 1, 2}),
    };
    const ComparisonReport r = compare_saliency(tiles, 2);
    CHECK(r.tiles == 2);
    CHECK(r.classes[0].iou.mean() == doctest::Approx(1.0));
    CHECK(r.classes[1].iou.mean() == doctest::Approx(0.0));
    const std::string tsv = format_comparison_tsv(r);
    CHECK(tsv.rfind("class\tiou_mean\tiou_std\tcorr_benign_mean", 0) == 0);
    CHECK(tsv.find("\n1\t1.0000\t0.0000\t") != std::string::npos);
    CHECK(tsv.find("\n2\t0.0000\t0.0000\t") != std::string::npos);

    TileComparison bad = tiles[0];
    bad.saliency.pop_back();
    CHECK_THROWS_AS(compare_saliency(std::vector<TileComparison>{bad}, 2), ValidationError);
  }
}
