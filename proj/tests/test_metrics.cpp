#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcg.hpp"
#include "ldfuse/errors.hpp"
#include "ldfuse/metrics.hpp"
#include "ldfuse/rng.hpp"

using namespace ldfuse;
using namespace ldfuse::metrics;
using ldfuse::testing::lcg_bytes;

namespace {

Tensor plane(int h, int w, std::vector<double> v) { return Tensor({1, h, w}, std::move(v)); }

// Smooth 8-bit texture used as a source image.
Tensor texture(int n) {
  Tensor t({1, n, n});
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      t(0, y, x) = std::round(127.5 + 100.0 * std::sin(x / 3.0) * std::cos(y / 4.0));
    }
  }
  return t;
}

Tensor add_noise(const Tensor& t, double sigma, Rng& rng) {
  Tensor out = t;
  for (double& v : out.values()) v = std::clamp(std::round(v + sigma * rng.normal()), 0.0, 255.0);
  return out;
}

Tensor hflip(const Tensor& t) {
  Tensor out(t.shape());
  for (int y = 0; y < t.height(); ++y) {
    for (int x = 0; x < t.width(); ++x) out(0, y, x) = t(0, y, t.width() - 1 - x);
  }
  return out;
}

}  // namespace

TEST_CASE("spatial frequency") {
  CHECK(sf(Tensor({1, 5, 5}, 17.0)) == 0.0);
  CHECK(sf(plane(2, 2, {0, 1, 0, 1})) == doctest::Approx(1.0));
  Tensor checker({1, 6, 6});
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) checker(0, y, x) = (x + y) % 2 ? 255.0 : 0.0;
  }
  CHECK(sf(checker) == doctest::Approx(255.0 * std::sqrt(2.0)));
  CHECK_THROWS_AS(sf(Tensor({1, 1, 5})), SizeError);
  const Tensor f = lcg_bytes(11, {1, 16, 16});
  CHECK(std::abs(sf(f) - 141.115555485567) < 1e-9);
  Tensor shifted = f;
  for (double& v : shifted.values()) v += 3.0;
  CHECK(sf(shifted) == doctest::Approx(sf(f)).epsilon(1e-14));
}

TEST_CASE("standard deviation") {
  CHECK(sd(Tensor({1, 3, 3}, 9.0)) == 0.0);
  CHECK(sd(plane(2, 2, {0, 255, 0, 255})) == doctest::Approx(127.5));
  CHECK(std::abs(sd(lcg_bytes(11, {1, 16, 16})) - 72.893570328355) < 1e-9);
}

TEST_CASE("mutual information") {
  Tensor bin({1, 8, 8});
  for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = i % 2 ? 255.0 : 0.0;
  CHECK(mi(bin, bin, bin) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(mutual_information(bin, Tensor({1, 8, 8}, 40.0)) == 0.0);

  const Tensor f = lcg_bytes(11, {1, 16, 16}), a = lcg_bytes(22, {1, 16, 16}),
               b = lcg_bytes(33, {1, 16, 16});
  CHECK(std::abs(mi(f, a, b) - 12.745641054637) < 1e-9);
  CHECK(mi(f, a, b) == doctest::Approx(mi(f, b, a)).epsilon(1e-14));
  CHECK_THROWS_AS(mi(f, Tensor({1, 8, 8}), b), ShapeError);
  CHECK_THROWS_AS(mutual_information(plane(1, 2, {0.5, 1}), plane(1, 2, {0, 1})), DomainError);
}

TEST_CASE("qabf") {
  const Tensor tex = texture(32);
  CHECK(qabf(tex, tex, tex) >= 0.99);
  CHECK(qabf(Tensor({1, 32, 32}, 128.0), tex, tex) <= 0.05);
  CHECK(qabf(tex, Tensor({1, 32, 32}, 3.0), Tensor({1, 32, 32}, 3.0)) == 0.0);

  const Tensor f = lcg_bytes(11, {1, 16, 16}), a = lcg_bytes(22, {1, 16, 16}),
               b = lcg_bytes(33, {1, 16, 16});
  CHECK(std::abs(qabf(f, a, b) - 0.135978658665) < 1e-9);
  CHECK(std::abs(qabf(lcg_bytes(44, {1, 32, 32}), lcg_bytes(55, {1, 32, 32}),
                      lcg_bytes(66, {1, 32, 32})) -
                 0.133562247412) < 1e-9);
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    Tensor x({1, 12, 12}), y({1, 12, 12}), z({1, 12, 12});
    for (double& v : x.values()) v = rng.uniform_int(0, 255);
    for (double& v : y.values()) v = rng.uniform_int(0, 255);
    for (double& v : z.values()) v = rng.uniform_int(0, 255);
    const double q = qabf(x, y, z);
    CHECK(q >= 0.0);
    CHECK(q <= 1.0);
  }
}

TEST_CASE("vif") {
  const Tensor tex = texture(32);
  CHECK(std::abs(vif(tex, tex, tex) - 1.0) < 1e-6);
  CHECK(std::abs(vif_single(tex, tex) - 1.0) < 1e-6);

  Rng rng(2);
  Tensor noise({1, 32, 32});
  for (double& v : noise.values()) v = rng.uniform_int(0, 255);
  CHECK(vif(noise, tex, tex) < 0.2);

  const double v1 = vif(add_noise(tex, 5.0, rng), tex, tex);
  const double v2 = vif(add_noise(tex, 15.0, rng), tex, tex);
  const double v3 = vif(add_noise(tex, 40.0, rng), tex, tex);
  CHECK(v1 > v2);
  CHECK(v2 > v3);

  CHECK(std::abs(vif(lcg_bytes(44, {1, 32, 32}), lcg_bytes(55, {1, 32, 32}),
                     lcg_bytes(66, {1, 32, 32})) -
                 0.000241462339) < 1e-9);
  CHECK_THROWS_AS(vif(Tensor({1, 16, 16}), Tensor({1, 16, 16}), Tensor({1, 16, 16})), SizeError);
}

TEST_CASE("metrics are invariant under a shared horizontal flip") {
  const Tensor f = lcg_bytes(44, {1, 32, 32}), a = texture(32), b = lcg_bytes(66, {1, 32, 32});
  const Tensor ff = hflip(f), fa = hflip(a), fb = hflip(b);
  CHECK(sf(ff) == doctest::Approx(sf(f)).epsilon(1e-14));
  CHECK(sd(ff) == doctest::Approx(sd(f)).epsilon(1e-14));
  CHECK(mi(ff, fa, fb) == doctest::Approx(mi(f, a, b)).epsilon(1e-12));
  CHECK(qabf(ff, fa, fb) == doctest::Approx(qabf(f, a, b)).epsilon(1e-12));
  CHECK(vif(ff, fa, fb) == doctest::Approx(vif(f, a, b)).epsilon(1e-9));
}

TEST_CASE("depth rmse") {
  const imageio::DepthMap gt(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  CHECK(depth_rmse(gt, gt) == 0.0);
  CHECK(depth_rmse(gt, imageio::DepthMap(Tensor({1, 2, 2}, {2, 3, 4, 5}))) == doctest::Approx(1.0));
  const Tensor g = testing::lcg_unit(77, {1, 4, 4}), p = testing::lcg_unit(88, {1, 4, 4});
  Tensor gm = g, pm = p;
  for (double& v : gm.values()) v = v * 10 + 1;
  for (double& v : pm.values()) v = v * 10 + 1;
  CHECK(std::abs(depth_rmse(imageio::DepthMap(gm), imageio::DepthMap(pm)) - 3.772541757296) < 1e-9);
  CHECK_THROWS_AS(depth_rmse(imageio::DepthMap(Tensor({1, 2, 2})), gt), DomainError);
}

TEST_CASE("quantization and reports") {
  Tensor rgb({3, 32, 32});
  Rng rng(3);
  for (double& v : rgb.values()) v = rng.uniform();
  const Tensor g = quantize_gray(rgb);
  for (double v : g.values()) {
    CHECK(v == std::round(v));
    CHECK(v >= 0.0);
    CHECK(v <= 255.0);
  }
  Tensor ir({1, 32, 32});
  for (double& v : ir.values()) v = rng.uniform_int(0, 255) / 255.0;
  const FusionReport r = score_fusion("p", rgb, ir, rgb);
  CHECK(r.pair_id == "p");
  CHECK(r.sf == sf(g));
  CHECK(r.vif == doctest::Approx(vif(g, quantize_gray(ir), g)));
  const auto j = r.to_json();
  CHECK(j.contains("qabf"));
  CHECK_FALSE(j.contains("depth_rmse_fused"));

  FusionReport r2 = r;
  r2.sf = r.sf + 2.0;
  const MetricMeans m = aggregate({r, r2});
  CHECK(m.sf == doctest::Approx(r.sf + 1.0));
  CHECK_FALSE(m.depth_rmse_fused.has_value());
  const std::string csv = aggregate_csv({{"row", m}});
  CHECK(csv.rfind("method,SF,Qab/f,MI,SD,VIF\n", 0) == 0);
}
