#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "ldfuse/errors.hpp"
#include "ldfuse/losses.hpp"
#include "ldfuse/models.hpp"
#include "ldfuse/nn/ops.hpp"

using namespace ldfuse;
using namespace ldfuse::models;

namespace {

Tensor unit_noise(std::uint64_t seed, Shape shape) {
  Rng rng(seed);
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform();
  return t;
}

void jitter(nn::ParamSet& params, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& e : params.entries()) {
    for (double& v : e.var.mutable_value().values()) v += scale * rng.normal();
  }
}

// Exact noise predictor for data concentrated on one image.
class OracleDenoiser final : public Denoiser {
 public:
  OracleDenoiser(const schedule::ScheduleTable& table, Tensor x0) : table_(table), x0_(std::move(x0)) {}
  nn::Var forward(const nn::Var& x_t, int t, FeatureTaps*) const override {
    const double ab = table_.alpha_bar(t);
    Tensor eps = x_t.value();
    for (std::size_t i = 0; i < eps.size(); ++i) {
      eps[i] = (eps[i] - std::sqrt(ab) * x0_[i]) / std::sqrt(1.0 - ab);
    }
    return nn::Var::constant(eps);
  }
  std::vector<std::string> layer_ids() const override { return {}; }

 private:
  const schedule::ScheduleTable& table_;
  Tensor x0_;
};

Tensor channel_means(const Tensor& t) {
  Tensor m({t.channels(), 1, 1});
  for (int c = 0; c < t.channels(); ++c) {
    for (double v : t.channel(c)) m[c] += v;
    m[c] /= static_cast<double>(t.shape().plane());
  }
  return m;
}

}  // namespace

TEST_CASE("u-net shapes and determinism") {
  const TinyUNet net = build_tiny_unet({}, 1);
  const Tensor x = unit_noise(2, {4, 32, 32});
  const Tensor y = net.predict(x, 10);
  CHECK(y.shape() == x.shape());
  CHECK(net.predict(x, 10) == y);
  CHECK(net.predict(x, 11) != y);
  CHECK_THROWS_AS(net.predict(unit_noise(2, {4, 30, 30}), 10), ShapeError);
  CHECK_THROWS_AS(net.predict(unit_noise(2, {3, 32, 32}), 10), ShapeError);
  CHECK_THROWS_AS(build_tiny_unet({4, 2, 32, 4}, 1), ParameterError);
  CHECK(build_tiny_unet({}, 1).params().checksum() == net.params().checksum());
  CHECK(build_tiny_unet({}, 2).params().checksum() != net.params().checksum());

  CHECK(net.layer_channels("dec0") == 16);
  CHECK(net.layer_channels("dec1") == 32);
  CHECK_THROWS_AS(net.layer_channels("enc9"), ParameterError);
}

TEST_CASE("fusion feature extraction") {
  const TinyUNet net = build_tiny_unet({}, 1);
  const schedule::ScheduleTable table = schedule::make_linear_schedule(100, 1e-4, 0.02);
  const imageio::MultiChannelImage x0{unit_noise(3, {4, 16, 16})};
  const Tensor one = extract_fusion_features(net, table, x0, {5}, {"dec0"}, 7);
  CHECK(one.shape() == Shape{16, 16, 16});
  const Tensor two = extract_fusion_features(net, table, x0, {5, 50}, {"dec0"}, 7);
  CHECK(two.channels() == 32);
  CHECK(two.channel_slice(0, 16) == one);
  CHECK(extract_fusion_features(net, table, x0, {5, 50}, {"dec0"}, 7) == two);
  CHECK(extract_fusion_features(net, table, x0, {5, 50}, {"dec0"}, 8) != two);
  CHECK(extract_fusion_features(net, table, x0, {5, 50}, {"dec1", "dec0"}, 7).channels() == 96);
  CHECK_THROWS_AS(extract_fusion_features(net, table, x0, {}, {"dec0"}, 7), ParameterError);
  CHECK_THROWS_AS(extract_fusion_features(net, table, x0, {101}, {"dec0"}, 7), IndexError);
  CHECK(extract_autoencoder_features(net, x0, {5, 50}, {"dec1"}).channels() == 64);
}

TEST_CASE("depth net") {
  const TinyDepthNet vis = build_tiny_depthnet(3, 1);
  const TinyDepthNet ir = build_tiny_depthnet(1, 2);
  const Tensor a = unit_noise(4, {3, 16, 16}), b = unit_noise(5, {3, 16, 16});
  const imageio::DepthMap da = vis.predict(a);
  CHECK(da.depth.shape() == Shape{1, 16, 16});
  for (double v : da.depth.values()) CHECK(v >= kDepthFloor);
  CHECK(da.count_valid() == da.depth.size());
  CHECK(vis.predict(b).depth != da.depth);
  CHECK(vis.predict(a) == da);
  CHECK_THROWS_AS(vis.predict(unit_noise(4, {1, 16, 16})), ShapeError);
  CHECK_THROWS_AS(ir.predict(a), ShapeError);
  CHECK_THROWS_AS(vis.predict(unit_noise(4, {3, 18, 18})), ShapeError);
}

TEST_CASE("fusion head") {
  const FusionHead head({8, 6}, 3);
  const Tensor f = unit_noise(6, {8, 8, 8});
  const Tensor out = reconstruct_fused(head, f, guidance::SemanticParams::identity(6));
  CHECK(out.shape() == Shape{3, 8, 8});
  for (double v : out.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(reconstruct_fused(head, f, guidance::SemanticParams::identity(6)) == out);
  const nn::Var z = guidance::params_to_var(std::vector<double>(6, 0.0));
  CHECK(head.forward(nn::Var::constant(f), z, z).value() == out);
  const guidance::SemanticParams p{std::vector<double>(6, 0.5), std::vector<double>(6, -0.2)};
  CHECK(reconstruct_fused(head, f, p) != out);
  CHECK_THROWS_AS(reconstruct_fused(head, unit_noise(6, {7, 8, 8}), guidance::SemanticParams::identity(6)),
                  ShapeError);
  CHECK_THROWS_AS(reconstruct_fused(head, f, guidance::SemanticParams::identity(5)), ShapeError);
}

TEST_CASE("gradient check: denoiser") {
  TinyUNet net = build_tiny_unet({8, 2, 4, 4}, 11);
  jitter(net.params(), 0.05, 1);
  const Tensor x = unit_noise(7, {4, 4, 4}), target = unit_noise(8, {4, 4, 4});
  auto loss = [&] { return losses::l_diff(net.forward(nn::Var::constant(x), 3), target); };
  CHECK(testing::param_gradcheck(net.params(), loss) < 1e-3);
}

TEST_CASE("gradient check: depth nets") {
  for (int c : {1, 3}) {
    TinyDepthNet net = build_tiny_depthnet(c, 12, 4);
    const Tensor x = unit_noise(9, {c, 8, 8});
    Tensor depth = unit_noise(10, {1, 8, 8});
    for (double& v : depth.values()) v = 1.0 + 5.0 * v;
    const imageio::DepthMap gt(depth);
    auto loss = [&] { return losses::silog(gt, net.forward(nn::Var::constant(x))); };
    CHECK(testing::param_gradcheck(net.params(), loss) < 1e-3);
  }
}

TEST_CASE("gradient check: fusion head under modulation") {
  FusionHead head({4, 4}, 13);
  const Tensor f = unit_noise(11, {4, 4, 4});
  const Tensor vis = unit_noise(12, {3, 4, 4}), ir = unit_noise(13, {1, 4, 4});
  const nn::Var sigma = nn::Var::constant(Tensor::vector({0.2, -0.3, 0.1, 0.5}));
  const nn::Var mu = nn::Var::constant(Tensor::vector({0.0, 0.1, -0.2, 0.3}));
  auto loss = [&] {
    return losses::l_fusion(head.forward(nn::Var::constant(f), sigma, mu), ir, vis).total;
  };
  CHECK(testing::param_gradcheck(head.params(), loss) < 1e-3);
}

TEST_CASE("oracle noise predictor recovers a constant image") {
  const schedule::ScheduleTable table = schedule::make_linear_schedule(100, 1e-4, 0.02);
  Tensor x0({4, 8, 8});
  const double levels[4] = {0.2, 0.4, 0.6, 0.8};
  for (int c = 0; c < 4; ++c) {
    for (double& v : x0.channel(c)) v = levels[c];
  }
  const OracleDenoiser oracle(table, x0);
  Rng rng(21);
  const Tensor m = channel_means(sample_ancestral(oracle, table, x0.shape(), rng));
  for (int c = 0; c < 4; ++c) CHECK(std::abs(m[c] - levels[c]) < 0.1);
}

TEST_CASE("denoiser trained on a constant image samples its channel means") {
  const schedule::ScheduleTable table = schedule::make_linear_schedule(100, 1e-4, 0.02);
  Tensor x0({4, 8, 8});
  const double levels[4] = {0.2, 0.4, 0.6, 0.8};
  for (int c = 0; c < 4; ++c) {
    for (double& v : x0.channel(c)) v = levels[c];
  }
  TinyUNet net = build_tiny_unet({8, 2, 16, 4}, 5);
  nn::AdamOptions opt_options;
  opt_options.lr = 3e-3;
  opt_options.grad_clip = 1.0;
  nn::Adam opt(net.params(), opt_options);
  Rng rng(6);
  double tail = 0.0;
  const int steps = 6000;
  for (int step = 0; step < steps; ++step) {
    opt.set_lr(3e-3 * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * step / steps))));
    const int t = rng.uniform_int(1, table.steps());
    const Tensor noise = rng.normal_tensor(x0.shape());
    const auto noisy = schedule::forward_marginal(table, x0, t, noise);
    const nn::Var loss = losses::l_diff(net.forward(nn::Var::constant(noisy.x), t), noise);
    nn::backward(loss);
    opt.step();
    if (step >= steps - 100) tail += loss.value()[0] / 100.0;
  }
  CHECK(tail < 0.05);
  Rng sampler(22);
  const Tensor m = channel_means(sample_ancestral(net, table, x0.shape(), sampler));
  for (int c = 0; c < 4; ++c) CHECK(std::abs(m[c] - levels[c]) < 0.1);
}
