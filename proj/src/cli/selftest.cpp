#include <cmath>
#include <functional>
#include <ostream>

#include "ldfuse/cli.hpp"
#include "ldfuse/losses.hpp"
#include "ldfuse/metrics.hpp"
#include "ldfuse/nn/ops.hpp"
#include "ldfuse/rng.hpp"

namespace ldfuse::cli {

namespace {

Tensor random_unit(Rng& rng, Shape shape) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform();
  return t;
}

bool check_schedule_inversion() {
  const auto table = schedule::make_linear_schedule(100, 1e-4, 0.02);
  Rng rng(1);
  const Tensor x0 = random_unit(rng, {4, 8, 8});
  for (int t : {1, 50, 100}) {
    const Tensor noise = rng.normal_tensor(x0.shape());
    const auto noisy = schedule::forward_marginal(table, x0, t, noise);
    if (max_abs_diff(schedule::predict_x0(table, noisy.x, t, noise), x0) >= 1e-5) return false;
  }
  return true;
}

bool check_silog_scale_invariance() {
  Rng rng(2);
  Tensor gt({1, 8, 8}), pred({1, 8, 8});
  for (double& v : gt.values()) v = rng.uniform(1.0, 50.0);
  for (double& v : pred.values()) v = rng.uniform(1.0, 50.0);
  Tensor scaled = pred;
  scaled *= 3.7;
  const imageio::DepthMap g(gt);
  const double a = losses::silog(g, imageio::DepthMap(pred)).value;
  const double b = losses::silog(g, imageio::DepthMap(scaled)).value;
  return std::abs(a - b) < 1e-9 && losses::silog(g, g).value < 1e-12;
}

bool check_identity_modulation() {
  Rng rng(3);
  const Tensor x = rng.normal_tensor({6, 4, 4});
  return guidance::modulate(x, guidance::SemanticParams::identity(6)) == x;
}

bool check_metric_units() {
  Tensor bin({1, 8, 8});
  for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = i % 2 ? 255.0 : 0.0;
  Tensor tex({1, 32, 32});
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      tex(0, y, x) = std::round(127.5 + 100.0 * std::sin(x / 3.0) * std::cos(y / 4.0));
    }
  }
  return metrics::sf(Tensor({1, 4, 4}, 9.0)) == 0.0 &&
         std::abs(metrics::mi(bin, bin, bin) - 2.0) < 1e-12 &&
         metrics::qabf(tex, tex, tex) >= 0.99 && std::abs(metrics::vif(tex, tex, tex) - 1.0) < 1e-6;
}

bool check_text_embedding() {
  const auto e = guidance::encode_text(guidance::parse_caption("visible image dim with two objects"));
  double n = 0.0;
  for (double v : e.vector) n += v * v;
  return std::abs(std::sqrt(n) - 1.0) < 1e-6;
}

bool check_conv_gradient() {
  Rng rng(4);
  const Tensor x = rng.normal_tensor({2, 5, 5});
  Tensor w = rng.normal_tensor({3, 2, 9});
  const Tensor b = rng.normal_tensor({3, 1, 1});
  auto loss = [&](const nn::Var& wv) {
    return nn::sum(nn::square(nn::conv2d(nn::Var::constant(x), wv, nn::Var::constant(b), 1)));
  };
  nn::Var leaf = nn::Var::leaf(w, true);
  nn::backward(loss(leaf));
  const Tensor analytic = leaf.grad();
  double worst = 0.0, scale = 1e-8;
  for (std::size_t i = 0; i < w.size(); ++i) {
    Tensor up = w, down = w;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double num = (loss(nn::Var::constant(up)).value()[0] -
                        loss(nn::Var::constant(down)).value()[0]) / 2e-6;
    scale = std::max(scale, std::abs(num));
    worst = std::max(worst, std::abs(num - analytic[i]));
  }
  return worst / scale < 1e-6;
}

bool check_unguided_head() {
  const models::FusionHead head({8, 6}, 5);
  Rng rng(6);
  const Tensor f = random_unit(rng, {8, 8, 8});
  const nn::Var zeros = guidance::params_to_var(std::vector<double>(6, 0.0));
  const guidance::SemanticMlp mlp(16, 6, 7);
  const auto p = mlp.predict(guidance::encode_text(guidance::parse_caption("infrared image"), 16));
  return head.forward(nn::Var::constant(f), zeros, zeros).value() ==
         models::reconstruct_fused(head, f, p);
}

}  // namespace

bool selftest(std::ostream& out) {
  const std::pair<const char*, std::function<bool()>> checks[] = {
      {"schedule exact inversion", check_schedule_inversion},
      {"silog scale invariance", check_silog_scale_invariance},
      {"identity modulation", check_identity_modulation},
      {"metric unit cases", check_metric_units},
      {"text embedding unit norm", check_text_embedding},
      {"conv2d gradient", check_conv_gradient},
      {"zero-init MLP leaves fusion unguided", check_unguided_head},
  };
  bool all = true;
  for (const auto& [name, check] : checks) {
    const bool ok = check();
    all = all && ok;
    out << (ok ? "PASS " : "FAIL ") << name << "\n";
  }
  return all;
}

}  // namespace ldfuse::cli
