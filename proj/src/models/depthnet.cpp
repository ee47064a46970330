#include <cmath>

#include "ldfuse/errors.hpp"
#include "ldfuse/models.hpp"
#include "ldfuse/nn/ops.hpp"

namespace ldfuse::models {

using nn::Var;

imageio::DepthMap DepthEstimator::predict(const Tensor& image) const {
  return imageio::DepthMap(forward(Var::constant(image)).value());
}

namespace {

// (in, out, kernel area) of each convolution, in forward order.
struct ConvSpec {
  int in, out, k2;
};

std::vector<ConvSpec> depthnet_layout(int cin, int w) {
  return {
      {cin, w, 9},             // enc1a
      {w, w, 9},               // enc1b  (H)
      {w, 2 * w, 9},           // enc2a
      {2 * w, 2 * w, 9},       // enc2b  (H/2)
      {2 * w, 2 * w, 9},       // bottleneck (H/4)
      {4 * w, 2 * w, 9},       // dec2   (H/2)
      {3 * w, w, 9},           // dec1   (H)
      {w, 1, 9},               // head
  };
}

}  // namespace

TinyDepthNet::TinyDepthNet(DepthNetConfig config, std::uint64_t seed) : config_(config) {
  if (config.channels_in != 1 && config.channels_in != 3) {
    throw ParameterError("depth branch input must have 1 or 3 channels");
  }
  if (config.width < 1) throw ParameterError("depth branch width must be positive");
  Rng rng(seed);
  int i = 0;
  for (const ConvSpec& spec : depthnet_layout(config.channels_in, config.width)) {
    const std::string name = "conv" + std::to_string(i++);
    Var w = params_.add(name + ".w", nn::fan_in_init({spec.out, spec.in, spec.k2},
                                                     spec.in * spec.k2, rng));
    Var b = params_.add(name + ".b", Tensor({spec.out, 1, 1}));
    convs_.emplace_back(w, b);
  }
}

void TinyDepthNet::set_metric_scale(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("metric scale must be positive");
  metric_scale_ = s;
}

Var TinyDepthNet::forward(const Var& image) const {
  const Shape s = image.shape();
  if (s.c != config_.channels_in) {
    throw ShapeError("depth branch expects " + std::to_string(config_.channels_in) +
                     " channels, got " + to_string(s));
  }
  if (s.h % 4 != 0 || s.w % 4 != 0) {
    throw ShapeError("depth branch input " + to_string(s) + " not divisible by 4");
  }
  auto conv = [&](int i, const Var& x) {
    return nn::conv2d(x, convs_[i].first, convs_[i].second, 1);
  };
  Var e1 = nn::silu(conv(1, nn::silu(conv(0, image))));
  Var e2 = nn::silu(conv(3, nn::silu(conv(2, nn::avg_pool2(e1)))));
  Var bottom = nn::silu(conv(4, nn::avg_pool2(e2)));
  const Var up2[] = {nn::upsample_nearest(bottom, 2), e2};
  Var d2 = nn::silu(conv(5, nn::concat(up2)));
  const Var up1[] = {nn::upsample_nearest(d2, 2), e1};
  Var d1 = nn::silu(conv(6, nn::concat(up1)));
  Var raw = conv(7, d1);
  return nn::add_scalar(nn::scale(nn::softplus(raw), metric_scale_), kDepthFloor);
}

TinyDepthNet build_tiny_depthnet(int channels_in, std::uint64_t seed, int width) {
  return TinyDepthNet({channels_in, width}, seed);
}

}  // namespace ldfuse::models
