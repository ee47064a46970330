#include "ldfuse/errors.hpp"
#include "ldfuse/models.hpp"
#include "ldfuse/nn/ops.hpp"

namespace ldfuse::models {

using nn::Var;

FusionHead::FusionHead(FusionHeadConfig config, std::uint64_t seed) : config_(config) {
  if (config.in_channels < 1 || config.width < 1) {
    throw ParameterError("fusion head sizes must be positive");
  }
  Rng rng(seed);
  const int w = config.width;
  w_in_ = params_.add("in.w", nn::fan_in_init({w, config.in_channels, 9}, config.in_channels * 9, rng));
  b_in_ = params_.add("in.b", Tensor({w, 1, 1}));
  w_r1_ = params_.add("res1.w", nn::fan_in_init({w, w, 9}, w * 9, rng));
  b_r1_ = params_.add("res1.b", Tensor({w, 1, 1}));
  w_r2_ = params_.add("res2.w", nn::fan_in_init({w, w, 9}, w * 9, rng));
  b_r2_ = params_.add("res2.b", Tensor({w, 1, 1}));
  w_out_ = params_.add("out.w", nn::fan_in_init({3, w, 9}, w * 9, rng));
  b_out_ = params_.add("out.b", Tensor({3, 1, 1}));
}

Var FusionHead::forward(const Var& features, const Var& sigma_hat, const Var& mu_hat) const {
  if (features.shape().c != config_.in_channels) {
    throw ShapeError("fusion head expects " + std::to_string(config_.in_channels) +
                     " feature channels, got " + to_string(features.shape()));
  }
  Var f = nn::conv2d(features, w_in_, b_in_, 1);
  Var modulated = guidance::modulate(f, sigma_hat, mu_hat);
  Var r = nn::conv2d(nn::silu(modulated), w_r1_, b_r1_, 1);
  r = nn::conv2d(nn::silu(r), w_r2_, b_r2_, 1);
  Var h = nn::add(modulated, r);
  return nn::sigmoid(nn::conv2d(nn::silu(h), w_out_, b_out_, 1));
}

Tensor reconstruct_fused(const FusionHead& head, const Tensor& features,
                         const guidance::SemanticParams& params) {
  return head
      .forward(Var::constant(features), guidance::params_to_var(params.sigma_hat),
               guidance::params_to_var(params.mu_hat))
      .value();
}

}  // namespace ldfuse::models
