#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ldfuse/guidance.hpp"
#include "ldfuse/imageio.hpp"
#include "ldfuse/nn/params.hpp"
#include "ldfuse/rng.hpp"
#include "ldfuse/schedule.hpp"

namespace ldfuse::models {

// Intermediate activations recorded during a forward pass, by layer id.
using FeatureTaps = std::map<std::string, nn::Var>;

// Noise-prediction network: maps (x_t, t) to an estimate of the added noise
// with the same shape as x_t.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual nn::Var forward(const nn::Var& x_t, int t, FeatureTaps* taps = nullptr) const = 0;
  virtual std::vector<std::string> layer_ids() const = 0;

  Tensor predict(const Tensor& x_t, int t) const;
  // Requested activations, each nearest-upsampled to the input's H x W.
  std::vector<Tensor> features(const Tensor& x_t, int t,
                               const std::vector<std::string>& layer_ids) const;
};

struct UNetConfig {
  int base_channels = 16;
  int depth_levels = 2;
  int time_embed_dim = 32;
  int in_channels = 4;
};

// Small U-Net without normalization layers: residual blocks with a timestep
// bias, mean-pool downsampling and nearest upsampling. Channel width doubles
// per level. Decoder block outputs are exposed as "dec<level>", level 0
// being full resolution.
class TinyUNet final : public Denoiser {
 public:
  TinyUNet(UNetConfig config, std::uint64_t seed);
  TinyUNet(TinyUNet&&) = default;
  TinyUNet& operator=(TinyUNet&&) = default;
  TinyUNet(const TinyUNet&) = delete;
  TinyUNet& operator=(const TinyUNet&) = delete;

  nn::Var forward(const nn::Var& x_t, int t, FeatureTaps* taps = nullptr) const override;
  std::vector<std::string> layer_ids() const override;
  int layer_channels(const std::string& layer_id) const;

  const UNetConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

 private:
  struct ResBlock {
    nn::Var w1, b1, wt, bt, w2, b2, ws, bs;
    bool projected = false;
  };
  ResBlock make_block(const std::string& name, int in, int out, Rng& rng);
  nn::Var apply_block(const ResBlock& block, const nn::Var& x, const nn::Var& temb) const;

  UNetConfig config_;
  nn::ParamSet params_;
  nn::Var temb_w1_, temb_b1_, temb_w2_, temb_b2_;
  nn::Var in_w_, in_b_, out_w_, out_b_;
  std::vector<ResBlock> enc_, dec_;
  ResBlock mid_;
};

TinyUNet build_tiny_unet(const UNetConfig& config, std::uint64_t seed);

Tensor sinusoidal_embedding(int t, int dim);

// Ancestral sampling from pure noise through all T reverse steps.
Tensor sample_ancestral(const Denoiser& denoiser, const schedule::ScheduleTable& table,
                        Shape shape, Rng& rng);

// For each timestep (in list order): x_t = forward_marginal(x0, t, noise) with
// noise seeded by (noise_seed, t); the requested decoder activations are
// upsampled to H x W and concatenated. Channel order is timestep-major, then
// layer order.
Tensor extract_fusion_features(const Denoiser& denoiser, const schedule::ScheduleTable& table,
                               const imageio::MultiChannelImage& x0,
                               const std::vector<int>& timesteps,
                               const std::vector<std::string>& layer_ids,
                               std::uint64_t noise_seed);

// Same layout for a network trained as a plain autoencoder: the clean input
// is fed at each listed timestep, with no noise.
Tensor extract_autoencoder_features(const Denoiser& autoencoder,
                                    const imageio::MultiChannelImage& x0,
                                    const std::vector<int>& timesteps,
                                    const std::vector<std::string>& layer_ids);

// ---------------------------------------------------------------------------

inline constexpr double kDepthFloor = 1e-3;

// Monocular depth estimator: image (C, H, W) -> strictly positive depth
// (1, H, W) in meters.
class DepthEstimator {
 public:
  virtual ~DepthEstimator() = default;
  virtual int channels_in() const = 0;
  virtual nn::Var forward(const nn::Var& image) const = 0;

  imageio::DepthMap predict(const Tensor& image) const;
};

struct DepthNetConfig {
  int channels_in = 3;
  int width = 16;
};

// Three-scale encoder-decoder with skip connections. Output is
// metric_scale * softplus(raw) + 1e-3; H and W must be divisible by 4.
class TinyDepthNet final : public DepthEstimator {
 public:
  TinyDepthNet(DepthNetConfig config, std::uint64_t seed);
  TinyDepthNet(TinyDepthNet&&) = default;
  TinyDepthNet& operator=(TinyDepthNet&&) = default;
  TinyDepthNet(const TinyDepthNet&) = delete;
  TinyDepthNet& operator=(const TinyDepthNet&) = delete;

  int channels_in() const override { return config_.channels_in; }
  nn::Var forward(const nn::Var& image) const override;

  // Multiplier mapping the scale-free output to meters. Fit after training;
  // it is not a trainable parameter.
  double metric_scale() const { return metric_scale_; }
  void set_metric_scale(double s);

  const DepthNetConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

 private:
  DepthNetConfig config_;
  nn::ParamSet params_;
  double metric_scale_ = 1.0;
  std::vector<std::pair<nn::Var, nn::Var>> convs_;
};

TinyDepthNet build_tiny_depthnet(int channels_in, std::uint64_t seed, int width = 16);

// ---------------------------------------------------------------------------

struct FusionHeadConfig {
  int in_channels = 96;
  int width = 32;
};

// conv3x3 -> modulation -> two residual conv3x3 -> conv3x3 -> sigmoid (RGB).
// The modulation acts on the first block's output (width channels).
class FusionHead {
 public:
  FusionHead(FusionHeadConfig config, std::uint64_t seed);
  FusionHead(FusionHead&&) = default;
  FusionHead& operator=(FusionHead&&) = default;
  FusionHead(const FusionHead&) = delete;
  FusionHead& operator=(const FusionHead&) = delete;

  int modulated_channels() const { return config_.width; }
  nn::Var forward(const nn::Var& features, const nn::Var& sigma_hat, const nn::Var& mu_hat) const;

  const FusionHeadConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

 private:
  FusionHeadConfig config_;
  nn::ParamSet params_;
  nn::Var w_in_, b_in_, w_r1_, b_r1_, w_r2_, b_r2_, w_out_, b_out_;
};

Tensor reconstruct_fused(const FusionHead& head, const Tensor& features,
                         const guidance::SemanticParams& params);

}  // namespace ldfuse::models
