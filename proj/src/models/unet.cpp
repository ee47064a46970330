#include <cmath>

#include "ldfuse/errors.hpp"
#include "ldfuse/models.hpp"
#include "ldfuse/nn/ops.hpp"

namespace ldfuse::models {

using nn::Var;

Tensor Denoiser::predict(const Tensor& x_t, int t) const {
  return forward(Var::constant(x_t), t).value();
}

std::vector<Tensor> Denoiser::features(const Tensor& x_t, int t,
                                       const std::vector<std::string>& layer_ids) const {
  FeatureTaps taps;
  forward(Var::constant(x_t), t, &taps);
  std::vector<Tensor> out;
  for (const std::string& id : layer_ids) {
    auto it = taps.find(id);
    if (it == taps.end()) throw ParameterError("unknown feature layer '" + id + "'");
    const int factor = x_t.height() / it->second.shape().h;
    out.push_back(nn::upsample_nearest(it->second, factor).value());
  }
  return out;
}

Tensor sinusoidal_embedding(int t, int dim) {
  Tensor e({dim, 1, 1});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / static_cast<double>(half));
    e[i] = std::sin(t * freq);
    e[i + half] = std::cos(t * freq);
  }
  return e;
}

TinyUNet::TinyUNet(UNetConfig config, std::uint64_t seed) : config_(config) {
  if (config.base_channels < 8) throw ParameterError("base_channels must be >= 8");
  if (config.depth_levels < 2) throw ParameterError("depth_levels must be >= 2");
  if (config.time_embed_dim < 2 || config.time_embed_dim % 2 != 0) {
    throw ParameterError("time_embed_dim must be even and >= 2");
  }
  Rng rng(seed);
  const int td = config.time_embed_dim;
  temb_w1_ = params_.add("temb.w1", nn::fan_in_init({td, td, 1}, td, rng));
  temb_b1_ = params_.add("temb.b1", Tensor({td, 1, 1}));
  temb_w2_ = params_.add("temb.w2", nn::fan_in_init({td, td, 1}, td, rng));
  temb_b2_ = params_.add("temb.b2", Tensor({td, 1, 1}));

  const int c0 = config.base_channels;
  in_w_ = params_.add("in.w", nn::fan_in_init({c0, config.in_channels, 9}, config.in_channels * 9, rng));
  in_b_ = params_.add("in.b", Tensor({c0, 1, 1}));

  std::vector<int> widths;
  int prev = c0;
  for (int l = 0; l < config.depth_levels; ++l) {
    const int ch = c0 << l;
    widths.push_back(ch);
    enc_.push_back(make_block("enc" + std::to_string(l), prev, ch, rng));
    prev = ch;
  }
  mid_ = make_block("mid", prev, prev, rng);
  dec_.resize(config.depth_levels);
  for (int l = config.depth_levels - 1; l >= 0; --l) {
    dec_[l] = make_block("dec" + std::to_string(l), prev + widths[l], widths[l], rng);
    prev = widths[l];
  }
  Tensor out_w = nn::fan_in_init({config.in_channels, c0, 9}, c0 * 9, rng);
  out_w *= 0.1;
  out_w_ = params_.add("out.w", std::move(out_w));
  out_b_ = params_.add("out.b", Tensor({config.in_channels, 1, 1}));
}

TinyUNet::ResBlock TinyUNet::make_block(const std::string& name, int in, int out, Rng& rng) {
  ResBlock b;
  const int td = config_.time_embed_dim;
  b.w1 = params_.add(name + ".conv1.w", nn::fan_in_init({out, in, 9}, in * 9, rng));
  b.b1 = params_.add(name + ".conv1.b", Tensor({out, 1, 1}));
  b.wt = params_.add(name + ".temb.w", nn::fan_in_init({out, td, 1}, td, rng));
  b.bt = params_.add(name + ".temb.b", Tensor({out, 1, 1}));
  b.w2 = params_.add(name + ".conv2.w", nn::fan_in_init({out, out, 9}, out * 9, rng));
  b.b2 = params_.add(name + ".conv2.b", Tensor({out, 1, 1}));
  if (in != out) {
    b.projected = true;
    b.ws = params_.add(name + ".skip.w", nn::fan_in_init({out, in, 1}, in, rng));
    b.bs = params_.add(name + ".skip.b", Tensor({out, 1, 1}));
  }
  return b;
}

Var TinyUNet::apply_block(const ResBlock& b, const Var& x, const Var& temb) const {
  Var h = nn::conv2d(nn::silu(x), b.w1, b.b1, 1);
  h = nn::add_channel_bias(h, nn::linear(temb, b.wt, b.bt));
  h = nn::conv2d(nn::silu(h), b.w2, b.b2, 1);
  const Var skip = b.projected ? nn::conv2d(x, b.ws, b.bs, 0) : x;
  return nn::add(h, skip);
}

Var TinyUNet::forward(const Var& x_t, int t, FeatureTaps* taps) const {
  const Shape s = x_t.shape();
  const int div = 1 << config_.depth_levels;
  if (s.c != config_.in_channels) {
    throw ShapeError("denoiser expects " + std::to_string(config_.in_channels) +
                     " channels, got " + to_string(s));
  }
  if (s.h % div != 0 || s.w % div != 0) {
    throw ShapeError("denoiser input " + to_string(s) + " not divisible by " +
                     std::to_string(div));
  }
  Var temb = Var::constant(sinusoidal_embedding(t, config_.time_embed_dim));
  temb = nn::linear(nn::silu(nn::linear(temb, temb_w1_, temb_b1_)), temb_w2_, temb_b2_);
  const Var temb_act = nn::silu(temb);

  Var h = nn::conv2d(x_t, in_w_, in_b_, 1);
  std::vector<Var> skips;
  for (const ResBlock& block : enc_) {
    h = apply_block(block, h, temb_act);
    skips.push_back(h);
    h = nn::avg_pool2(h);
  }
  h = apply_block(mid_, h, temb_act);
  for (int l = config_.depth_levels - 1; l >= 0; --l) {
    h = nn::upsample_nearest(h, 2);
    const Var parts[] = {h, skips[l]};
    h = apply_block(dec_[l], nn::concat(parts), temb_act);
    if (taps) (*taps)["dec" + std::to_string(l)] = h;
  }
  return nn::conv2d(nn::silu(h), out_w_, out_b_, 1);
}

std::vector<std::string> TinyUNet::layer_ids() const {
  std::vector<std::string> ids;
  for (int l = config_.depth_levels - 1; l >= 0; --l) ids.push_back("dec" + std::to_string(l));
  return ids;
}

int TinyUNet::layer_channels(const std::string& layer_id) const {
  for (int l = 0; l < config_.depth_levels; ++l) {
    if (layer_id == "dec" + std::to_string(l)) return config_.base_channels << l;
  }
  throw ParameterError("unknown feature layer '" + layer_id + "'");
}

TinyUNet build_tiny_unet(const UNetConfig& config, std::uint64_t seed) {
  return TinyUNet(config, seed);
}

Tensor sample_ancestral(const Denoiser& denoiser, const schedule::ScheduleTable& table,
                        Shape shape, Rng& rng) {
  Tensor x = rng.normal_tensor(shape);
  for (int t = table.steps(); t >= 1; --t) {
    const Tensor eps = denoiser.predict(x, t);
    const Tensor z = t > 1 ? rng.normal_tensor(shape) : Tensor(shape);
    x = schedule::reverse_step(table, x, t, eps, z);
  }
  return x;
}

Tensor extract_fusion_features(const Denoiser& denoiser, const schedule::ScheduleTable& table,
                               const imageio::MultiChannelImage& x0,
                               const std::vector<int>& timesteps,
                               const std::vector<std::string>& layer_ids,
                               std::uint64_t noise_seed) {
  if (timesteps.empty()) throw ParameterError("feature extraction needs at least one timestep");
  if (layer_ids.empty()) throw ParameterError("feature extraction needs at least one layer");
  std::vector<Tensor> parts;
  for (int t : timesteps) {
    Rng rng(mix_seed(noise_seed, static_cast<std::uint64_t>(t)));
    const Tensor noise = rng.normal_tensor(x0.values.shape());
    const auto noisy = schedule::forward_marginal(table, x0.values, t, noise);
    for (Tensor& f : denoiser.features(noisy.x, t, layer_ids)) parts.push_back(std::move(f));
  }
  return concat_channels(parts);
}

Tensor extract_autoencoder_features(const Denoiser& autoencoder,
                                    const imageio::MultiChannelImage& x0,
                                    const std::vector<int>& timesteps,
                                    const std::vector<std::string>& layer_ids) {
  if (timesteps.empty()) throw ParameterError("feature extraction needs at least one timestep");
  std::vector<Tensor> parts;
  for (int t : timesteps) {
    for (Tensor& f : autoencoder.features(x0.values, t, layer_ids)) parts.push_back(std::move(f));
  }
  return concat_channels(parts);
}

}  // namespace ldfuse::models
