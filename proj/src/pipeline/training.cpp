#include <cmath>
#include <numbers>

#include "ldfuse/errors.hpp"
#include "ldfuse/nn/ops.hpp"
#include "ldfuse/pipeline.hpp"
#include "ldfuse/rng.hpp"

namespace ldfuse::pipeline {

using nn::Var;

namespace {

// Stage tags folded into the run seed so stages draw independent streams.
enum StageTag : std::uint64_t {
  kTagDepthVis = 11,
  kTagDepthIr = 12,
  kTagDepthLoop = 13,
  kTagUnet = 21,
  kTagDiffusionLoop = 22,
  kTagAutoencoder = 31,
  kTagAutoencoderLoop = 32,
  kTagHead = 41,
  kTagMlp = 42,
  kTagFusionLoop = 43,
};

// Averages losses over a logging window and emits one record per window.
class WindowLogger {
 public:
  WindowLogger(TrainLog& log, int every) : log_(log), every_(every) {}

  void add(const losses::LossValue& loss, int t = 0) {
    total_ += loss.value;
    for (const auto& [name, v] : loss.components) components_[name] += v;
    if (t > 0) timesteps_.push_back(t);
    ++count_;
  }

  // Call once per optimizer step; flushes on window boundaries and at `last`.
  void end_step(long step, long last) {
    if (step % every_ != 0 && step != last) return;
    LogRecord r;
    r.step = step;
    r.total = total_ / count_;
    for (auto& [name, v] : components_) r.components[name] = v / count_;
    r.timesteps = std::move(timesteps_);
    log_.append(std::move(r));
    total_ = 0.0;
    components_.clear();
    timesteps_.clear();
    count_ = 0;
  }

 private:
  TrainLog& log_;
  int every_;
  double total_ = 0.0;
  std::map<std::string, double> components_;
  std::vector<int> timesteps_;
  int count_ = 0;
};

nn::AdamOptions adam_options(const RunConfig& config) {
  nn::AdamOptions o;
  o.lr = config.optim.lr;
  o.grad_clip = config.optim.grad_clip;
  return o;
}

// Learning rate for `step` of `last` under the configured cosine decay.
double scheduled_lr(const RunConfig& config, long step, long last) {
  const double r = config.optim.final_lr_ratio;
  const double progress = last > 1 ? static_cast<double>(step - 1) / static_cast<double>(last - 1) : 1.0;
  return config.optim.lr * (r + (1.0 - r) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

void require_data(const Dataset& data, const char* stage) {
  if (data.size() == 0) throw ParameterError(std::string(stage) + " needs a non-empty dataset");
}

// Scale fitted as the geometric-mean ratio of ground truth to the network's
// unit-scale output over all valid training pixels.
void fit_metric_scale(models::TinyDepthNet& net, const std::vector<Sample>& samples, bool infrared) {
  net.set_metric_scale(1.0);
  double sum = 0.0;
  std::size_t n = 0;
  for (const Sample& s : samples) {
    const imageio::DepthMap pred = net.predict(infrared ? s.ir : s.vis);
    for (std::size_t i = 0; i < s.gt.depth.size(); ++i) {
      if (!s.gt.valid[i]) continue;
      sum += std::log(s.gt.depth[i]) - std::log(pred.depth[i] - models::kDepthFloor);
      ++n;
    }
  }
  if (n == 0) throw DomainError("no valid depth pixels to fit the metric scale");
  net.set_metric_scale(std::exp(sum / static_cast<double>(n)));
}

}  // namespace

DepthStage train_depth_branches(const RunConfig& config, const Dataset& data) {
  require_data(data, "train_depth_branches");
  const std::vector<Sample> samples = data.samples();
  auto nets = std::make_shared<DepthBranches>(DepthBranches{
      models::build_tiny_depthnet(3, mix_seed(config.seed, kTagDepthVis), config.depth_width),
      models::build_tiny_depthnet(1, mix_seed(config.seed, kTagDepthIr), config.depth_width)});
  nn::Adam opt_vis(nets->vis.params(), adam_options(config));
  nn::Adam opt_ir(nets->ir.params(), adam_options(config));
  Rng rng(mix_seed(config.seed, kTagDepthLoop));

  DepthStage stage;
  stage.log.stage = "depth";
  WindowLogger logger(stage.log, config.steps.log_every);
  const int batch = config.optim.batch_size;
  const long last = config.steps.depth;
  for (long step = 1; step <= last; ++step) {
    for (int b = 0; b < batch; ++b) {
      const Sample& s = samples[rng.uniform_int(0, static_cast<int>(samples.size()) - 1)];
      const Var lv = losses::silog(s.gt, nets->vis.forward(Var::constant(s.vis)));
      const Var li = losses::silog(s.gt, nets->ir.forward(Var::constant(s.ir)));
      const Var total = nn::add(lv, li);
      nn::backward(nn::scale(total, 1.0 / batch));
      logger.add({total.value()[0], {{"silog_vis", lv.value()[0]}, {"silog_ir", li.value()[0]}}, {}});
    }
    const double lr = scheduled_lr(config, step, last);
    opt_vis.set_lr(lr);
    opt_ir.set_lr(lr);
    opt_vis.step();
    opt_ir.step();
    logger.end_step(step, last);
  }
  nets->vis.params().set_trainable(false);
  nets->ir.params().set_trainable(false);
  fit_metric_scale(nets->vis, samples, false);
  fit_metric_scale(nets->ir, samples, true);
  stage.nets = std::move(nets);
  return stage;
}

DenoiserStage train_diffusion(const RunConfig& config, const Dataset& data) {
  require_data(data, "train_diffusion");
  const std::vector<Sample> samples = data.samples();
  const schedule::ScheduleTable table = config.make_schedule();
  auto net = std::make_shared<models::TinyUNet>(
      models::build_tiny_unet(config.unet, mix_seed(config.seed, kTagUnet)));
  nn::Adam opt(net->params(), adam_options(config));
  Rng rng(mix_seed(config.seed, kTagDiffusionLoop));

  DenoiserStage stage;
  stage.log.stage = "diffusion";
  WindowLogger logger(stage.log, config.steps.log_every);
  const int batch = config.optim.batch_size;
  const long last = config.steps.diffusion;
  for (long step = 1; step <= last; ++step) {
    for (int b = 0; b < batch; ++b) {
      const Sample& s = samples[rng.uniform_int(0, static_cast<int>(samples.size()) - 1)];
      const int t = rng.uniform_int(1, table.steps());
      const Tensor noise = rng.normal_tensor(s.x0.values.shape());
      const auto noisy = schedule::forward_marginal(table, s.x0.values, t, noise);
      const Var loss = losses::l_diff(net->forward(Var::constant(noisy.x), t), noise);
      nn::backward(nn::scale(loss, 1.0 / batch));
      logger.add({loss.value()[0], {{"diff", loss.value()[0]}}, {}}, t);
    }
    opt.set_lr(scheduled_lr(config, step, last));
    opt.step();
    logger.end_step(step, last);
  }
  net->params().set_trainable(false);
  stage.net = std::move(net);
  return stage;
}

DenoiserStage train_autoencoder(const RunConfig& config, const Dataset& data) {
  require_data(data, "train_autoencoder");
  const std::vector<Sample> samples = data.samples();
  auto net = std::make_shared<models::TinyUNet>(
      models::build_tiny_unet(config.unet, mix_seed(config.seed, kTagAutoencoder)));
  nn::Adam opt(net->params(), adam_options(config));
  Rng rng(mix_seed(config.seed, kTagAutoencoderLoop));

  DenoiserStage stage;
  stage.log.stage = "autoencoder";
  WindowLogger logger(stage.log, config.steps.log_every);
  const int batch = config.optim.batch_size;
  const long last = config.steps.autoencoder;
  // The timestep input is kept so that the feature layout matches the
  // diffusion extractor; each feature timestep sees clean input.
  const std::vector<int>& ts = config.features.timesteps;
  for (long step = 1; step <= last; ++step) {
    for (int b = 0; b < batch; ++b) {
      const Sample& s = samples[rng.uniform_int(0, static_cast<int>(samples.size()) - 1)];
      const int t = ts[rng.uniform_int(0, static_cast<int>(ts.size()) - 1)];
      const Var loss = losses::l_diff(net->forward(Var::constant(s.x0.values), t), s.x0.values);
      nn::backward(nn::scale(loss, 1.0 / batch));
      logger.add({loss.value()[0], {{"recon", loss.value()[0]}}, {}});
    }
    opt.set_lr(scheduled_lr(config, step, last));
    opt.step();
    logger.end_step(step, last);
  }
  net->params().set_trainable(false);
  stage.net = std::move(net);
  return stage;
}

double mean_diffusion_loss(const models::Denoiser& net, const schedule::ScheduleTable& table,
                           const imageio::MultiChannelImage& x0, std::uint64_t noise_seed) {
  double sum = 0.0;
  for (int t = 1; t <= table.steps(); ++t) {
    Rng rng(mix_seed(noise_seed, static_cast<std::uint64_t>(t)));
    const Tensor noise = rng.normal_tensor(x0.values.shape());
    const auto noisy = schedule::forward_marginal(table, x0.values, t, noise);
    sum += losses::l_diff(net.predict(noisy.x, t), noise).value;
  }
  return sum / table.steps();
}

FusionStage train_fusion(const RunConfig& config, const Dataset& data,
                         std::shared_ptr<const models::TinyUNet> extractor,
                         std::shared_ptr<const DepthBranches> depth) {
  if (!extractor) throw StateError("train_fusion needs a trained feature extractor");
  if (!depth) throw StateError("train_fusion needs trained depth branches");
  require_data(data, "train_fusion");
  const std::vector<Sample> samples = data.samples();

  auto head = std::make_shared<models::FusionHead>(
      models::FusionHeadConfig{config.feature_channels(), config.fusion_width},
      mix_seed(config.seed, kTagHead));
  auto mlp = std::make_shared<guidance::SemanticMlp>(config.embed_dim, config.fusion_width,
                                                     mix_seed(config.seed, kTagMlp));

  // Upstream models are frozen, so features and text embeddings are fixed
  // per scene and computed once.
  FusionModels frozen;
  frozen.depth = std::const_pointer_cast<DepthBranches>(depth);
  frozen.extractor = std::const_pointer_cast<models::TinyUNet>(extractor);
  frozen.head = head;
  frozen.mlp = mlp;
  const FusionRunner runner(config, frozen);
  const guidance::TextEncoder encoder = config.make_text_encoder();
  std::vector<Tensor> features;
  std::vector<Var> embeddings;
  for (const Sample& s : samples) {
    features.push_back(runner.features(s.vis, s.ir));
    if (config.ablation.use_language) {
      embeddings.push_back(
          Var::constant(Tensor::vector(encoder(runner.caption(s.vis, s.ir)).vector)));
    }
  }

  const double lambda = config.ablation.use_depth_loss ? config.lambda_depth : 0.0;
  const Var zeros = guidance::params_to_var(std::vector<double>(config.fusion_width, 0.0));
  nn::Adam opt_head(head->params(), adam_options(config));
  std::optional<nn::Adam> opt_mlp;
  if (config.ablation.use_language) {
    opt_mlp.emplace(mlp->params(), adam_options(config));
  } else {
    mlp->params().set_trainable(false);
  }
  Rng rng(mix_seed(config.seed, kTagFusionLoop));

  FusionStage stage;
  stage.log.stage = "fusion";
  WindowLogger logger(stage.log, config.steps.log_every);
  const int batch = config.optim.batch_size;
  const long last = config.steps.fusion;
  for (long step = 1; step <= last; ++step) {
    for (int b = 0; b < batch; ++b) {
      const int i = rng.uniform_int(0, static_cast<int>(samples.size()) - 1);
      const Sample& s = samples[i];
      Var sigma = zeros, mu = zeros;
      if (config.ablation.use_language) {
        const auto out = mlp->forward(embeddings[i]);
        sigma = out.sigma_hat;
        mu = out.mu_hat;
      }
      const Var fused = head->forward(Var::constant(features[i]), sigma, mu);
      const losses::LossTerm term =
          losses::total_fusion_loss(fused, s.ir, s.vis, s.gt, depth->vis, depth->ir, lambda);
      nn::backward(nn::scale(term.total, 1.0 / batch));
      logger.add(term.evaluate());
    }
    const double lr = scheduled_lr(config, step, last);
    opt_head.set_lr(lr);
    opt_head.step();
    if (opt_mlp) {
      opt_mlp->set_lr(lr);
      opt_mlp->step();
    }
    logger.end_step(step, last);
  }
  head->params().set_trainable(false);
  mlp->params().set_trainable(false);

  // The depth-driven loss is scale-invariant, so depth read off fused images
  // carries no metric scale of its own; calibrate it like the branches.
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const guidance::SemanticParams params = runner.semantic_params(runner.caption(s.vis, s.ir));
    const Tensor fused = models::reconstruct_fused(*head, features[i], params);
    const imageio::DepthMap pred = runner.fused_depth(fused);
    for (std::size_t p = 0; p < s.gt.depth.size(); ++p) {
      if (!s.gt.valid[p]) continue;
      sum += std::log(s.gt.depth[p]) - std::log(pred.depth[p]);
      ++n;
    }
  }
  if (n == 0) throw DomainError("no valid depth pixels to fit the fused depth scale");
  stage.fused_depth_scale = std::exp(sum / static_cast<double>(n));
  stage.head = std::move(head);
  stage.mlp = std::move(mlp);
  return stage;
}

}  // namespace ldfuse::pipeline
