#include <filesystem>

#include "ldfuse/cli.hpp"
#include "ldfuse/errors.hpp"
#include "ldfuse/nn/params.hpp"

namespace ldfuse::cli {

namespace fs = std::filesystem;
using pipeline::RunConfig;

namespace {

void require_checkpoint(const fs::path& stem, const char* producer) {
  if (!fs::exists(fs::path(stem).replace_extension(".json"))) {
    throw StateError("missing checkpoint " + stem.string() + "; run `ldfuse " + producer +
                     "` first");
  }
}

double read_scale(const nlohmann::json& meta, const char* key, const fs::path& stem) {
  if (!meta.contains(key) || !meta.at(key).is_number()) {
    throw FormatError("checkpoint " + stem.string() + " has no numeric '" + key + "'");
  }
  return meta.at(key).get<double>();
}

}  // namespace

void save_depth(const pipeline::DepthBranches& nets, const fs::path& dir) {
  fs::create_directories(dir);
  nn::save_checkpoint(nets.vis.params(), dir / "depth_vis",
                      {{"metric_scale", nets.vis.metric_scale()}});
  nn::save_checkpoint(nets.ir.params(), dir / "depth_ir",
                      {{"metric_scale", nets.ir.metric_scale()}});
}

std::shared_ptr<pipeline::DepthBranches> load_depth(const RunConfig& config, const fs::path& dir) {
  require_checkpoint(dir / "depth_vis", "train-depth");
  require_checkpoint(dir / "depth_ir", "train-depth");
  auto nets = std::make_shared<pipeline::DepthBranches>(
      pipeline::DepthBranches{models::build_tiny_depthnet(3, 0, config.depth_width),
                              models::build_tiny_depthnet(1, 0, config.depth_width)});
  const auto vis = nn::load_checkpoint(nets->vis.params(), dir / "depth_vis");
  const auto ir = nn::load_checkpoint(nets->ir.params(), dir / "depth_ir");
  nets->vis.set_metric_scale(read_scale(vis, "metric_scale", dir / "depth_vis"));
  nets->ir.set_metric_scale(read_scale(ir, "metric_scale", dir / "depth_ir"));
  nets->vis.params().set_trainable(false);
  nets->ir.params().set_trainable(false);
  return nets;
}

std::string extractor_name(const RunConfig& config) {
  return config.ablation.use_diffusion ? "denoiser" : "autoencoder";
}

void save_extractor(const models::TinyUNet& net, const RunConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  nn::save_checkpoint(net.params(), dir / extractor_name(config),
                      {{"kind", extractor_name(config)}});
}

std::shared_ptr<models::TinyUNet> load_extractor(const RunConfig& config, const fs::path& dir) {
  const fs::path stem = dir / extractor_name(config);
  require_checkpoint(stem, "train-diffusion");
  auto net = std::make_shared<models::TinyUNet>(models::build_tiny_unet(config.unet, 0));
  nn::load_checkpoint(net->params(), stem);
  net->params().set_trainable(false);
  return net;
}

void save_fusion(const pipeline::FusionStage& stage, const fs::path& dir) {
  fs::create_directories(dir);
  nn::save_checkpoint(stage.head->params(), dir / "fusion_head",
                      {{"fused_depth_scale", stage.fused_depth_scale}});
  nn::save_checkpoint(stage.mlp->params(), dir / "semantic_mlp");
}

pipeline::FusionModels load_fusion_models(const RunConfig& config, const fs::path& dir) {
  pipeline::FusionModels m;
  m.depth = load_depth(config, dir);
  m.extractor = load_extractor(config, dir);
  require_checkpoint(dir / "fusion_head", "train-fusion");
  require_checkpoint(dir / "semantic_mlp", "train-fusion");
  m.head = std::make_shared<models::FusionHead>(
      models::FusionHeadConfig{config.feature_channels(), config.fusion_width}, 0);
  m.mlp = std::make_shared<guidance::SemanticMlp>(config.embed_dim, config.fusion_width, 0);
  const auto meta = nn::load_checkpoint(m.head->params(), dir / "fusion_head");
  nn::load_checkpoint(m.mlp->params(), dir / "semantic_mlp");
  m.fused_depth_scale = read_scale(meta, "fused_depth_scale", dir / "fusion_head");
  m.head->params().set_trainable(false);
  m.mlp->params().set_trainable(false);
  return m;
}

}  // namespace ldfuse::cli
