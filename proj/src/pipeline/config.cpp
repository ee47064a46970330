#include <fstream>

#include "ldfuse/errors.hpp"
#include "ldfuse/pipeline.hpp"

namespace ldfuse::pipeline {

using nlohmann::json;

json RunConfig::to_json() const {
  return {
      {"seed", seed},
      {"image_size", image_size},
      {"data",
       {{"n_train", data.n_train},
        {"n_test", data.n_test},
        {"n_objects", data.n_objects},
        {"p_ir_only", data.p_ir_only},
        {"p_vis_only", data.p_vis_only}}},
      {"schedule",
       {{"steps", schedule.steps},
        {"beta_start", schedule.beta_start},
        {"beta_end", schedule.beta_end}}},
      {"unet",
       {{"base_channels", unet.base_channels},
        {"depth_levels", unet.depth_levels},
        {"time_embed_dim", unet.time_embed_dim}}},
      {"depth_net", {{"width", depth_width}}},
      {"fusion_head", {{"width", fusion_width}}},
      {"guidance", {{"embed_dim", embed_dim}, {"text_encoder", text_encoder}}},
      {"optim",
       {{"lr", optim.lr},
        {"batch_size", optim.batch_size},
        {"grad_clip", optim.grad_clip},
        {"final_lr_ratio", optim.final_lr_ratio}}},
      {"steps",
       {{"depth", steps.depth},
        {"diffusion", steps.diffusion},
        {"autoencoder", steps.autoencoder},
        {"fusion", steps.fusion},
        {"log_every", steps.log_every}}},
      {"lambda_depth", lambda_depth},
      {"features",
       {{"timesteps", features.timesteps},
        {"layers", features.layers},
        {"noise_seed", features.noise_seed}}},
      {"ablation",
       {{"use_diffusion", ablation.use_diffusion},
        {"use_depth_loss", ablation.use_depth_loss},
        {"use_language", ablation.use_language}}},
      {"eval", {{"threads", eval_threads}}},
  };
}

namespace {

// Overlay `src` onto `dst`, refusing keys that `dst` does not have.
void merge_known(json& dst, const json& src, const std::string& prefix) {
  if (!src.is_object()) throw ConfigError("expected an object at '" + prefix + "'");
  for (const auto& [key, value] : src.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!dst.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (dst[key].is_object()) {
      merge_known(dst[key], value, path);
    } else {
      dst[key] = value;
    }
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  json merged = RunConfig{}.to_json();
  merge_known(merged, j, "");
  RunConfig c;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.image_size = merged.at("image_size").get<int>();
    const json& d = merged.at("data");
    c.data = {d.at("n_train").get<int>(), d.at("n_test").get<int>(), d.at("n_objects").get<int>(),
              d.at("p_ir_only").get<double>(), d.at("p_vis_only").get<double>()};
    const json& s = merged.at("schedule");
    c.schedule = {s.at("steps").get<int>(), s.at("beta_start").get<double>(),
                  s.at("beta_end").get<double>()};
    const json& u = merged.at("unet");
    c.unet.base_channels = u.at("base_channels").get<int>();
    c.unet.depth_levels = u.at("depth_levels").get<int>();
    c.unet.time_embed_dim = u.at("time_embed_dim").get<int>();
    c.depth_width = merged.at("depth_net").at("width").get<int>();
    c.fusion_width = merged.at("fusion_head").at("width").get<int>();
    c.embed_dim = merged.at("guidance").at("embed_dim").get<int>();
    c.text_encoder = merged.at("guidance").at("text_encoder").get<std::string>();
    const json& o = merged.at("optim");
    c.optim = {o.at("lr").get<double>(), o.at("batch_size").get<int>(),
               o.at("grad_clip").get<double>(), o.at("final_lr_ratio").get<double>()};
    const json& st = merged.at("steps");
    c.steps = {st.at("depth").get<int>(), st.at("diffusion").get<int>(),
               st.at("autoencoder").get<int>(), st.at("fusion").get<int>(),
               st.at("log_every").get<int>()};
    c.lambda_depth = merged.at("lambda_depth").get<double>();
    const json& f = merged.at("features");
    c.features = {f.at("timesteps").get<std::vector<int>>(),
                  f.at("layers").get<std::vector<std::string>>(),
                  f.at("noise_seed").get<std::uint64_t>()};
    const json& a = merged.at("ablation");
    c.ablation = {a.at("use_diffusion").get<bool>(), a.at("use_depth_loss").get<bool>(),
                  a.at("use_language").get<bool>()};
    c.eval_threads = merged.at("eval").at("threads").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(image_size >= 17, "image_size must be at least 17 for the fusion metrics");
  require(unet.depth_levels >= 1 && unet.depth_levels <= 4, "unet.depth_levels must be in [1, 4]");
  require(image_size % 4 == 0 && image_size % (1 << unet.depth_levels) == 0,
          "image_size must be divisible by 4 and by 2^unet.depth_levels");
  require(data.n_train >= 0 && data.n_test >= 0, "dataset sizes must be non-negative");
  require(data.n_objects >= 0, "data.n_objects must be non-negative");
  require(data.p_ir_only >= 0.0 && data.p_vis_only >= 0.0 &&
              data.p_ir_only + data.p_vis_only <= 1.0,
          "data.p_ir_only and data.p_vis_only must be non-negative with sum <= 1");
  require(schedule.steps >= 2, "schedule.steps must be at least 2");
  require(schedule.beta_start > 0.0 && schedule.beta_start <= schedule.beta_end &&
              schedule.beta_end < 1.0,
          "schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  require(unet.base_channels >= 1 && unet.time_embed_dim >= 2 && unet.time_embed_dim % 2 == 0,
          "unet sizes must be positive (time_embed_dim even)");
  require(depth_width >= 1 && fusion_width >= 1 && embed_dim >= 1,
          "network widths must be positive");
  require(optim.lr > 0.0 && optim.batch_size >= 1 && optim.grad_clip >= 0.0,
          "optim needs lr > 0, batch_size >= 1, grad_clip >= 0");
  require(optim.final_lr_ratio > 0.0 && optim.final_lr_ratio <= 1.0,
          "optim.final_lr_ratio must be in (0, 1]");
  require(steps.depth >= 0 && steps.diffusion >= 0 && steps.autoencoder >= 0 &&
              steps.fusion >= 0 && steps.log_every >= 1,
          "step counts must be non-negative and log_every positive");
  require(lambda_depth >= 0.0, "lambda_depth must be non-negative");
  require(!features.timesteps.empty() && !features.layers.empty(),
          "features need at least one timestep and one layer");
  for (int t : features.timesteps) {
    require(t >= 1 && t <= schedule.steps, "feature timestep outside [1, schedule.steps]");
  }
  for (const std::string& layer : features.layers) {
    bool known = false;
    for (int l = 0; l < unet.depth_levels; ++l) known |= layer == "dec" + std::to_string(l);
    require(known, "unknown feature layer '" + layer + "'");
  }
  require(eval_threads >= 0, "eval.threads must be non-negative");
}

schedule::ScheduleTable RunConfig::make_schedule() const {
  return schedule::make_linear_schedule(schedule.steps, schedule.beta_start, schedule.beta_end);
}

int RunConfig::feature_channels() const {
  int per_t = 0;
  for (const std::string& layer : features.layers) {
    per_t += unet.base_channels << std::stoi(layer.substr(3));
  }
  return per_t * static_cast<int>(features.timesteps.size());
}

guidance::TextEncoder RunConfig::make_text_encoder() const {
  if (text_encoder.empty()) return guidance::stub_encoder(embed_dim);
  return guidance::subprocess_encoder(text_encoder, embed_dim);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value: '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("cannot override the section '" + key + "'");
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = std::move(value);
}

std::uint64_t config_hash(const RunConfig& config) {
  const std::string text = config.to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ldfuse::pipeline
