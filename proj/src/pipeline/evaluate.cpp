#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <thread>

#include "ldfuse/errors.hpp"
#include "ldfuse/pipeline.hpp"

namespace ldfuse::pipeline {

FusionRunner::FusionRunner(const RunConfig& config, FusionModels models)
    : config_(config),
      models_(std::move(models)),
      table_(config.make_schedule()),
      encoder_(config.make_text_encoder()) {
  if (!(models_.fused_depth_scale > 0.0) || !std::isfinite(models_.fused_depth_scale)) {
    throw DomainError("fused depth scale must be positive and finite");
  }
  if (!models_.depth || !models_.extractor || !models_.head) {
    throw StateError("fusion needs depth branches, a feature extractor and a fusion head");
  }
  if (config_.ablation.use_language && !models_.mlp) {
    throw StateError("language guidance is enabled but no semantic MLP is loaded");
  }
}

Tensor FusionRunner::features(const Tensor& vis, const Tensor& ir) const {
  const imageio::MultiChannelImage x0 = imageio::concat_modalities(vis, ir);
  if (config_.ablation.use_diffusion) {
    return models::extract_fusion_features(*models_.extractor, table_, x0,
                                           config_.features.timesteps, config_.features.layers,
                                           config_.features.noise_seed);
  }
  return models::extract_autoencoder_features(*models_.extractor, x0, config_.features.timesteps,
                                              config_.features.layers);
}

guidance::Caption FusionRunner::caption(const Tensor& vis, const Tensor& ir) const {
  return guidance::caption_scene(vis, ir, models_.depth->vis.predict(vis),
                                 models_.depth->ir.predict(ir));
}

guidance::SemanticParams FusionRunner::semantic_params(const guidance::Caption& caption) const {
  if (!config_.ablation.use_language) {
    return guidance::SemanticParams::identity(models_.head->modulated_channels());
  }
  return models_.mlp->predict(encoder_(caption));
}

FusionResult FusionRunner::fuse(const Tensor& vis, const Tensor& ir) const {
  FusionResult r;
  const Tensor feats = features(vis, ir);
  r.caption = caption(vis, ir);
  r.params = semantic_params(r.caption);
  r.fused = models::reconstruct_fused(*models_.head, feats, r.params);
  return r;
}

imageio::DepthMap FusionRunner::fused_depth(const Tensor& fused) const {
  const imageio::DepthMap dv = models_.depth->vis.predict(fused);
  const imageio::DepthMap di = models_.depth->ir.predict(imageio::luminance(fused));
  Tensor out(dv.depth.shape());
  const double scale = models_.fused_depth_scale;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * std::sqrt(dv.depth[i] * di.depth[i]);
  return imageio::DepthMap(std::move(out));
}

int resolve_threads(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LDFUSE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return std::max(n, 1);
}

Evaluation evaluate(const FusionRunner& runner, const Dataset& data, int threads) {
  const std::vector<Sample> samples = data.samples();
  Evaluation ev;
  ev.reports.resize(samples.size());
  const auto& depth = *runner.models().depth;

  auto score = [&](std::size_t i) {
    const Sample& s = samples[i];
    const FusionResult r = runner.fuse(s.vis, s.ir);
    metrics::FusionReport rep = metrics::score_fusion(s.id, r.fused, s.ir, s.vis);
    rep.depth_rmse_fused = metrics::depth_rmse(s.gt, runner.fused_depth(r.fused));
    rep.depth_rmse_vis = metrics::depth_rmse(s.gt, depth.vis.predict(s.vis));
    rep.depth_rmse_ir = metrics::depth_rmse(s.gt, depth.ir.predict(s.ir));
    ev.reports[i] = std::move(rep);
  };

  const int workers = std::min<int>(resolve_threads(threads), static_cast<int>(samples.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) score(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < samples.size(); i = next++) score(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  ev.means = metrics::aggregate(ev.reports);
  return ev;
}

int AblationTable::full_beats_diffusion_only() const {
  if (rows.size() != 4) throw StateError("ablation table must have four rows");
  const metrics::MetricMeans& full = rows[3].means;
  const metrics::MetricMeans& diff = rows[1].means;
  return (full.sf > diff.sf) + (full.qabf > diff.qabf) + (full.mi > diff.mi) + (full.sd > diff.sd) +
         (full.vif > diff.vif);
}

std::string AblationTable::csv() const {
  std::vector<std::pair<std::string, metrics::MetricMeans>> table;
  for (const AblationRow& r : rows) table.emplace_back(r.name, r.means);
  return metrics::aggregate_csv(table);
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const AblationRow& r : rows) {
    rows_json.push_back({{"name", r.name},
                         {"use_diffusion", r.flags.use_diffusion},
                         {"use_depth_loss", r.flags.use_depth_loss},
                         {"use_language", r.flags.use_language},
                         {"sf", r.means.sf},
                         {"qabf", r.means.qabf},
                         {"mi", r.means.mi},
                         {"sd", r.means.sd},
                         {"vif", r.means.vif}});
  }
  return {{"rows", rows_json}};
}

AblationTable ablate(const RunConfig& config, const Dataset& train, const Dataset& test) {
  return ablate(config, train, test,
                {train_depth_branches(config, train).nets, train_diffusion(config, train).net,
                 train_autoencoder(config, train).net});
}

AblationTable ablate(const RunConfig& config, const Dataset& train, const Dataset& test,
                     const AblationUpstream& upstream) {
  if (!upstream.depth || !upstream.diffusion || !upstream.autoencoder) {
    throw StateError("ablation needs depth branches, a denoiser and an autoencoder");
  }

  const std::pair<const char*, AblationFlags> variants[] = {
      {"baseline", {false, false, false}},
      {"+diff", {true, false, false}},
      {"+diff+dep", {true, true, false}},
      {"+diff+dep+lan", {true, true, true}},
  };
  AblationTable table;
  for (const auto& [name, flags] : variants) {
    RunConfig c = config;
    c.ablation = flags;
    const auto& extractor = flags.use_diffusion ? upstream.diffusion : upstream.autoencoder;
    const FusionStage fusion = train_fusion(c, train, extractor, upstream.depth);
    const FusionRunner runner(
        c, {upstream.depth, extractor, fusion.head, fusion.mlp, fusion.fused_depth_scale});
    table.rows.push_back({name, flags, evaluate(runner, test, c.eval_threads).means});
  }
  return table;
}

}  // namespace ldfuse::pipeline
