#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldfuse/guidance.hpp"
#include "ldfuse/imageio.hpp"
#include "ldfuse/losses.hpp"
#include "ldfuse/metrics.hpp"
#include "ldfuse/models.hpp"
#include "ldfuse/schedule.hpp"

namespace ldfuse::pipeline {

// ---------------------------------------------------------------------------
// Run configuration.

struct DataConfig {
  int n_train = 64;
  int n_test = 32;
  int n_objects = 3;
  double p_ir_only = 0.3;
  double p_vis_only = 0.3;
};

struct ScheduleConfig {
  int steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct OptimConfig {
  double lr = 3e-3;
  int batch_size = 4;
  double grad_clip = 1.0;
  // Cosine decay from lr at the first step to lr * final_lr_ratio at the
  // last; 1 keeps the rate constant.
  double final_lr_ratio = 0.1;
};

struct StageSteps {
  int depth = 500;
  int diffusion = 2000;
  int autoencoder = 1000;
  int fusion = 1000;
  int log_every = 10;
};

struct FeatureConfig {
  std::vector<int> timesteps{5, 50};
  std::vector<std::string> layers{"dec1", "dec0"};
  std::uint64_t noise_seed = 7;
};

struct AblationFlags {
  bool use_diffusion = true;
  bool use_depth_loss = true;
  bool use_language = true;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int image_size = 32;
  DataConfig data;
  ScheduleConfig schedule;
  models::UNetConfig unet;
  int depth_width = 16;
  int fusion_width = 32;
  int embed_dim = guidance::kStubEmbeddingDim;
  // Shell command for an external text encoder; empty selects the built-in
  // hashing encoder.
  std::string text_encoder;
  OptimConfig optim;
  StageSteps steps;
  double lambda_depth = 1.0;
  FeatureConfig features;
  AblationFlags ablation;
  int eval_threads = 0;  // 0: LDFUSE_THREADS or hardware concurrency

  nlohmann::json to_json() const;
  // Strict: every key must be known. Missing keys keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
  // Throws ConfigError on inconsistent sizes or out-of-range values.
  void validate() const;
  schedule::ScheduleTable make_schedule() const;
  int feature_channels() const;  // channels of the fusion feature stack
  guidance::TextEncoder make_text_encoder() const;
};

RunConfig load_config(const std::filesystem::path& path);
// `dotted.key=value`; value is parsed as JSON, falling back to a plain
// string. The key must already exist in `config`.
void apply_override(nlohmann::json& config, const std::string& assignment);
// FNV-1a of the canonical JSON dump.
std::uint64_t config_hash(const RunConfig& config);

// ---------------------------------------------------------------------------
// Data.

struct Sample {
  std::string id;
  Tensor vis;  // 3 x H x W in [0, 1]
  Tensor ir;   // 1 x H x W in [0, 1]
  imageio::DepthMap gt;
  imageio::MultiChannelImage x0;
};

Sample to_sample(const imageio::ScenePair& scene, std::string id);

struct Dataset {
  std::vector<imageio::ScenePair> scenes;
  std::vector<std::string> ids;
  std::size_t size() const { return scenes.size(); }
  std::vector<Sample> samples() const;
};

enum class Split { kTrain, kTest };
// Scene i of a split is generated from mix_seed(seed, split tag, i).
Dataset make_dataset(const RunConfig& config, Split split);
// `<dir>/index.json` plus the scene files.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Training logs.

struct LogRecord {
  long step = 0;
  double total = 0.0;
  std::map<std::string, double> components;
  std::vector<int> timesteps;  // diffusion stages: t drawn for each batch item
  nlohmann::json to_json() const;
};

struct TrainLog {
  std::string stage;
  std::vector<LogRecord> records;
  std::map<std::string, std::string> checkpoints;
  // Steps must be strictly increasing.
  void append(LogRecord record);
  // One JSON object per record, then {"checkpoints": {...}} if any are set.
  void write_jsonl(const std::filesystem::path& path) const;
  static TrainLog read_jsonl(const std::filesystem::path& path);
  // Mean of `total` over the first / last `window` records.
  double head_mean(std::size_t window) const;
  double tail_mean(std::size_t window) const;
};

// ---------------------------------------------------------------------------
// Stages. Each returns freshly trained, frozen models.

struct DepthBranches {
  models::TinyDepthNet vis;
  models::TinyDepthNet ir;
};

struct DepthStage {
  std::shared_ptr<DepthBranches> nets;
  TrainLog log;
};
DepthStage train_depth_branches(const RunConfig& config, const Dataset& data);

struct DenoiserStage {
  std::shared_ptr<models::TinyUNet> net;
  TrainLog log;
};
DenoiserStage train_diffusion(const RunConfig& config, const Dataset& data);
// The no-diffusion baseline extractor: the same network trained to
// reproduce its clean input.
DenoiserStage train_autoencoder(const RunConfig& config, const Dataset& data);

// Mean noise-regression error over every t in 1..T for one image, with
// noise drawn from `noise_seed`.
double mean_diffusion_loss(const models::Denoiser& net, const schedule::ScheduleTable& table,
                           const imageio::MultiChannelImage& x0, std::uint64_t noise_seed);

// Everything needed to fuse a pair. Extractor is the diffusion U-Net or,
// when use_diffusion is off, the autoencoder.
struct FusionModels {
  std::shared_ptr<DepthBranches> depth;
  std::shared_ptr<models::TinyUNet> extractor;
  std::shared_ptr<models::FusionHead> head;
  std::shared_ptr<guidance::SemanticMlp> mlp;
  // Metric calibration of depth estimated from fused images.
  double fused_depth_scale = 1.0;
};

struct FusionStage {
  std::shared_ptr<models::FusionHead> head;
  std::shared_ptr<guidance::SemanticMlp> mlp;
  double fused_depth_scale = 1.0;
  TrainLog log;
};
// Trains the fusion head and semantic MLP with the extractor and depth
// branches frozen, then fits fused_depth_scale on the training scenes.
// Missing upstream models raise StateError.
FusionStage train_fusion(const RunConfig& config, const Dataset& data,
                         std::shared_ptr<const models::TinyUNet> extractor,
                         std::shared_ptr<const DepthBranches> depth);

struct FusionResult {
  Tensor fused;  // 3 x H x W in [0, 1]
  guidance::Caption caption;
  guidance::SemanticParams params;
};

class FusionRunner {
 public:
  FusionRunner(const RunConfig& config, FusionModels models);
  FusionResult fuse(const Tensor& vis, const Tensor& ir) const;
  // Depth of a fused image: geometric mean of the visible branch on the RGB
  // result and the infrared branch on its luminance, times
  // fused_depth_scale.
  imageio::DepthMap fused_depth(const Tensor& fused) const;
  Tensor features(const Tensor& vis, const Tensor& ir) const;
  guidance::Caption caption(const Tensor& vis, const Tensor& ir) const;
  guidance::SemanticParams semantic_params(const guidance::Caption& caption) const;
  const FusionModels& models() const { return models_; }

 private:
  RunConfig config_;
  FusionModels models_;
  schedule::ScheduleTable table_;
  guidance::TextEncoder encoder_;
};

// ---------------------------------------------------------------------------
// Evaluation and ablation.

struct Evaluation {
  std::vector<metrics::FusionReport> reports;
  metrics::MetricMeans means;
};
// Reports are in dataset order regardless of the worker count.
Evaluation evaluate(const FusionRunner& runner, const Dataset& data, int threads = 0);
int resolve_threads(int requested);

struct AblationRow {
  std::string name;
  AblationFlags flags;
  metrics::MetricMeans means;
};
struct AblationTable {
  std::vector<AblationRow> rows;  // baseline, +diff, +diff+dep, +diff+dep+lan
  // Metrics (of five) on which the full model beats the diffusion-only row.
  int full_beats_diffusion_only() const;
  std::string csv() const;
  nlohmann::json to_json() const;
};
AblationTable ablate(const RunConfig& config, const Dataset& train, const Dataset& test);

// Upstream models shared by the four rows; the rows differ only in the
// fusion stage and in which extractor they use.
struct AblationUpstream {
  std::shared_ptr<DepthBranches> depth;
  std::shared_ptr<models::TinyUNet> diffusion;
  std::shared_ptr<models::TinyUNet> autoencoder;
};
AblationTable ablate(const RunConfig& config, const Dataset& train, const Dataset& test,
                     const AblationUpstream& upstream);

}  // namespace ldfuse::pipeline
