#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ldfuse/pipeline.hpp"

namespace ldfuse::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitRuntime = 4,
};

// `ldfuse <verb> --config <path> [--set key=value]... [--out <dir>] [--seed N]`
// Progress goes to `out`; errors go to `err` as one JSON object per line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Build version in `git describe` form.
std::string version();

// ---------------------------------------------------------------------------
// Plots. Output is a pure function of the input, so reruns are byte-identical.

std::string line_chart_svg(const std::string& title, const std::vector<double>& x,
                           const std::vector<double>& y);
std::string bar_chart_svg(const std::string& title,
                          const std::vector<std::pair<std::string, double>>& bars);

// `<dir>/<stage>_<component>.svg` per loss component plus
// `<dir>/<stage>_summary.svg`, a bar chart of each component's final value.
// An empty log writes nothing and returns no paths.
std::vector<std::filesystem::path> emit_plots(const pipeline::TrainLog& log,
                                              const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, const std::string& text);

// ---------------------------------------------------------------------------
// Model checkpoints under one directory. Loading needs the config the models
// were trained with; missing checkpoints raise StateError.

void save_depth(const pipeline::DepthBranches& nets, const std::filesystem::path& dir);
std::shared_ptr<pipeline::DepthBranches> load_depth(const pipeline::RunConfig& config,
                                                    const std::filesystem::path& dir);

// The feature extractor is stored as "denoiser" or, for the no-diffusion
// baseline, "autoencoder".
std::string extractor_name(const pipeline::RunConfig& config);
void save_extractor(const models::TinyUNet& net, const pipeline::RunConfig& config,
                    const std::filesystem::path& dir);
std::shared_ptr<models::TinyUNet> load_extractor(const pipeline::RunConfig& config,
                                                 const std::filesystem::path& dir);

void save_fusion(const pipeline::FusionStage& stage, const std::filesystem::path& dir);
pipeline::FusionModels load_fusion_models(const pipeline::RunConfig& config,
                                          const std::filesystem::path& dir);

// Invariant checks runnable without a config; one line per check.
bool selftest(std::ostream& out);

}  // namespace ldfuse::cli
