#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ldfuse/cli.hpp"
#include "ldfuse/errors.hpp"

#ifndef LDFUSE_VERSION
#define LDFUSE_VERSION "unknown"
#endif

namespace ldfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::RunConfig;

namespace {

struct Options {
  std::string verb;
  std::string config;
  std::vector<std::string> sets;
  std::string out = "run";
  std::optional<std::uint64_t> seed;
  std::string vis;
  std::string ir;
};

// Run directory layout.
struct Workspace {
  fs::path root;
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path logs() const { return root / "logs"; }
  fs::path plots() const { return root / "plots"; }
  fs::path data(pipeline::Split split) const {
    return root / "data" / (split == pipeline::Split::kTrain ? "train" : "test");
  }
};

RunConfig resolve_config(const Options& o) {
  std::ifstream in(o.config);
  if (!in) throw ConfigError("cannot read config file '" + o.config + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + o.config + "' is not valid JSON: " + e.what());
  }
  // Fill in defaults first so overrides may target any known key.
  j = RunConfig::from_json(j).to_json();
  for (const std::string& s : o.sets) pipeline::apply_override(j, s);
  if (o.seed) j["seed"] = *o.seed;
  return RunConfig::from_json(j);
}

void write_run_records(const Workspace& ws, const RunConfig& config, const std::string& verb) {
  write_text(ws.root / "config.resolved.json", config.to_json().dump(2) + "\n");
  const json manifest = {{"version", version()},
                         {"verb", verb},
                         {"seed", config.seed},
                         {"config_hash", fmt::format("{:016x}", pipeline::config_hash(config))}};
  write_text(ws.root / "manifest.json", manifest.dump(2) + "\n");
}

pipeline::Dataset dataset(const Workspace& ws, const RunConfig& config, pipeline::Split split,
                          std::ostream& out) {
  const fs::path dir = ws.data(split);
  if (fs::exists(dir / "index.json")) return pipeline::load_dataset(dir);
  out << "no dataset at " << dir.string() << "; generating it from the config\n";
  return pipeline::make_dataset(config, split);
}

void finish_stage(const Workspace& ws, pipeline::TrainLog& log,
                  const std::map<std::string, std::string>& checkpoints, std::ostream& out) {
  log.checkpoints = checkpoints;
  log.write_jsonl(ws.logs() / (log.stage + ".jsonl"));
  const auto plots = emit_plots(log, ws.plots());
  if (plots.empty()) {
    out << "warning: " << log.stage << " log is empty; no plots written\n";
    return;
  }
  out << fmt::format("{}: loss {:.4f} -> {:.4f} over {} records, {} plots\n", log.stage,
                     log.head_mean(5), log.tail_mean(5), log.records.size(), plots.size());
}

std::string checkpoint_ref(const Workspace& ws, const std::string& name) {
  return fs::relative(ws.checkpoints() / name, ws.root).generic_string();
}

void cmd_gen_data(const Workspace& ws, const RunConfig& config, std::ostream& out) {
  for (const auto split : {pipeline::Split::kTrain, pipeline::Split::kTest}) {
    const pipeline::Dataset d = pipeline::make_dataset(config, split);
    pipeline::save_dataset(d, ws.data(split));
    out << "wrote " << d.size() << " scenes to " << ws.data(split).string() << "\n";
  }
}

void cmd_train_depth(const Workspace& ws, const RunConfig& config, std::ostream& out) {
  const auto data = dataset(ws, config, pipeline::Split::kTrain, out);
  pipeline::DepthStage stage = pipeline::train_depth_branches(config, data);
  save_depth(*stage.nets, ws.checkpoints());
  finish_stage(ws, stage.log,
               {{"vis", checkpoint_ref(ws, "depth_vis")}, {"ir", checkpoint_ref(ws, "depth_ir")}},
               out);
  out << fmt::format("metric scales: vis {:.4f}, ir {:.4f}\n", stage.nets->vis.metric_scale(),
                     stage.nets->ir.metric_scale());
}

void cmd_train_diffusion(const Workspace& ws, const RunConfig& config, std::ostream& out) {
  const auto data = dataset(ws, config, pipeline::Split::kTrain, out);
  pipeline::DenoiserStage stage = config.ablation.use_diffusion
                                      ? pipeline::train_diffusion(config, data)
                                      : pipeline::train_autoencoder(config, data);
  save_extractor(*stage.net, config, ws.checkpoints());
  finish_stage(ws, stage.log, {{extractor_name(config), checkpoint_ref(ws, extractor_name(config))}},
               out);
}

void cmd_train_fusion(const Workspace& ws, const RunConfig& config, std::ostream& out) {
  const auto depth = load_depth(config, ws.checkpoints());
  const auto extractor = load_extractor(config, ws.checkpoints());
  const auto data = dataset(ws, config, pipeline::Split::kTrain, out);
  pipeline::FusionStage stage = pipeline::train_fusion(config, data, extractor, depth);
  save_fusion(stage, ws.checkpoints());
  finish_stage(ws, stage.log,
               {{"head", checkpoint_ref(ws, "fusion_head")},
                {"mlp", checkpoint_ref(ws, "semantic_mlp")}},
               out);
  out << fmt::format("fused depth scale {:.4f}\n", stage.fused_depth_scale);
}

void cmd_fuse(const Workspace& ws, const RunConfig& config, const Options& o, std::ostream& out) {
  if (o.vis.empty() || o.ir.empty()) throw UsageError("fuse needs --vis <png> and --ir <png>");
  const Tensor vis = imageio::to_unit(imageio::load_image(o.vis));
  const Tensor ir = imageio::to_unit(imageio::load_image(o.ir));
  imageio::require_unit(vis, 3, "--vis image");
  imageio::require_unit(ir, 1, "--ir image");
  if (vis.height() != ir.height() || vis.width() != ir.width()) {
    throw ShapeError("visible image is " + std::to_string(vis.height()) + "x" +
                     std::to_string(vis.width()) + " but infrared image is " +
                     std::to_string(ir.height()) + "x" + std::to_string(ir.width()));
  }
  const pipeline::FusionRunner runner(config, load_fusion_models(config, ws.checkpoints()));
  const pipeline::FusionResult r = runner.fuse(vis, ir);
  imageio::save_image(imageio::from_unit(r.fused), ws.root / "fused.png");
  imageio::save_depth(runner.fused_depth(r.fused), ws.root / "fused_depth.pfm");
  write_text(ws.root / "fuse.json",
             json{{"caption", r.caption.text()},
                  {"sigma_hat", r.params.sigma_hat},
                  {"mu_hat", r.params.mu_hat}}
                     .dump(2) +
                 "\n");
  out << "caption: " << r.caption.text() << "\n"
      << "wrote " << (ws.root / "fused.png").string() << " and "
      << (ws.root / "fused_depth.pfm").string() << "\n";
}

std::vector<std::pair<std::string, double>> metric_bars(const metrics::MetricMeans& m) {
  return {{"SF", m.sf}, {"Qab/f", m.qabf}, {"MI", m.mi}, {"SD", m.sd}, {"VIF", m.vif}};
}

void cmd_eval(const Workspace& ws, const RunConfig& config, std::ostream& out) {
  const pipeline::FusionRunner runner(config, load_fusion_models(config, ws.checkpoints()));
  const auto data = dataset(ws, config, pipeline::Split::kTest, out);
  const pipeline::Evaluation ev = pipeline::evaluate(runner, data, config.eval_threads);
  std::string lines;
  int wins = 0;
  for (const auto& r : ev.reports) {
    lines += r.to_json().dump() + "\n";
    wins += *r.depth_rmse_fused <= std::min(*r.depth_rmse_vis, *r.depth_rmse_ir);
  }
  write_text(ws.root / "reports.jsonl", lines);
  write_text(ws.root / "metrics.csv", metrics::aggregate_csv({{"ldfuse", ev.means}}));
  write_text(ws.plots() / "metrics.svg", bar_chart_svg("mean fusion metrics", metric_bars(ev.means)));
  out << metrics::aggregate_csv({{"ldfuse", ev.means}});
  out << fmt::format(
      "depth rmse (m): fused {:.3f}, vis {:.3f}, ir {:.3f}; fused best on {}/{} scenes\n",
      *ev.means.depth_rmse_fused, *ev.means.depth_rmse_vis, *ev.means.depth_rmse_ir, wins,
      ev.reports.size());
}

void cmd_ablate(const Workspace& ws, const RunConfig& config, std::ostream& out) {
  const auto train = dataset(ws, config, pipeline::Split::kTrain, out);
  const auto test = dataset(ws, config, pipeline::Split::kTest, out);
  const pipeline::AblationTable table = pipeline::ablate(config, train, test);
  write_text(ws.root / "ablation.csv", table.csv());
  write_text(ws.root / "ablation.json", table.to_json().dump(2) + "\n");
  const std::pair<const char*, double metrics::MetricMeans::*> columns[] = {
      {"SF", &metrics::MetricMeans::sf},
      {"Qabf", &metrics::MetricMeans::qabf},
      {"MI", &metrics::MetricMeans::mi},
      {"SD", &metrics::MetricMeans::sd},
      {"VIF", &metrics::MetricMeans::vif}};
  for (const auto& [name, field] : columns) {
    std::vector<std::pair<std::string, double>> bars;
    for (const auto& row : table.rows) bars.emplace_back(row.name, row.means.*field);
    write_text(ws.plots() / fmt::format("ablation_{}.svg", name),
               bar_chart_svg(std::string("ablation: ") + name, bars));
  }
  out << table.csv()
      << fmt::format("full model beats +diff on {}/5 metrics\n", table.full_beats_diffusion_only());
}

void print_error(std::ostream& err, std::string_view kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return kExitUsage;
    case ErrorKind::kConfig: return kExitConfig;
    default: return kExitRuntime;
  }
}

}  // namespace

std::string version() { return LDFUSE_VERSION; }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Depth- and language-guided infrared/visible image fusion", "ldfuse"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", version());
  Options o;

  const std::pair<const char*, const char*> verbs[] = {
      {"gen-data", "Generate the synthetic train/test scene sets"},
      {"train-depth", "Train the visible and infrared depth branches"},
      {"train-diffusion", "Train the denoiser (or the baseline autoencoder)"},
      {"train-fusion", "Train the fusion head and semantic MLP"},
      {"fuse", "Fuse one visible/infrared pair"},
      {"eval", "Score the fusion model on the test set"},
      {"ablate", "Train and score the four ablation configurations"},
  };
  for (const auto& [name, help] : verbs) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "JSON run configuration")->required();
    sub->add_option("--set", o.sets, "Override, dotted.key=value (repeatable)");
    sub->add_option("--out", o.out, "Run directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "Override the run seed");
    if (std::string_view(name) == "fuse") {
      sub->add_option("--vis", o.vis, "Visible RGB PNG")->required();
      sub->add_option("--ir", o.ir, "Infrared grayscale PNG")->required();
    }
    sub->callback([&o, name = std::string(name)] { o.verb = name; });
  }
  app.add_subcommand("selftest", "Run the built-in invariant checks")->callback([&o] {
    o.verb = "selftest";
  });

  if (!args.empty() && !args[0].starts_with("-") && app.get_subcommand_no_throw(args[0]) == nullptr) {
    err << app.help();
    print_error(err, to_string(ErrorKind::kUsage), "unknown verb '" + args[0] + "'");
    return kExitUsage;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << app.help();
    print_error(err, to_string(ErrorKind::kUsage), e.what());
    return kExitUsage;
  }

  try {
    if (o.verb == "selftest") return selftest(out) ? kExitOk : kExitRuntime;
    const RunConfig config = resolve_config(o);
    const Workspace ws{o.out};
    write_run_records(ws, config, o.verb);
    if (o.verb == "gen-data") cmd_gen_data(ws, config, out);
    if (o.verb == "train-depth") cmd_train_depth(ws, config, out);
    if (o.verb == "train-diffusion") cmd_train_diffusion(ws, config, out);
    if (o.verb == "train-fusion") cmd_train_fusion(ws, config, out);
    if (o.verb == "fuse") cmd_fuse(ws, config, o, out);
    if (o.verb == "eval") cmd_eval(ws, config, out);
    if (o.verb == "ablate") cmd_ablate(ws, config, out);
    return kExitOk;
  } catch (const Error& e) {
    print_error(err, to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    print_error(err, "runtime", e.what());
    return kExitRuntime;
  }
}

}  // namespace ldfuse::cli
