#include <fmt/format.h>

#include <fstream>

#include "ldfuse/errors.hpp"
#include "ldfuse/pipeline.hpp"
#include "ldfuse/rng.hpp"

namespace ldfuse::pipeline {

using nlohmann::json;

Sample to_sample(const imageio::ScenePair& scene, std::string id) {
  Sample s;
  s.id = std::move(id);
  s.vis = imageio::to_unit(scene.vis);
  s.ir = imageio::to_unit(scene.ir);
  s.gt = scene.gt_depth;
  s.x0 = imageio::concat_modalities(s.vis, s.ir);
  return s;
}

std::vector<Sample> Dataset::samples() const {
  std::vector<Sample> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) out.push_back(to_sample(scenes[i], ids[i]));
  return out;
}

Dataset make_dataset(const RunConfig& config, Split split) {
  const bool train = split == Split::kTrain;
  const int n = train ? config.data.n_train : config.data.n_test;
  const std::uint64_t base = mix_seed(config.seed, train ? 0x7472u : 0x7465u);
  Dataset d;
  for (int i = 0; i < n; ++i) {
    d.scenes.push_back(imageio::synth_scene(mix_seed(base, static_cast<std::uint64_t>(i)),
                                            config.image_size, config.image_size,
                                            config.data.n_objects, config.data.p_ir_only,
                                            config.data.p_vis_only));
    d.ids.push_back(fmt::format("{}{:04d}", train ? "train" : "test", i));
  }
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < data.size(); ++i) imageio::save_scene(data.scenes[i], dir, data.ids[i]);
  std::ofstream out(dir / "index.json");
  if (!out) throw IoError("cannot write " + (dir / "index.json").string());
  out << json{{"ids", data.ids}}.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw IoError("no dataset index in " + dir.string());
  Dataset d;
  try {
    d.ids = json::parse(in).at("ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("malformed dataset index: " + std::string(e.what()));
  }
  for (const std::string& id : d.ids) d.scenes.push_back(imageio::load_scene(dir, id));
  return d;
}

json LogRecord::to_json() const {
  json j = {{"step", step}, {"total", total}, {"components", components}};
  if (!timesteps.empty()) j["t"] = timesteps;
  return j;
}

void TrainLog::append(LogRecord record) {
  if (!records.empty() && record.step <= records.back().step) {
    throw StateError("log steps must be strictly increasing");
  }
  records.push_back(std::move(record));
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const LogRecord& r : records) out << r.to_json().dump() << "\n";
  if (!checkpoints.empty()) out << json{{"checkpoints", checkpoints}}.dump() << "\n";
  if (!out) throw IoError("short write to " + path.string());
}

TrainLog TrainLog::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  TrainLog log;
  log.stage = path.stem().string();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("checkpoints")) {
        log.checkpoints = j.at("checkpoints").get<std::map<std::string, std::string>>();
        continue;
      }
      LogRecord r;
      r.step = j.at("step").get<long>();
      r.total = j.at("total").get<double>();
      r.components = j.at("components").get<std::map<std::string, double>>();
      if (j.contains("t")) r.timesteps = j.at("t").get<std::vector<int>>();
      log.append(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError("malformed log line in " + path.string() + ": " + e.what());
    }
  }
  return log;
}

double TrainLog::head_mean(std::size_t window) const {
  if (records.empty()) throw StateError("empty training log");
  const std::size_t n = std::min(window, records.size());
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += records[i].total;
  return s / static_cast<double>(n);
}

double TrainLog::tail_mean(std::size_t window) const {
  if (records.empty()) throw StateError("empty training log");
  const std::size_t n = std::min(window, records.size());
  double s = 0.0;
  for (std::size_t i = records.size() - n; i < records.size(); ++i) s += records[i].total;
  return s / static_cast<double>(n);
}

}  // namespace ldfuse::pipeline
