#include "ldfuse/nn/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ldfuse/errors.hpp"

namespace ldfuse::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

Var ParamSet::add(std::string name, Tensor init) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ParameterError("duplicate parameter name " + name);
  }
  Var v = Var::leaf(std::move(init), true);
  entries_.push_back({std::move(name), v});
  return v;
}

const Var& ParamSet::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.var;
  }
  throw ParameterError("unknown parameter " + name);
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.value().size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

void ParamSet::set_trainable(bool on) {
  for (auto& e : entries_) e.var.set_requires_grad(on);
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : entries_) {
    feed(e.name.data(), e.name.size());
    const Shape s = e.var.shape();
    feed(&s, sizeof(s));
    feed(e.var.value().data(), e.var.value().size() * sizeof(double));
  }
  return h;
}

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor fan_in_init(Shape shape, int fan_in, Rng& rng) {
  return uniform_init(shape, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

void save_checkpoint(const ParamSet& params, const std::filesystem::path& stem,
                     const nlohmann::json& meta) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path manifest = stem;
  manifest += ".json";
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());

  std::ofstream out(bin, std::ios::binary);
  if (!out) throw IoError("cannot write " + bin.string());
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : params.entries()) {
    const Tensor& t = e.var.value();
    const std::uint64_t nbytes = t.size() * sizeof(double);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(nbytes));
    tensors.push_back({{"name", e.name},
                       {"shape", {t.channels(), t.height(), t.width()}},
                       {"dtype", "float64"},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  if (!out) throw IoError("short write to " + bin.string());

  nlohmann::json doc = {{"format", "ldfuse-tensors"},
                        {"version", 1},
                        {"byte_order", "little"},
                        {"data_file", bin.filename().string()},
                        {"total_bytes", offset},
                        {"tensors", tensors},
                        {"meta", meta}};
  std::ofstream mf(manifest);
  if (!mf) throw IoError("cannot write " + manifest.string());
  mf << doc.dump(2) << '\n';
}

nlohmann::json load_checkpoint(ParamSet& params, const std::filesystem::path& stem) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path manifest = stem;
  manifest += ".json";
  std::ifstream mf(manifest);
  if (!mf) throw IoError("cannot read checkpoint manifest " + manifest.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint manifest " + manifest.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "ldfuse-tensors") {
    throw FormatError("not an ldfuse checkpoint: " + manifest.string());
  }
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("cannot read " + bin.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const auto& tensors = doc.at("tensors");
  if (tensors.size() != params.entries().size()) {
    throw FormatError("checkpoint has " + std::to_string(tensors.size()) +
                      " tensors, model expects " + std::to_string(params.entries().size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& rec = tensors[i];
    auto& entry = params.entries()[i];
    if (rec.at("name").get<std::string>() != entry.name) {
      throw FormatError("checkpoint tensor " + rec.at("name").get<std::string>() +
                        " where " + entry.name + " expected");
    }
    if (rec.at("dtype").get<std::string>() != "float64") {
      throw FormatError("unsupported dtype for " + entry.name);
    }
    const auto dims = rec.at("shape").get<std::vector<int>>();
    Tensor& dst = entry.var.mutable_value();
    if (dims.size() != 3 || Shape{dims[0], dims[1], dims[2]} != dst.shape()) {
      throw FormatError("shape mismatch for " + entry.name);
    }
    const auto offset = rec.at("offset").get<std::uint64_t>();
    const auto nbytes = rec.at("nbytes").get<std::uint64_t>();
    if (nbytes != dst.size() * sizeof(double) || offset + nbytes > blob.size()) {
      throw FormatError("byte range out of bounds for " + entry.name);
    }
    std::memcpy(dst.data(), blob.data() + offset, nbytes);
  }
  return doc.value("meta", nlohmann::json::object());
}

Adam::Adam(ParamSet& params, AdamOptions options) : params_(&params), options_(options) {
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.var.shape());
    v_.emplace_back(e.var.shape());
  }
}

double Adam::step(double grad_scale) {
  auto& entries = params_->entries();
  double sq = 0.0;
  for (auto& e : entries) {
    if (!e.var.has_grad()) continue;
    for (double g : e.var.grad().values()) sq += g * g;
  }
  const double norm = std::sqrt(sq) * grad_scale;
  double clip = 1.0;
  if (options_.grad_clip > 0.0 && norm > options_.grad_clip) clip = options_.grad_clip / norm;

  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Var& var = entries[i].var;
    if (!var.has_grad() || !var.requires_grad()) continue;
    const Tensor& g = var.grad();
    Tensor& w = var.mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * grad_scale * clip;
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * gj;
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * gj * gj;
      w[j] -= options_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
    }
  }
  params_->zero_grad();
  return norm;
}

}  // namespace ldfuse::nn
