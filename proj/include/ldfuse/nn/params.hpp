#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldfuse/nn/autograd.hpp"
#include "ldfuse/rng.hpp"

namespace ldfuse::nn {

struct NamedParam {
  std::string name;
  Var var;
};

// Ordered collection of trainable leaves. Order is registration order and is
// the order used by checkpoints and optimizers.
class ParamSet {
 public:
  Var add(std::string name, Tensor init);

  const std::vector<NamedParam>& entries() const { return entries_; }
  std::vector<NamedParam>& entries() { return entries_; }
  const Var& get(const std::string& name) const;
  std::size_t count() const;  // total scalar parameters

  void zero_grad();
  void set_trainable(bool on);
  // FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;

 private:
  std::vector<NamedParam> entries_;
};

// Parameter initializers.
Tensor uniform_init(Shape shape, double bound, Rng& rng);
Tensor fan_in_init(Shape shape, int fan_in, Rng& rng);  // U(-1/sqrt(fan), 1/sqrt(fan))

// Checkpoint archive: `<stem>.bin` holds raw little-endian float64 tensors
// back to back; `<stem>.json` lists {name, shape, dtype, offset, nbytes} per
// tensor plus free-form metadata.
void save_checkpoint(const ParamSet& params, const std::filesystem::path& stem,
                     const nlohmann::json& meta = nlohmann::json::object());
// Loads values into an already-constructed set; names and shapes must match.
nlohmann::json load_checkpoint(ParamSet& params, const std::filesystem::path& stem);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

class Adam {
 public:
  Adam(ParamSet& params, AdamOptions options);
  // Applies one update from accumulated gradients scaled by `grad_scale`,
  // then clears them. Returns the pre-clip gradient norm.
  double step(double grad_scale = 1.0);
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }

 private:
  ParamSet* params_;
  AdamOptions options_;
  std::vector<Tensor> m_, v_;
  long step_ = 0;
};

}  // namespace ldfuse::nn
