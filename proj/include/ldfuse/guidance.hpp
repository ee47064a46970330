#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ldfuse/imageio.hpp"
#include "ldfuse/nn/params.hpp"

namespace ldfuse::guidance {

inline constexpr const char* kCaptionTemplateVersion = "caption-v1";
inline constexpr int kStubEmbeddingDim = 64;

struct Caption {
  std::vector<std::string> tokens;  // lowercase words, never empty

  std::string text() const;
  bool operator==(const Caption&) const = default;
};

Caption parse_caption(const std::string& text);

struct TextEmbedding {
  std::vector<double> vector;  // unit L2 norm
};

// Channel-wise scale offsets and biases for modulate().
struct SemanticParams {
  std::vector<double> sigma_hat;
  std::vector<double> mu_hat;

  static SemanticParams identity(int channels);
  int channels() const { return static_cast<int>(sigma_hat.size()); }
};

// Every word the caption template can emit.
const std::vector<std::string>& caption_vocabulary();

// Deterministic template caption of a registered pair and the depth predicted
// for each modality. Inputs are [0, 1] tensors (vis 3 channels, ir 1 channel).
Caption caption_scene(const Tensor& vis, const Tensor& ir, const imageio::DepthMap& depth_vis,
                      const imageio::DepthMap& depth_ir);

// Count of 4-connected components brighter than median + 0.15 with at least
// three pixels.
int count_bright_components(const Tensor& gray);

// Signed feature hashing of tokens, L2-normalized.
TextEmbedding encode_text(const Caption& caption, int dim = kStubEmbeddingDim);

// Pluggable text encoder. The stub above is the default; any replacement must
// return finite unit-norm vectors of a fixed dimension.
using TextEncoder = std::function<TextEmbedding(const Caption&)>;
TextEncoder stub_encoder(int dim = kStubEmbeddingDim);
// Runs `command` through /bin/sh once per caption, writing the UTF-8 caption
// text to its stdin and parsing a JSON array of numbers from its stdout.
TextEncoder subprocess_encoder(std::string command, int expected_dim);

void validate(const TextEmbedding& embedding, int expected_dim);

// Embedding -> (sigma_hat, mu_hat): Linear(E, 4E) -> SiLU -> two Linear(4E, C)
// heads. The heads start at zero so a fresh MLP yields identity modulation.
class SemanticMlp {
 public:
  SemanticMlp(int embed_dim, int channels, std::uint64_t seed);

  int embed_dim() const { return embed_dim_; }
  int channels() const { return channels_; }

  struct Output {
    nn::Var sigma_hat;  // (C, 1, 1)
    nn::Var mu_hat;
  };
  Output forward(const nn::Var& embedding) const;
  SemanticParams predict(const TextEmbedding& embedding) const;

  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

 private:
  int embed_dim_;
  int channels_;
  nn::ParamSet params_;
  nn::Var w_hidden_, b_hidden_, w_sigma_, b_sigma_, w_mu_, b_mu_;
};

// (1 + sigma_hat[c]) * features[c] + mu_hat[c]
Tensor modulate(const Tensor& features, const SemanticParams& params);
nn::Var modulate(const nn::Var& features, const nn::Var& sigma_hat, const nn::Var& mu_hat);

nn::Var params_to_var(const std::vector<double>& values);

}  // namespace ldfuse::guidance
