#include "ldfuse/guidance.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ldfuse/errors.hpp"
#include "ldfuse/nn/ops.hpp"

namespace ldfuse::guidance {

std::string Caption::text() const {
  std::string out;
  for (const std::string& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

Caption parse_caption(const std::string& text) {
  Caption c;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    c.tokens.push_back(word);
  }
  return c;
}

SemanticParams SemanticParams::identity(int channels) {
  return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0)};
}

const std::vector<std::string>& caption_vocabulary() {
  static const std::vector<std::string> vocab = {
      "visible", "infrared", "image",     "with",      "objects", "nearest",
      "farthest", "depth",   "unavailable", "dark",    "dim",     "bright",
      "no",       "one",     "two",       "three",     "four",    "five",
      "many",     "very-near", "near",    "mid",       "far",     "very-far"};
  return vocab;
}

namespace {

std::string luminance_bucket(double mean) {
  if (mean < 0.15) return "dark";
  if (mean < 0.4) return "dim";
  return "bright";
}

std::string count_word(int n) {
  static const char* words[] = {"no", "one", "two", "three", "four", "five"};
  return n <= 5 ? words[n] : "many";
}

std::string depth_bin(double meters) {
  if (meters < 3.0) return "very-near";
  if (meters < 6.0) return "near";
  if (meters < 12.0) return "mid";
  if (meters < 30.0) return "far";
  return "very-far";
}

// Nearest-rank quantile of the valid samples.
double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  return v[idx];
}

void describe(std::vector<std::string>& tokens, const char* modality, const Tensor& gray,
              const imageio::DepthMap& depth) {
  double mean = 0.0;
  for (double v : gray.values()) mean += v;
  mean /= static_cast<double>(gray.size());
  tokens.insert(tokens.end(), {modality, "image", luminance_bucket(mean), "with",
                               count_word(count_bright_components(gray)), "objects"});
  std::vector<double> valid;
  for (std::size_t i = 0; i < depth.depth.size(); ++i) {
    if (depth.valid[i]) valid.push_back(depth.depth[i]);
  }
  if (valid.empty()) {
    tokens.insert(tokens.end(), {"depth", "unavailable"});
  } else {
    tokens.insert(tokens.end(), {"nearest", depth_bin(quantile(valid, 0.1)), "farthest",
                                 depth_bin(quantile(valid, 0.9))});
  }
}

}  // namespace

int count_bright_components(const Tensor& gray) {
  const int h = gray.height(), w = gray.width();
  std::vector<double> sorted(gray.values().begin(), gray.values().end());
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double threshold = sorted[sorted.size() / 2] + 0.15;

  std::vector<int> label(gray.size(), 0);
  int count = 0;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (label[start] || gray[start] <= threshold) continue;
    int size = 0;
    stack.push_back(start);
    label[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++size;
      const int y = p / w, x = p % w;
      const int nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int q = n[0] * w + n[1];
        if (!label[q] && gray[q] > threshold) {
          label[q] = 1;
          stack.push_back(q);
        }
      }
    }
    if (size >= 3) ++count;
  }
  return count;
}

Caption caption_scene(const Tensor& vis, const Tensor& ir, const imageio::DepthMap& depth_vis,
                      const imageio::DepthMap& depth_ir) {
  imageio::require_unit(vis, 3, "caption visible input");
  imageio::require_unit(ir, 1, "caption infrared input");
  if (vis.height() != ir.height() || vis.width() != ir.width()) {
    throw ShapeError("caption inputs are not registered");
  }
  Caption caption;
  describe(caption.tokens, "visible", imageio::luminance(vis), depth_vis);
  describe(caption.tokens, "infrared", ir, depth_ir);
  return caption;
}

namespace {

std::uint64_t fnv1a(const std::string& s, std::uint64_t salt) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ (salt * 0x9e3779b97f4a7c15ULL);
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr int kHashProbes = 3;

}  // namespace

TextEmbedding encode_text(const Caption& caption, int dim) {
  if (caption.tokens.empty()) throw ParameterError("cannot encode an empty caption");
  if (dim < 1) throw ParameterError("embedding dimension must be positive");
  std::vector<double> v(dim, 0.0);
  for (const std::string& token : caption.tokens) {
    for (int k = 0; k < kHashProbes; ++k) {
      const std::uint64_t h = fnv1a(token, static_cast<std::uint64_t>(k));
      const auto bucket = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim));
      v[bucket] += (h >> 63) ? 1.0 : -1.0;
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    // Every probe cancelled; fall back to a fixed unit vector.
    v[0] = 1.0;
    norm = 1.0;
  }
  for (double& x : v) x /= norm;
  return {std::move(v)};
}

TextEncoder stub_encoder(int dim) {
  return [dim](const Caption& c) { return encode_text(c, dim); };
}

void validate(const TextEmbedding& embedding, int expected_dim) {
  if (static_cast<int>(embedding.vector.size()) != expected_dim) {
    throw ShapeError("text embedding has dimension " + std::to_string(embedding.vector.size()) +
                     ", expected " + std::to_string(expected_dim));
  }
  double norm = 0.0;
  for (double x : embedding.vector) {
    if (!std::isfinite(x)) throw DomainError("text embedding has non-finite entries");
    norm += x * x;
  }
  if (std::abs(std::sqrt(norm) - 1.0) > 1e-6) {
    throw DomainError("text embedding is not unit norm");
  }
}

namespace {

std::string run_filter(const std::string& command, const std::string& input) {
  int to_child[2], from_child[2];
  if (pipe(to_child) != 0) throw IoError("pipe() failed");
  if (pipe(from_child) != 0) {
    close(to_child[0]);
    close(to_child[1]);
    throw IoError("pipe() failed");
  }
  const pid_t pid = fork();
  if (pid < 0) throw IoError("fork() failed");
  if (pid == 0) {
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    close(to_child[0]);
    close(to_child[1]);
    close(from_child[0]);
    close(from_child[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(to_child[0]);
  close(from_child[1]);

  // Ignore SIGPIPE while feeding a child that may exit early.
  struct sigaction ignore {}, previous {};
  ignore.sa_handler = SIG_IGN;
  sigaction(SIGPIPE, &ignore, &previous);
  std::size_t written = 0;
  while (written < input.size()) {
    const ssize_t n = write(to_child[1], input.data() + written, input.size() - written);
    if (n <= 0) break;
    written += static_cast<std::size_t>(n);
  }
  close(to_child[1]);
  sigaction(SIGPIPE, &previous, nullptr);

  std::string output;
  char buf[4096];
  for (;;) {
    const ssize_t n = read(from_child[0], buf, sizeof(buf));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    output.append(buf, static_cast<std::size_t>(n));
  }
  close(from_child[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw IoError("text encoder command failed: " + command);
  }
  return output;
}

}  // namespace

TextEncoder subprocess_encoder(std::string command, int expected_dim) {
  return [command = std::move(command), expected_dim](const Caption& c) {
    if (c.tokens.empty()) throw ParameterError("cannot encode an empty caption");
    const std::string out = run_filter(command, c.text() + "\n");
    TextEmbedding e;
    try {
      e.vector = nlohmann::json::parse(out).get<std::vector<double>>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("text encoder returned malformed JSON: ") + ex.what());
    }
    validate(e, expected_dim);
    return e;
  };
}

SemanticMlp::SemanticMlp(int embed_dim, int channels, std::uint64_t seed)
    : embed_dim_(embed_dim), channels_(channels) {
  if (embed_dim < 1 || channels < 1) throw ParameterError("MLP sizes must be positive");
  Rng rng(seed);
  const int hidden = 4 * embed_dim;
  w_hidden_ = params_.add("hidden.w", nn::fan_in_init({hidden, embed_dim, 1}, embed_dim, rng));
  b_hidden_ = params_.add("hidden.b", Tensor({hidden, 1, 1}));
  w_sigma_ = params_.add("sigma.w", Tensor({channels, hidden, 1}));
  b_sigma_ = params_.add("sigma.b", Tensor({channels, 1, 1}));
  w_mu_ = params_.add("mu.w", Tensor({channels, hidden, 1}));
  b_mu_ = params_.add("mu.b", Tensor({channels, 1, 1}));
}

SemanticMlp::Output SemanticMlp::forward(const nn::Var& embedding) const {
  if (embedding.shape() != Shape{embed_dim_, 1, 1}) {
    throw ShapeError("MLP expects a " + std::to_string(embed_dim_) + "-vector, got " +
                     to_string(embedding.shape()));
  }
  const nn::Var hidden = nn::silu(nn::linear(embedding, w_hidden_, b_hidden_));
  return {nn::linear(hidden, w_sigma_, b_sigma_), nn::linear(hidden, w_mu_, b_mu_)};
}

SemanticParams SemanticMlp::predict(const TextEmbedding& embedding) const {
  const Output out = forward(nn::Var::constant(Tensor::vector(embedding.vector)));
  return {out.sigma_hat.value().to_vector(), out.mu_hat.value().to_vector()};
}

nn::Var params_to_var(const std::vector<double>& values) {
  return nn::Var::constant(Tensor::vector(values));
}

Tensor modulate(const Tensor& features, const SemanticParams& params) {
  if (params.sigma_hat.size() != params.mu_hat.size() ||
      static_cast<int>(params.sigma_hat.size()) != features.channels()) {
    throw ShapeError("semantic parameters of length " + std::to_string(params.sigma_hat.size()) +
                     " for " + std::to_string(features.channels()) + " feature channels");
  }
  return modulate(nn::Var::constant(features), params_to_var(params.sigma_hat),
                  params_to_var(params.mu_hat))
      .value();
}

nn::Var modulate(const nn::Var& features, const nn::Var& sigma_hat, const nn::Var& mu_hat) {
  return nn::channel_affine(features, sigma_hat, mu_hat);
}

}  // namespace ldfuse::guidance
