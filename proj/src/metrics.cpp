#include "ldfuse/metrics.hpp"

#include <array>
#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "ldfuse/errors.hpp"
#include "ldfuse/filters.hpp"

namespace ldfuse::metrics {

namespace {

void require_gray(const Tensor& t, const char* what) {
  if (t.channels() != 1 || t.empty()) {
    throw ShapeError(std::string(what) + " must be a non-empty 1-channel plane, got " +
                     to_string(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  require_gray(a, what);
  require_gray(b, what);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

int level_of(double v) {
  const double r = std::round(v);
  if (r != v || r < 0.0 || r > 255.0) throw DomainError("metric input is not an 8-bit level");
  return static_cast<int>(r);
}

}  // namespace

Tensor quantize_gray(const Tensor& unit) {
  Tensor gray;
  if (unit.channels() == 3) {
    gray = imageio::luminance(unit);
  } else if (unit.channels() == 1) {
    gray = unit;
  } else {
    throw ShapeError("cannot quantize a " + std::to_string(unit.channels()) + "-channel image");
  }
  for (double& v : gray.values()) v = std::round(255.0 * std::clamp(v, 0.0, 1.0));
  return gray;
}

double sf(const Tensor& f) {
  require_gray(f, "sf input");
  const int h = f.height(), w = f.width();
  if (h < 2 || w < 2) throw SizeError("spatial frequency needs at least 2x2 pixels");
  double row = 0.0, col = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (x > 0) {
        const double d = f(0, y, x) - f(0, y, x - 1);
        row += d * d;
      }
      if (y > 0) {
        const double d = f(0, y, x) - f(0, y - 1, x);
        col += d * d;
      }
    }
  }
  row /= static_cast<double>(h) * (w - 1);
  col /= static_cast<double>(h - 1) * w;
  return std::sqrt(row + col);
}

double sd(const Tensor& f) {
  require_gray(f, "sd input");
  double mean = 0.0;
  for (double v : f.values()) mean += v;
  mean /= static_cast<double>(f.size());
  double var = 0.0;
  for (double v : f.values()) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(f.size()));
}

double mutual_information(const Tensor& x, const Tensor& y) {
  require_same(x, y, "mutual information inputs");
  std::vector<double> joint(256 * 256, 0.0);
  std::array<double, 256> px{}, py{};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const int a = level_of(x[i]), b = level_of(y[i]);
    joint[a * 256 + b] += 1.0;
    px[a] += 1.0;
    py[b] += 1.0;
  }
  const double n = static_cast<double>(x.size());
  double out = 0.0;
  for (int a = 0; a < 256; ++a) {
    if (px[a] == 0.0) continue;
    for (int b = 0; b < 256; ++b) {
      const double c = joint[a * 256 + b];
      if (c == 0.0) continue;
      out += (c / n) * std::log2(c * n / (px[a] * py[b]));
    }
  }
  return std::max(out, 0.0);
}

double mi(const Tensor& f, const Tensor& a, const Tensor& b) {
  return mutual_information(f, a) + mutual_information(f, b);
}

namespace {

struct EdgeField {
  std::vector<double> strength, angle;
};

EdgeField edges(const Tensor& img) {
  const int h = img.height(), w = img.width();
  std::vector<double> gx(img.size()), gy(img.size());
  sobel_xy(img.values(), h, w, gx, gy);
  EdgeField e{std::vector<double>(img.size()), std::vector<double>(img.size())};
  for (std::size_t i = 0; i < img.size(); ++i) {
    e.strength[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    if (gx[i] == 0.0) {
      e.angle[i] = gy[i] == 0.0 ? 0.0 : std::numbers::pi / 2.0;
    } else {
      e.angle[i] = std::atan(gy[i] / gx[i]);
    }
  }
  return e;
}

double preserved(double x, double gamma, double kappa, double sigma) {
  return std::min(1.0, 1.0 / (1.0 + std::exp(kappa * (x - sigma))) / gamma);
}

// Per-pixel edge preservation of source s in the fused image.
double pixel_q(double gs, double as, double gf, double af, const QabfConstants& k) {
  double g = 0.0;
  if (gs > 0.0 && gf > 0.0) g = gs > gf ? gf / gs : gs / gf;
  // Orientations are undirected, so the difference wraps at pi.
  double d = std::abs(as - af);
  if (d > std::numbers::pi / 2.0) d = std::numbers::pi - d;
  const double orient = 1.0 - d / (std::numbers::pi / 2.0);
  return preserved(g, k.gamma_g, k.kappa_g, k.sigma_g) *
         preserved(orient, k.gamma_a, k.kappa_a, k.sigma_a);
}

}  // namespace

double qabf(const Tensor& f, const Tensor& a, const Tensor& b, const QabfConstants& k) {
  require_same(f, a, "qabf inputs");
  require_same(f, b, "qabf inputs");
  const EdgeField ef = edges(f), ea = edges(a), eb = edges(b);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double wa = ea.strength[i], wb = eb.strength[i];
    if (wa > 0.0) num += wa * pixel_q(wa, ea.angle[i], ef.strength[i], ef.angle[i], k);
    if (wb > 0.0) num += wb * pixel_q(wb, eb.angle[i], ef.strength[i], ef.angle[i], k);
    den += wa + wb;
  }
  if (den == 0.0) return 0.0;
  return std::clamp(num / den, 0.0, 1.0);
}

namespace {

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

std::vector<double> gaussian_1d(int n) {
  const double sigma = n / 5.0;
  const double c = (n - 1) / 2.0;
  std::vector<double> k(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (double& x : k) x /= total;
  return k;
}

// Separable 'valid' filtering; empty when the plane is smaller than the kernel.
Plane filter_valid(const Plane& p, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  Plane out;
  if (p.h < n || p.w < n) return out;
  Plane tmp{p.h, p.w - n + 1, {}};
  tmp.v.resize(static_cast<std::size_t>(tmp.h) * tmp.w);
  for (int y = 0; y < tmp.h; ++y) {
    for (int x = 0; x < tmp.w; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * p.at(y, x + i);
      tmp.v[static_cast<std::size_t>(y) * tmp.w + x] = s;
    }
  }
  out = {p.h - n + 1, tmp.w, {}};
  out.v.resize(static_cast<std::size_t>(out.h) * out.w);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp.at(y + i, x);
      out.v[static_cast<std::size_t>(y) * out.w + x] = s;
    }
  }
  return out;
}

// Decimation by 2 that commutes with flips: odd extents keep every other
// sample starting at the first, even extents average adjacent pairs.
std::vector<double> decimate_line(const std::vector<double>& in) {
  const std::size_t n = in.size();
  std::vector<double> out;
  if (n % 2 == 1) {
    for (std::size_t i = 0; i < n; i += 2) out.push_back(in[i]);
  } else {
    for (std::size_t i = 0; i < n; i += 2) out.push_back(0.5 * (in[i] + in[i + 1]));
  }
  return out;
}

Plane subsample(const Plane& p) {
  const int w = p.w % 2 ? (p.w + 1) / 2 : p.w / 2;
  const int h = p.h % 2 ? (p.h + 1) / 2 : p.h / 2;
  std::vector<double> rows(static_cast<std::size_t>(p.h) * w);
  for (int y = 0; y < p.h; ++y) {
    const auto begin = p.v.begin() + static_cast<std::ptrdiff_t>(y) * p.w;
    const std::vector<double> line = decimate_line(std::vector<double>(begin, begin + p.w));
    std::copy(line.begin(), line.end(), rows.begin() + static_cast<std::ptrdiff_t>(y) * w);
  }
  Plane out{h, w, std::vector<double>(static_cast<std::size_t>(h) * w)};
  for (int x = 0; x < w; ++x) {
    std::vector<double> col(p.h);
    for (int y = 0; y < p.h; ++y) col[y] = rows[static_cast<std::size_t>(y) * w + x];
    const std::vector<double> line = decimate_line(col);
    for (int y = 0; y < h; ++y) out.v[static_cast<std::size_t>(y) * w + x] = line[y];
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out{a.h, a.w, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

constexpr double kVifNoise = 2.0;
constexpr double kVifEps = 1e-10;
constexpr int kVifScales = 4;

}  // namespace

double vif_single(const Tensor& reference, const Tensor& distorted) {
  require_same(reference, distorted, "vif inputs");
  const int largest = (1 << kVifScales) + 1;
  if (reference.height() < largest || reference.width() < largest) {
    throw SizeError("vif needs images of at least " + std::to_string(largest) + "x" +
                    std::to_string(largest));
  }
  Plane ref{reference.height(), reference.width(), reference.to_vector()};
  Plane dist{distorted.height(), distorted.width(), distorted.to_vector()};
  double num = 0.0, den = 0.0;
  for (int scale = 1; scale <= kVifScales; ++scale) {
    const std::vector<double> win = gaussian_1d((1 << (kVifScales + 1 - scale)) + 1);
    if (scale > 1) {
      ref = filter_valid(ref, win);
      dist = filter_valid(dist, win);
      if (ref.v.empty()) break;
      ref = subsample(ref);
      dist = subsample(dist);
    }
    const Plane mu1 = filter_valid(ref, win);
    if (mu1.v.empty()) break;
    const Plane mu2 = filter_valid(dist, win);
    const Plane e11 = filter_valid(product(ref, ref), win);
    const Plane e22 = filter_valid(product(dist, dist), win);
    const Plane e12 = filter_valid(product(ref, dist), win);
    for (std::size_t i = 0; i < mu1.v.size(); ++i) {
      double s1 = std::max(0.0, e11.v[i] - mu1.v[i] * mu1.v[i]);
      const double s2 = std::max(0.0, e22.v[i] - mu2.v[i] * mu2.v[i]);
      const double s12 = e12.v[i] - mu1.v[i] * mu2.v[i];
      double g = s12 / (s1 + kVifEps);
      double sv = s2 - g * s12;
      if (s1 < kVifEps) {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
      }
      if (s2 < kVifEps) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = s2;
        g = 0.0;
      }
      sv = std::max(sv, kVifEps);
      num += std::log2(1.0 + g * g * s1 / (sv + kVifNoise));
      den += std::log2(1.0 + s1 / kVifNoise);
    }
  }
  // A featureless reference carries no information to preserve.
  return den > 0.0 ? num / den : 0.0;
}

double vif(const Tensor& f, const Tensor& a, const Tensor& b) {
  return 0.5 * (vif_single(a, f) + vif_single(b, f));
}

double depth_rmse(const imageio::DepthMap& gt, const imageio::DepthMap& pred) {
  if (gt.depth.shape() != pred.depth.shape()) {
    throw ShapeError("depth maps " + to_string(gt.depth.shape()) + " vs " +
                     to_string(pred.depth.shape()));
  }
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.depth.size(); ++i) {
    if (!gt.valid[i]) continue;
    if (!std::isfinite(pred.depth[i])) throw DomainError("non-finite predicted depth");
    const double d = gt.depth[i] - pred.depth[i];
    sq += d * d;
    ++n;
  }
  if (n == 0) throw DomainError("depth_rmse needs at least one valid ground-truth pixel");
  return std::sqrt(sq / static_cast<double>(n));
}

nlohmann::json FusionReport::to_json() const {
  nlohmann::json j = {{"pair_id", pair_id}, {"sf", sf}, {"qabf", qabf},
                      {"mi", mi},           {"sd", sd}, {"vif", vif}};
  if (depth_rmse_fused) j["depth_rmse_fused"] = *depth_rmse_fused;
  if (depth_rmse_vis) j["depth_rmse_vis"] = *depth_rmse_vis;
  if (depth_rmse_ir) j["depth_rmse_ir"] = *depth_rmse_ir;
  return j;
}

FusionReport score_fusion(const std::string& pair_id, const Tensor& fused, const Tensor& ir,
                          const Tensor& vis) {
  imageio::require_unit(fused, 3, "fused image");
  imageio::require_unit(ir, 1, "infrared image");
  imageio::require_unit(vis, 3, "visible image");
  const Tensor f = quantize_gray(fused), a = quantize_gray(ir), b = quantize_gray(vis);
  FusionReport r;
  r.pair_id = pair_id;
  r.sf = sf(f);
  r.qabf = qabf(f, a, b);
  r.mi = mi(f, a, b);
  r.sd = sd(f);
  r.vif = vif(f, a, b);
  return r;
}

MetricMeans aggregate(const std::vector<FusionReport>& reports) {
  MetricMeans m;
  if (reports.empty()) return m;
  const double n = static_cast<double>(reports.size());
  auto mean_opt = [&](auto member) -> std::optional<double> {
    double s = 0.0;
    for (const FusionReport& r : reports) {
      if (!(r.*member)) return std::nullopt;
      s += *(r.*member);
    }
    return s / n;
  };
  for (const FusionReport& r : reports) {
    m.sf += r.sf;
    m.qabf += r.qabf;
    m.mi += r.mi;
    m.sd += r.sd;
    m.vif += r.vif;
  }
  m.sf /= n;
  m.qabf /= n;
  m.mi /= n;
  m.sd /= n;
  m.vif /= n;
  m.depth_rmse_fused = mean_opt(&FusionReport::depth_rmse_fused);
  m.depth_rmse_vis = mean_opt(&FusionReport::depth_rmse_vis);
  m.depth_rmse_ir = mean_opt(&FusionReport::depth_rmse_ir);
  return m;
}

std::string aggregate_csv(const std::vector<std::pair<std::string, MetricMeans>>& rows) {
  std::string out = "method,SF,Qab/f,MI,SD,VIF\n";
  for (const auto& [name, m] : rows) {
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", name, m.sf, m.qabf, m.mi, m.sd,
                       m.vif);
  }
  return out;
}

}  // namespace ldfuse::metrics
