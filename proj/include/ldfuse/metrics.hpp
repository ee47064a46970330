#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldfuse/imageio.hpp"

namespace ldfuse::metrics {

// Metrics operate on 8-bit gray planes held as (1, H, W) tensors of integers
// in [0, 255].
Tensor quantize_gray(const Tensor& unit);  // round(255 * luminance) for RGB, round(255 * x) for gray

double sf(const Tensor& f);
double sd(const Tensor& f);
// MI(F, A) + MI(F, B) in bits from 256-bin joint histograms.
double mi(const Tensor& f, const Tensor& a, const Tensor& b);
double mutual_information(const Tensor& x, const Tensor& y);

// Edge preservation constants (strength, orientation).
struct QabfConstants {
  double gamma_g = 0.9994, kappa_g = -15.0, sigma_g = 0.5;
  double gamma_a = 0.9879, kappa_a = -22.0, sigma_a = 0.8;
};
// Sigmoid preservation scores are divided by their gamma and clipped to 1,
// so that a perfectly preserved edge scores exactly 1.
double qabf(const Tensor& f, const Tensor& a, const Tensor& b, const QabfConstants& k = {});

// Pixel-domain multi-scale VIF of one reference/distorted pair.
double vif_single(const Tensor& reference, const Tensor& distorted);
// Mean of vif_single(A, F) and vif_single(B, F).
double vif(const Tensor& f, const Tensor& a, const Tensor& b);

// Root mean squared error over gt's valid pixels, in meters.
double depth_rmse(const imageio::DepthMap& gt, const imageio::DepthMap& pred);

struct FusionReport {
  std::string pair_id;
  double sf = 0.0, qabf = 0.0, mi = 0.0, sd = 0.0, vif = 0.0;
  std::optional<double> depth_rmse_fused, depth_rmse_vis, depth_rmse_ir;
  nlohmann::json to_json() const;
};

// All five image metrics for a fused RGB result against its sources, all
// given as [0, 1] tensors.
FusionReport score_fusion(const std::string& pair_id, const Tensor& fused, const Tensor& ir,
                          const Tensor& vis);

struct MetricMeans {
  double sf = 0.0, qabf = 0.0, mi = 0.0, sd = 0.0, vif = 0.0;
  std::optional<double> depth_rmse_fused, depth_rmse_vis, depth_rmse_ir;
};
MetricMeans aggregate(const std::vector<FusionReport>& reports);

// CSV with one row per method, columns in the order SF, Qab/f, MI, SD, VIF.
std::string aggregate_csv(const std::vector<std::pair<std::string, MetricMeans>>& rows);

}  // namespace ldfuse::metrics
