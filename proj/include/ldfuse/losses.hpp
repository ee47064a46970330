#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "ldfuse/imageio.hpp"
#include "ldfuse/models.hpp"
#include "ldfuse/nn/autograd.hpp"

namespace ldfuse::losses {

// A scalar objective with its named sub-losses. value equals the sum of
// weight * component over all components (missing weights count as 1).
struct LossValue {
  double value = 0.0;
  std::map<std::string, double> components;
  std::map<std::string, double> weights;
  nlohmann::json to_json() const;
};

// Differentiable form: the total as a graph node plus component nodes.
struct LossTerm {
  nn::Var total;
  std::map<std::string, nn::Var> components;
  std::map<std::string, double> weights;
  LossValue evaluate() const;
};

// Scale-invariant log loss over gt's valid pixels:
// mean(d^2) - mean(d)^2 with d = log y - log y_hat.
nn::Var silog(const imageio::DepthMap& gt, const nn::Var& pred);
LossValue silog(const imageio::DepthMap& gt, const imageio::DepthMap& pred);

// Noise regression. Mean squared error by default; strict_l2 returns the
// Euclidean norm of the residual instead.
nn::Var l_diff(const nn::Var& eps_hat, const Tensor& noise, bool strict_l2 = false);
LossValue l_diff(const Tensor& eps_hat, const Tensor& noise, bool strict_l2 = false);

// (1/HW) sum_i |sobel(F_i) - max(sobel(ir), sobel(vis_i))|_1 for i in RGB.
nn::Var l_mcg(const nn::Var& fused, const Tensor& ir, const Tensor& vis);
// (1/HW) sum_i |F_i - max(ir, vis_i)|_1.
nn::Var l_mci(const nn::Var& fused, const Tensor& ir, const Tensor& vis);

LossTerm l_fusion(const nn::Var& fused, const Tensor& ir, const Tensor& vis);
LossValue l_fusion(const Tensor& fused, const Tensor& ir, const Tensor& vis);

// silog(gt, vis_net(F)) + silog(gt, ir_net(luminance(F))).
LossTerm l_depth_driven(const nn::Var& fused, const imageio::DepthMap& gt,
                        const models::DepthEstimator& depth_vis,
                        const models::DepthEstimator& depth_ir);

// l_fusion + lambda_depth * l_depth_driven. With lambda_depth == 0 the depth
// branches are not evaluated.
LossTerm total_fusion_loss(const nn::Var& fused, const Tensor& ir, const Tensor& vis,
                           const imageio::DepthMap& gt, const models::DepthEstimator& depth_vis,
                           const models::DepthEstimator& depth_ir, double lambda_depth = 1.0);

}  // namespace ldfuse::losses
