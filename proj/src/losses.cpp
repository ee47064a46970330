#include "ldfuse/losses.hpp"

#include <cmath>

#include "ldfuse/errors.hpp"
#include "ldfuse/nn/ops.hpp"

namespace ldfuse::losses {

namespace {

void require_registered(const nn::Var& fused, const Tensor& ir, const Tensor& vis) {
  const Shape s = fused.shape();
  if (s.c != 3 || ir.shape() != Shape{1, s.h, s.w} || vis.shape() != Shape{3, s.h, s.w}) {
    throw ShapeError("fusion loss inputs fused " + to_string(s) + ", ir " +
                     to_string(ir.shape()) + ", vis " + to_string(vis.shape()));
  }
}

// max(a(ir), a(vis_i)) per RGB channel, as a constant target.
nn::Var channel_max_target(const Tensor& ir, const Tensor& vis) {
  const nn::Var ir3 = nn::repeat_channels(nn::Var::constant(ir), 3);
  return nn::maximum(ir3, nn::Var::constant(vis));
}

}  // namespace

nlohmann::json LossValue::to_json() const {
  nlohmann::json j = {{"total", value}, {"components", components}};
  if (!weights.empty()) j["weights"] = weights;
  return j;
}

LossValue LossTerm::evaluate() const {
  LossValue out;
  out.value = total.value()[0];
  for (const auto& [name, var] : components) out.components[name] = var.value()[0];
  out.weights = weights;
  return out;
}

nn::Var silog(const imageio::DepthMap& gt, const nn::Var& pred) {
  const Shape s = gt.depth.shape();
  if (pred.shape() != s) {
    throw ShapeError("silog prediction " + to_string(pred.shape()) + " vs ground truth " +
                     to_string(s));
  }
  for (double v : pred.value().values()) {
    if (!(v > 0.0)) throw DomainError("silog prediction must be strictly positive");
  }
  const std::size_t n = gt.count_valid();
  if (n == 0) throw DomainError("silog needs at least one valid ground-truth pixel");

  Tensor mask(s), log_gt(s);
  for (std::size_t i = 0; i < gt.depth.size(); ++i) {
    if (gt.valid[i]) {
      mask[i] = 1.0;
      log_gt[i] = std::log(gt.depth[i]);
    }
  }
  const nn::Var m = nn::Var::constant(mask);
  const nn::Var d = nn::mul(nn::sub(nn::Var::constant(log_gt), nn::log(pred)), m);
  const double inv_n = 1.0 / static_cast<double>(n);
  // Centred form of the same quantity; never negative under rounding.
  const nn::Var mean_d = nn::scale(nn::sum(d), inv_n);
  const nn::Var shifted = nn::mul(nn::add_channel_bias(d, nn::scale(mean_d, -1.0)), m);
  return nn::scale(nn::sum(nn::square(shifted)), inv_n);
}

LossValue silog(const imageio::DepthMap& gt, const imageio::DepthMap& pred) {
  const double v = silog(gt, nn::Var::constant(pred.depth)).value()[0];
  return {v, {{"silog", v}}, {}};
}

nn::Var l_diff(const nn::Var& eps_hat, const Tensor& noise, bool strict_l2) {
  if (eps_hat.shape() != noise.shape()) {
    throw ShapeError("noise estimate " + to_string(eps_hat.shape()) + " vs noise " +
                     to_string(noise.shape()));
  }
  const nn::Var sq = nn::sum(nn::square(nn::sub(eps_hat, nn::Var::constant(noise))));
  if (strict_l2) {
    const double root = std::sqrt(sq.value()[0]);
    nn::Node* sn = sq.node();
    return nn::make_op(Tensor::scalar(root), {sq}, [sn, root](const Tensor& g) {
      if (sn->requires_grad && root > 0.0) sn->grad_buffer()[0] += g[0] * 0.5 / root;
    });
  }
  return nn::scale(sq, 1.0 / static_cast<double>(noise.size()));
}

LossValue l_diff(const Tensor& eps_hat, const Tensor& noise, bool strict_l2) {
  if (eps_hat.shape() != noise.shape()) {
    throw ShapeError("noise estimate " + to_string(eps_hat.shape()) + " vs noise " +
                     to_string(noise.shape()));
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < noise.size(); ++i) {
    const double d = eps_hat[i] - noise[i];
    sq += d * d;
  }
  const double v = strict_l2 ? std::sqrt(sq) : sq / static_cast<double>(noise.size());
  return {v, {{"diff", v}}, {}};
}

nn::Var l_mcg(const nn::Var& fused, const Tensor& ir, const Tensor& vis) {
  require_registered(fused, ir, vis);
  const nn::Var target = channel_max_target(nn::sobel_magnitude(nn::Var::constant(ir)).value(),
                                            nn::sobel_magnitude(nn::Var::constant(vis)).value());
  const double inv_hw = 1.0 / static_cast<double>(ir.size());
  return nn::scale(nn::sum(nn::abs(nn::sub(nn::sobel_magnitude(fused), target))), inv_hw);
}

nn::Var l_mci(const nn::Var& fused, const Tensor& ir, const Tensor& vis) {
  require_registered(fused, ir, vis);
  const nn::Var target = channel_max_target(ir, vis);
  const double inv_hw = 1.0 / static_cast<double>(ir.size());
  return nn::scale(nn::sum(nn::abs(nn::sub(fused, target))), inv_hw);
}

LossTerm l_fusion(const nn::Var& fused, const Tensor& ir, const Tensor& vis) {
  LossTerm term;
  term.components["mcg"] = l_mcg(fused, ir, vis);
  term.components["mci"] = l_mci(fused, ir, vis);
  term.total = nn::add(term.components["mcg"], term.components["mci"]);
  return term;
}

LossValue l_fusion(const Tensor& fused, const Tensor& ir, const Tensor& vis) {
  return l_fusion(nn::Var::constant(fused), ir, vis).evaluate();
}

LossTerm l_depth_driven(const nn::Var& fused, const imageio::DepthMap& gt,
                        const models::DepthEstimator& depth_vis,
                        const models::DepthEstimator& depth_ir) {
  LossTerm term;
  term.components["silog_vis"] = silog(gt, depth_vis.forward(fused));
  term.components["silog_ir"] = silog(gt, depth_ir.forward(nn::luminance(fused)));
  term.total = nn::add(term.components["silog_vis"], term.components["silog_ir"]);
  return term;
}

LossTerm total_fusion_loss(const nn::Var& fused, const Tensor& ir, const Tensor& vis,
                           const imageio::DepthMap& gt, const models::DepthEstimator& depth_vis,
                           const models::DepthEstimator& depth_ir, double lambda_depth) {
  if (!(lambda_depth >= 0.0) || !std::isfinite(lambda_depth)) {
    throw ParameterError("lambda_depth must be a finite non-negative number");
  }
  LossTerm term = l_fusion(fused, ir, vis);
  if (lambda_depth == 0.0) return term;
  const LossTerm depth = l_depth_driven(fused, gt, depth_vis, depth_ir);
  term.components["depth"] = depth.total;
  term.weights["depth"] = lambda_depth;
  term.total = nn::add(term.total, nn::scale(depth.total, lambda_depth));
  return term;
}

}  // namespace ldfuse::losses
