#include "ldfuse/schedule.hpp"

#include <cmath>

#include "ldfuse/errors.hpp"

namespace ldfuse::schedule {

ScheduleTable::ScheduleTable(std::vector<double> beta) : beta_(std::move(beta)) {
  const std::size_t n = beta_.size();
  alpha_.resize(n);
  alpha_bar_.resize(n);
  sigma2_.resize(n);
  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) {
      throw ParameterError("beta must lie in (0, 1)");
    }
    alpha_[i] = 1.0 - beta_[i];
    const double prev = running;
    running *= alpha_[i];
    alpha_bar_[i] = running;
    sigma2_[i] = i == 0 ? 0.0 : (1.0 - prev) / (1.0 - running) * beta_[i];
  }
}

std::size_t ScheduleTable::index(int t) const {
  if (t < 1 || t > steps()) {
    throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) +
                     "]");
  }
  return static_cast<std::size_t>(t - 1);
}

ScheduleTable make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw ParameterError("schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ParameterError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> beta(steps);
  for (int i = 0; i < steps; ++i) {
    beta[i] = beta_start + (beta_end - beta_start) * i / static_cast<double>(steps - 1);
  }
  return ScheduleTable(std::move(beta));
}

nlohmann::json to_json(const ScheduleTable& table) {
  return {{"T", table.steps()},
          {"beta", table.betas()},
          {"alpha", table.alphas()},
          {"alpha_bar", table.alpha_bars()},
          {"sigma2", table.sigma2s()}};
}

ScheduleTable schedule_from_json(const nlohmann::json& j) {
  try {
    return ScheduleTable(j.at("beta").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed schedule: ") + e.what());
  }
}

namespace {

Tensor affine(const Tensor& a, double ca, const Tensor& b, double cb, const char* what) {
  require_same_shape(a, b, what);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ca * a[i] + cb * b[i];
  return out;
}

}  // namespace

Tensor forward_step(const ScheduleTable& table, const Tensor& x_prev, int t, const Tensor& noise) {
  const double a = table.alpha(t);
  return affine(x_prev, std::sqrt(a), noise, std::sqrt(1.0 - a), "forward_step");
}

NoisySample forward_marginal(const ScheduleTable& table, const Tensor& x0, int t,
                             const Tensor& noise) {
  const double ab = table.alpha_bar(t);
  return {affine(x0, std::sqrt(ab), noise, std::sqrt(1.0 - ab), "forward_marginal"), t, noise};
}

Tensor posterior_mean(const ScheduleTable& table, const Tensor& x_t, int t, const Tensor& eps_hat) {
  const double a = table.alpha(t);
  const double inv = 1.0 / std::sqrt(a);
  const double k = table.beta(t) / std::sqrt(1.0 - table.alpha_bar(t));
  return affine(x_t, inv, eps_hat, -inv * k, "posterior_mean");
}

Tensor reverse_step(const ScheduleTable& table, const Tensor& x_t, int t, const Tensor& eps_hat,
                    const Tensor& z) {
  Tensor mean = posterior_mean(table, x_t, t, eps_hat);
  if (t == 1) return mean;
  require_same_shape(mean, z, "reverse_step");
  const double sigma = std::sqrt(table.sigma2(t));
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += sigma * z[i];
  return mean;
}

Tensor predict_x0(const ScheduleTable& table, const Tensor& x_t, int t, const Tensor& eps_hat) {
  const double ab = table.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(ab);
  return affine(x_t, inv, eps_hat, -inv * std::sqrt(1.0 - ab), "predict_x0");
}

}  // namespace ldfuse::schedule
