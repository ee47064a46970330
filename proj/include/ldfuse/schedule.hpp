#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "ldfuse/tensor.hpp"

namespace ldfuse::schedule {

// Per-timestep diffusion constants for t = 1..T (stored at index t-1).
//   beta      noise variance added at step t, beta = 1 - alpha
//   alpha_bar cumulative product of alpha up to t
//   sigma2    reverse-step variance (1 - abar[t-1]) / (1 - abar[t]) * beta[t],
//             with abar[0] = 1 so that sigma2 at t = 1 is 0
class ScheduleTable {
 public:
  ScheduleTable() = default;
  ScheduleTable(std::vector<double> beta);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bar_[index(t)]; }
  double sigma2(int t) const { return sigma2_[index(t)]; }

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alphas() const { return alpha_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }
  const std::vector<double>& sigma2s() const { return sigma2_; }

 private:
  std::size_t index(int t) const;

  std::vector<double> beta_, alpha_, alpha_bar_, sigma2_;
};

ScheduleTable make_linear_schedule(int steps, double beta_start, double beta_end);

nlohmann::json to_json(const ScheduleTable& table);
ScheduleTable schedule_from_json(const nlohmann::json& j);

struct NoisySample {
  Tensor x;
  int t = 0;
  Tensor noise;
};

// One Markov step: sqrt(alpha_t) x_prev + sqrt(1 - alpha_t) noise.
Tensor forward_step(const ScheduleTable& table, const Tensor& x_prev, int t, const Tensor& noise);

// Closed form: sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
NoisySample forward_marginal(const ScheduleTable& table, const Tensor& x0, int t,
                             const Tensor& noise);

// (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t)
Tensor posterior_mean(const ScheduleTable& table, const Tensor& x_t, int t, const Tensor& eps_hat);

// posterior_mean + sigma_t z; z is ignored at t = 1.
Tensor reverse_step(const ScheduleTable& table, const Tensor& x_t, int t, const Tensor& eps_hat,
                    const Tensor& z);

// (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
Tensor predict_x0(const ScheduleTable& table, const Tensor& x_t, int t, const Tensor& eps_hat);

}  // namespace ldfuse::schedule
