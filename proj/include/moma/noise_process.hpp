#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "moma/rng.hpp"
#include "moma/tensor.hpp"

namespace moma {

enum class ScheduleKind { kCosine };

// Forward-diffusion schedule. beta is derived from the cosine alpha-bar
// curve and alpha_bar is recomputed from the clipped betas, so the identity
// beta_t = 1 - alpha_bar_t / alpha_bar_{t-1} holds exactly.
struct NoiseSchedule {
  int t_diff = 0;
  ScheduleKind kind = ScheduleKind::kCosine;
  Eigen::VectorXd beta, alpha, alpha_bar;

  // alpha_bar at step t, with t == -1 meaning the clean end (exactly 1).
  double alpha_bar_at(int t) const {
    MOMA_CHECK(t >= -1 && t < t_diff, "schedule: step out of range");
    return t < 0 ? 1.0 : alpha_bar(t);
  }
  void validate() const;
};

NoiseSchedule make_schedule(int t_diff, ScheduleKind kind = ScheduleKind::kCosine);

enum class SamplerKind { kDdpm, kDdim };

struct SamplerParams {
  SamplerKind sampler = SamplerKind::kDdpm;
  int inference_steps = 0;  // 0 means all t_diff steps
  double eta = 0.0;         // DDIM stochasticity
  uint64_t seed = 0;
  int threads = 1;
};

// sqrt(alpha_bar_t)*z0 + sqrt(1-alpha_bar_t)*eps
Mat q_sample(const Mat& z0, int t, const Mat& eps, const NoiseSchedule& sched);

// One DDPM ancestral step given the x0 prediction; t == 0 returns zhat0.
Mat ddpm_step(const Mat& z_t, int t, const Mat& zhat0, const Mat& noise,
              const NoiseSchedule& sched);
double ddpm_sigma_sq(int t, const NoiseSchedule& sched);

// One DDIM step from t to t_prev (t_prev < t, -1 allowed as terminal).
Mat ddim_step(const Mat& z_t, int t, int t_prev, const Mat& zhat0,
              const NoiseSchedule& sched, double eta, const Mat& noise);
double ddim_sigma(int t, int t_prev, const NoiseSchedule& sched, double eta);

// Ascending step subsequence for DDIM: t_i uniformly spaced over [0, t_diff),
// always containing 0.
std::vector<int> ddim_timesteps(int t_diff, int t_i);

// x0-predicting denoiser: (z_t rows x c, t, cond rows x c_cond) -> zhat0.
using DenoiseFn =
    std::function<Mat(const Mat& z_t, int t, const Mat& cond)>;

// Runs the chosen sampler for every row of `cond` in lockstep, starting from
// pure noise. Per-row RNG streams are keyed by (seed, position_id, step), so
// results do not depend on which other positions are in the batch, and the
// multithreaded path is bit-identical to the sequential one.
Mat sample_tokens(const Mat& cond, int latent_dim, const SamplerParams& params,
                  const NoiseSchedule& sched, const DenoiseFn& denoise,
                  const std::vector<int>& position_ids);

}  // namespace moma
