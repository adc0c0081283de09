#include "moma/noise_process.hpp"

#include <cmath>
#include <thread>

namespace moma {

void NoiseSchedule::validate() const {
  MOMA_CHECK(t_diff >= 1, "schedule: t_diff must be >= 1");
  MOMA_CHECK(beta.size() == t_diff && alpha.size() == t_diff &&
                 alpha_bar.size() == t_diff,
             "schedule: array lengths");
  double prev = 1.0;
  for (int t = 0; t < t_diff; ++t) {
    MOMA_CHECK(beta(t) > 0.0 && beta(t) < 1.0, "schedule: beta out of (0,1)");
    MOMA_CHECK(alpha_bar(t) < prev, "schedule: alpha_bar not strictly decreasing");
    prev = alpha_bar(t);
  }
}

NoiseSchedule make_schedule(int t_diff, ScheduleKind kind) {
  MOMA_CHECK(t_diff >= 1, "make_schedule: t_diff must be >= 1");
  MOMA_CHECK(kind == ScheduleKind::kCosine, "make_schedule: unknown kind");
  constexpr double s = 0.008;
  auto f = [&](double u) {
    const double v = std::cos((u + s) / (1.0 + s) * M_PI / 2.0);
    return v * v;
  };
  const double f0 = f(0.0);

  NoiseSchedule sched;
  sched.t_diff = t_diff;
  sched.kind = kind;
  sched.beta.resize(t_diff);
  sched.alpha.resize(t_diff);
  sched.alpha_bar.resize(t_diff);
  double ab_prev = 1.0;
  double ab_running = 1.0;
  for (int t = 0; t < t_diff; ++t) {
    const double ab_raw =
        f(static_cast<double>(t + 1) / static_cast<double>(t_diff)) / f0;
    double beta = 1.0 - ab_raw / ab_prev;
    ab_prev = ab_raw;
    beta = std::min(beta, 0.999);
    sched.beta(t) = beta;
    sched.alpha(t) = 1.0 - beta;
    ab_running *= sched.alpha(t);
    sched.alpha_bar(t) = ab_running;
  }
  sched.validate();
  return sched;
}

Mat q_sample(const Mat& z0, int t, const Mat& eps, const NoiseSchedule& sched) {
  MOMA_CHECK(t >= 0 && t < sched.t_diff, "q_sample: t out of range");
  MOMA_CHECK(z0.rows() == eps.rows() && z0.cols() == eps.cols(),
             "q_sample: shape mismatch");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

double ddpm_sigma_sq(int t, const NoiseSchedule& sched) {
  MOMA_CHECK(t >= 1 && t < sched.t_diff, "ddpm_sigma_sq: t out of range");
  const double ab_t = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar_at(t - 1);
  return sched.beta(t) * (1.0 - ab_prev) / (1.0 - ab_t);
}

Mat ddpm_step(const Mat& z_t, int t, const Mat& zhat0, const Mat& noise,
              const NoiseSchedule& sched) {
  MOMA_CHECK(t >= 0 && t < sched.t_diff, "ddpm_step: t out of range");
  if (t == 0) return zhat0;
  const double ab_t = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar_at(t - 1);
  const double beta_t = sched.beta(t);
  const double alpha_t = sched.alpha(t);
  const double c0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab_t);
  const double ct = std::sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t);
  const double sigma = std::sqrt(ddpm_sigma_sq(t, sched));
  return c0 * zhat0 + ct * z_t + sigma * noise;
}

double ddim_sigma(int t, int t_prev, const NoiseSchedule& sched, double eta) {
  const double ab_t = sched.alpha_bar_at(t);
  const double ab_prev = sched.alpha_bar_at(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) *
         std::sqrt(1.0 - ab_t / ab_prev);
}

Mat ddim_step(const Mat& z_t, int t, int t_prev, const Mat& zhat0,
              const NoiseSchedule& sched, double eta, const Mat& noise) {
  MOMA_CHECK(t >= 0 && t < sched.t_diff, "ddim_step: t out of range");
  MOMA_CHECK(t_prev < t && t_prev >= -1, "ddim_step: t_prev must be < t");
  const double ab_t = sched.alpha_bar_at(t);
  const double ab_prev = sched.alpha_bar_at(t_prev);
  const double sigma = ddim_sigma(t, t_prev, sched, eta);
  const Mat dir = (z_t - std::sqrt(ab_t) * zhat0) / std::sqrt(1.0 - ab_t);
  Mat out = std::sqrt(ab_prev) * zhat0 +
            std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma)) * dir;
  if (sigma > 0.0) out += sigma * noise;
  return out;
}

std::vector<int> ddim_timesteps(int t_diff, int t_i) {
  MOMA_CHECK(t_i >= 1 && t_i <= t_diff, "ddim_timesteps: bad step count");
  std::vector<int> ts(t_i);
  for (int i = 0; i < t_i; ++i)
    ts[i] = static_cast<int>(
        (static_cast<long>(i) * t_diff) / static_cast<long>(t_i));
  return ts;
}

namespace {

Mat draw_noise(uint64_t seed, std::string_view tag, int position, int step,
               long cols) {
  RngStream rng = derive_stream(seed, tag, static_cast<uint64_t>(position),
                                static_cast<uint64_t>(step));
  Mat m(1, cols);
  for (long c = 0; c < cols; ++c) m(0, c) = rng.normal();
  return m;
}

Mat sample_rows(const Mat& cond, int latent_dim, const SamplerParams& params,
                const NoiseSchedule& sched, const DenoiseFn& denoise,
                const std::vector<int>& position_ids) {
  const long rows = cond.rows();
  Mat z(rows, latent_dim);
  for (long r = 0; r < rows; ++r)
    z.row(r) = draw_noise(params.seed, "noise-init", position_ids[r], 0,
                          latent_dim);

  if (params.sampler == SamplerKind::kDdpm) {
    for (int t = sched.t_diff - 1; t >= 0; --t) {
      const Mat zhat0 = denoise(z, t, cond);
      if (t == 0) {
        z = zhat0;
        break;
      }
      Mat noise(rows, latent_dim);
      for (long r = 0; r < rows; ++r)
        noise.row(r) =
            draw_noise(params.seed, "noise-step", position_ids[r], t, latent_dim);
      z = ddpm_step(z, t, zhat0, noise, sched);
    }
    return z;
  }

  const int t_i = params.inference_steps > 0
                      ? std::min(params.inference_steps, sched.t_diff)
                      : sched.t_diff;
  const std::vector<int> ts = ddim_timesteps(sched.t_diff, t_i);
  for (int k = static_cast<int>(ts.size()) - 1; k >= 0; --k) {
    const int t = ts[k];
    const int t_prev = k > 0 ? ts[k - 1] : -1;
    const Mat zhat0 = denoise(z, t, cond);
    Mat noise = Mat::Zero(rows, latent_dim);
    if (params.eta > 0.0) {
      for (long r = 0; r < rows; ++r)
        noise.row(r) =
            draw_noise(params.seed, "noise-step", position_ids[r], t, latent_dim);
    }
    z = ddim_step(z, t, t_prev, zhat0, sched, params.eta, noise);
  }
  return z;
}

}  // namespace

Mat sample_tokens(const Mat& cond, int latent_dim, const SamplerParams& params,
                  const NoiseSchedule& sched, const DenoiseFn& denoise,
                  const std::vector<int>& position_ids) {
  MOMA_CHECK(cond.rows() >= 1, "sample_tokens: empty masked set");
  MOMA_CHECK(static_cast<long>(position_ids.size()) == cond.rows(),
             "sample_tokens: position id count mismatch");
  const int threads = std::max(1, params.threads);
  if (threads == 1 || cond.rows() == 1)
    return sample_rows(cond, latent_dim, params, sched, denoise, position_ids);

  // Chunked rows, one chain per thread. Per-(position, step) RNG streams and
  // row-looped tensor ops make this bit-identical to the sequential path.
  const long rows = cond.rows();
  const long n_chunks = std::min<long>(threads, rows);
  Mat out(rows, latent_dim);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(n_chunks);
  const long base = rows / n_chunks, extra = rows % n_chunks;
  long start = 0;
  for (long i = 0; i < n_chunks; ++i) {
    const long len = base + (i < extra ? 1 : 0);
    pool.emplace_back([&, i, start, len] {
      try {
        std::vector<int> ids(position_ids.begin() + start,
                             position_ids.begin() + start + len);
        out.middleRows(start, len) = sample_rows(
            cond.middleRows(start, len), latent_dim, params, sched, denoise, ids);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
    start += len;
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace moma
