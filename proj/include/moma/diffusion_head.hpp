#pragma once

#include <vector>

#include "moma/nn.hpp"
#include "moma/noise_process.hpp"
#include "moma/tensor.hpp"

namespace moma {

struct HeadConfig {
  int blocks = 4;
  int latent_dim = 512;        // c
  int cond_dim = 512;
  int width = 0;               // 0 means 4 * latent_dim
  int timestep_embed_dim = 64;
  bool squared_loss = true;    // mean squared error; false = mean L2 norm

  int effective_width() const { return width > 0 ? width : 4 * latent_dim; }
  void validate() const;
};

// Per-position MLP denoiser predicting the clean latent z0 from (z_t, t, c).
// Each block: LayerNorm (no affine) modulated by scale/shift predicted from
// the fused timestep + condition vector, a linear-SiLU-linear MLP, and a
// gated residual add. No attention; positions never interact.
class DiffusionHead {
 public:
  DiffusionHead(HeadConfig cfg, uint64_t seed);

  // z_t is rows x c, t has one step index per row, cond is rows x cond_dim.
  Tensor forward(const Tensor& z_t, const std::vector<int>& t,
                 const Tensor& cond) const;
  // Value-only path; all rows share step t.
  Mat denoise(const Mat& z_t, int t, const Mat& cond) const;

  // Sinusoidal features of t followed by the learned two-layer projection.
  // Output dimension equals timestep_embed_dim.
  Tensor timestep_embed(const std::vector<int>& t) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const HeadConfig& config() const { return cfg_; }
  int max_timestep() const { return max_timestep_; }
  void set_max_timestep(int t) { max_timestep_ = t; }

 private:
  struct Block {
    nn::Linear ada;       // ted -> 2*width (scale, shift)
    nn::Linear fc1, fc2;  // width -> width
    Tensor gate;          // 1 x width
  };

  HeadConfig cfg_;
  int max_timestep_ = 1000;
  nn::ParamStore params_;
  nn::Linear t_proj1_, t_proj2_;  // ted -> ted, two-layer projection
  nn::Linear cond_proj_;          // cond_dim -> ted
  nn::Linear in_proj_;            // c -> width
  std::vector<Block> blocks_;
  nn::Linear out_proj_;           // width -> c
};

// Eq.-style joint diffusion loss at masked positions: noise z0 with
// per-position steps, predict z0 with the head conditioned on the
// transformer's condition tokens, and average the error over masked
// positions and channels only. Gradients flow into both networks.
Tensor diffusion_loss(const Mat& z0_masked, const std::vector<int>& t,
                      const Mat& eps, const Tensor& cond_masked,
                      const DiffusionHead& head, const NoiseSchedule& sched);

}  // namespace moma
