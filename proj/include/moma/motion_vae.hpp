#pragma once

#include <memory>
#include <vector>

#include "moma/checkpoint.hpp"
#include "moma/motion_data.hpp"
#include "moma/nn.hpp"
#include "moma/tensor.hpp"

namespace moma {

struct VaeConfig {
  int feature_dim = 263;
  int latent_dim = 512;            // c
  int res_layers = 3;              // ResNet blocks per stage
  int down_layers = 2;             // l = 2^down_layers
  std::vector<int> widths = {512, 512};  // channels per stage
  double kl_weight = 1e-6;
  double vel_weight = 0.5;

  int downsample() const { return 1 << down_layers; }
  void validate() const;
};

struct LatentPosterior {
  Mat mu, log_var;  // N x c
};

// Anything that maps normalized motion frames to latent tokens and back.
// The trained VAE is the real implementation; the ablation harness plugs in
// an identity codec to model directly in observation space.
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual Mat encode_mean(const Mat& x_norm) const = 0;
  virtual Mat decode_values(const Mat& z) const = 0;
  virtual int downsample_factor() const = 0;
  virtual int latent_dim() const = 0;
};

constexpr double kLogVarClampLo = -30.0;
constexpr double kLogVarClampHi = 20.0;

// Frame-level continuous motion autoencoder. Encoder: input conv, then
// down_layers stages of [stride-2 conv -> res blocks], then parallel mu and
// log-var heads. Decoder mirrors with nearest-neighbour x2 upsampling.
class MotionVae : public LatentCodec {
 public:
  MotionVae(VaeConfig cfg, uint64_t seed);

  // Graph-mode passes over normalized frames (T x d, T a multiple of l after
  // internal truncation). Returns (mu, log_var), log_var clamped.
  std::pair<Tensor, Tensor> encode_t(const Tensor& x_norm) const;
  Tensor decode_t(const Tensor& z) const;

  // Value-only conveniences.
  LatentPosterior encode(const Mat& x_norm) const;
  Mat encode_mean(const Mat& x_norm) const override;
  Mat decode_values(const Mat& z) const override;
  int downsample_factor() const override { return cfg_.downsample(); }
  int latent_dim() const override { return cfg_.latent_dim; }

  Tensor nll_log_var() const { return nll_log_var_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const VaeConfig& config() const { return cfg_; }

 private:
  struct ResBlock {
    nn::Conv1d conv1, conv2;
  };
  struct EncStage {
    nn::Conv1d down;
    std::vector<ResBlock> res;
  };
  struct DecStage {
    std::vector<ResBlock> res;
    nn::Conv1d up;
  };

  Tensor res_forward(const ResBlock& b, const Tensor& x) const;

  VaeConfig cfg_;
  nn::ParamStore params_;
  nn::Conv1d enc_in_;
  std::vector<EncStage> enc_stages_;
  nn::Linear mu_head_, logvar_head_;
  nn::Linear dec_in_;
  std::vector<DecStage> dec_stages_;
  nn::Conv1d dec_out_;
  Tensor nll_log_var_;  // scalar learnable log sigma^2 of the NLL
};

// z = mu + exp(0.5*log_var) .* noise
Mat reparameterize(const LatentPosterior& p, const Mat& noise);
Tensor reparameterize_t(const Tensor& mu, const Tensor& log_var, const Mat& noise);

// Mean-per-element L1 divided by exp(log sigma^2), plus log sigma^2.
Tensor loss_nll(const Tensor& recon, const Mat& target, const Tensor& nll_log_var);
// -0.5 * mean(1 + log_var - mu^2 - exp(log_var))
Tensor loss_kl(const Tensor& mu, const Tensor& log_var);
// Mean L1 over the velocity block only.
Tensor loss_velocity(const Tensor& recon, const Mat& target, int v_lo, int v_hi);

struct VaeLossParts {
  Tensor nll, kl, velocity, total;
};
VaeLossParts vae_total_loss(const Tensor& recon, const Mat& target,
                            const Tensor& mu, const Tensor& log_var,
                            const Tensor& nll_log_var, const VaeConfig& cfg,
                            int v_lo, int v_hi);

// Checkpoint wiring. The checkpoint carries the config, the parameters and
// the normalization stats.
void save_vae_checkpoint(const MotionVae& vae, const NormStats& stats,
                         const LayoutDescriptor& layout, float fps,
                         uint64_t step, const std::string& path);
struct LoadedVae {
  std::shared_ptr<MotionVae> vae;
  NormStats stats;
  LayoutDescriptor layout;
  float fps = 20.0f;
  uint64_t step = 0;
};
LoadedVae load_vae_checkpoint(const std::string& path);

}  // namespace moma
