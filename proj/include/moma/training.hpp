#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "moma/diffusion_head.hpp"
#include "moma/inference_engine.hpp"
#include "moma/latent_transformer.hpp"
#include "moma/motion_data.hpp"
#include "moma/motion_vae.hpp"
#include "moma/text_encoder.hpp"

namespace moma {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 64;
  long iterations = 0;  // 0: derived from epochs and the dataset size
  long epochs = 0;
  long warmup_iters = 0;
  long decay_epoch = 0;  // 0: no decay
  double decay_factor = 0.1;
  double ema_decay = 0.999;
  bool use_ema = false;
  double cond_dropout = 0.1;
  uint64_t seed = 0;
  long log_every = 0;  // 0: silent

  long resolve_iterations(long dataset_size) const;
  double lr_at(long iter, long iters_per_epoch) const;
};

// Training-time masking: ratio r = cos(pi/2 * u) with u ~ U(0,1), then
// ceil(r*N) positions masked uniformly without replacement, at least one.
MaskFlags sample_train_mask(long n, RngStream& rng);

// ---- stage 1: VAE ----

// One optimizer step over a batch of normalized frame matrices. Returns the
// batch-mean total loss.
double vae_train_step(MotionVae& vae, const std::vector<Mat>& batch_norm,
                      int v_lo, int v_hi, nn::AdamOptimizer& opt, double lr,
                      RngStream& rng);

struct VaeTrainResult {
  std::shared_ptr<MotionVae> vae;
  NormStats stats;
  std::vector<double> loss_history;
};

VaeTrainResult train_vae(const std::vector<MotionSequence>& corpus,
                         const VaeConfig& vae_cfg, const TrainConfig& cfg,
                         const LayoutDescriptor& layout);

// ---- latent cache (stage 2 trains on VAE posteriors) ----

struct LatentCacheEntry {
  Mat mu, log_var;  // N x c
  std::string caption;
};

struct LatentCache {
  std::vector<LatentCacheEntry> entries;

  void save(const std::string& path) const;
  static LatentCache load(const std::string& path);
};

LatentCache latent_cache_build(const std::vector<MotionSequence>& corpus,
                               const std::vector<std::string>& captions,
                               const MotionVae& vae, const NormStats& stats);
// Identity-codec variant: mu = normalized frames, log_var pinned very low so
// fresh draws reproduce the frames.
LatentCache latent_cache_build_identity(const std::vector<MotionSequence>& corpus,
                                        const std::vector<std::string>& captions,
                                        const NormStats& stats, int max_positions);

// ---- stage 2: masked autoregressive diffusion ----

struct MadModel {
  TransformerConfig tcfg;
  HeadConfig hcfg;
  std::shared_ptr<LatentTransformer> transformer;
  std::shared_ptr<DiffusionHead> head;   // null when regression_head
  std::shared_ptr<ToyTextEncoder> text;  // trainable toy encoder
  NoiseSchedule schedule;
  bool regression_head = false;

  std::vector<NodePtr> trainable_params() const;
  std::vector<std::pair<std::string, NodePtr>> named_params() const;
};

MadModel make_mad_model(const TransformerConfig& tcfg, const HeadConfig& hcfg,
                        int t_diff, std::vector<std::string> text_templates,
                        uint64_t seed, bool regression_head = false);

// One joint optimizer step over cached latent sequences. Per item: fresh
// posterior sample, random mask, condition dropout, transformer forward,
// per-masked-position uniform t, diffusion loss, shared backward.
double mad_train_step(MadModel& model, const LatentCache& cache,
                      const std::vector<int>& batch, nn::AdamOptimizer& opt,
                      double lr, nn::EmaState* ema, RngStream& rng,
                      double cond_dropout);

struct MadTrainResult {
  MadModel model;
  nn::EmaState ema;
  std::vector<double> loss_history;
};

MadTrainResult train_mad(const LatentCache& cache, const TransformerConfig& tcfg,
                         const HeadConfig& hcfg, int t_diff,
                         std::vector<std::string> text_templates,
                         const TrainConfig& cfg, bool regression_head = false);

// shadow <- decay*shadow + (1-decay)*param for every parameter.
void ema_update(const std::vector<NodePtr>& params, nn::EmaState& ema);

// ---- checkpointing ----

void save_mad_checkpoint(const MadModel& model, const nn::EmaState* ema,
                         uint64_t step, const std::string& path);
struct LoadedMad {
  MadModel model;
  uint64_t step = 0;
  bool has_ema = false;
};
// use_ema_weights: overwrite parameters with the stored EMA shadow (the
// weights used for evaluation and inference).
LoadedMad load_mad_checkpoint(const std::string& path, bool use_ema_weights);

}  // namespace moma
