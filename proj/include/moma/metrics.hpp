#pragma once

#include <memory>
#include <string>
#include <vector>

#include "moma/motion_data.hpp"
#include "moma/nn.hpp"
#include "moma/text_encoder.hpp"

namespace moma {

enum class FeatureOrigin { kMotion, kText };

struct FeatureSet {
  Mat vectors;  // M x f
  FeatureOrigin origin = FeatureOrigin::kMotion;
};

// Frechet distance between Gaussian fits of the two feature sets. The matrix
// square root uses a symmetric eigendecomposition of A^(1/2) B A^(1/2);
// small negative eigenvalues are clipped to zero.
double fid(const Mat& a, const Mat& b);

// Mean Euclidean distance over `pairs` sampled index pairs (i != j, the two
// ends drawn without replacement within each pair).
double diversity(const Mat& a, int pairs, RngStream& rng);

// Mean Euclidean distance between paired motion and text features.
double mm_dist(const Mat& motion, const Mat& text);

struct RPrecision {
  double top1 = 0, top2 = 0, top3 = 0;
};

// For each motion: its true text plus pool-1 distinct distractor texts from
// other items, ranked by Euclidean distance.
RPrecision r_precision(const Mat& motion, const Mat& text, int pool,
                       RngStream& rng);

// Joint arrays are T x (J*3). mpjpe is the raw mean per-joint error;
// pa_mpjpe applies a per-frame similarity Procrustes alignment first.
double mpjpe(const Mat& pred, const Mat& gt);
double pa_mpjpe(const Mat& pred, const Mat& gt);
// Mean norm of the difference of second temporal finite differences.
double accl(const Mat& pred, const Mat& gt);

// ---- toy contrastive text-motion evaluator ----

struct EvaluatorConfig {
  int feature_dim = 64;  // f; features are unit-norm scaled by sqrt(f)
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int text_dim = 48;
  int max_len = 200;
  int ffn_mult = 2;
  double lr = 1e-3;
  long iterations = 1500;
  uint64_t seed = 0;
  long log_every = 0;
};

// Small attention sequence encoder + toy text encoder trained with a
// symmetric contrastive objective into a shared feature space.
class ToyEvaluator {
 public:
  ToyEvaluator(EvaluatorConfig cfg, int motion_dim,
               std::vector<std::string> templates, NormStats stats,
               uint64_t seed);

  // Graph-mode single-item features (1 x f), unit-norm scaled by sqrt(f).
  Tensor motion_features_t(const Mat& frames_norm) const;
  Tensor text_features_t(const std::string& caption) const;

  // Batch value-mode features.
  Mat motion_features(const std::vector<MotionSequence>& seqs) const;
  Mat text_features(const std::vector<std::string>& captions) const;

  const EvaluatorConfig& config() const { return cfg_; }
  const NormStats& stats() const { return stats_; }
  int motion_dim() const { return motion_dim_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  ToyTextEncoder& text_encoder() { return *text_enc_; }
  Tensor logit_scale() const { return logit_scale_; }

 private:
  EvaluatorConfig cfg_;
  int motion_dim_;
  NormStats stats_;
  nn::ParamStore params_;
  nn::Linear in_proj_;
  Tensor pos_table_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::Linear out_proj_;
  std::shared_ptr<ToyTextEncoder> text_enc_;
  nn::Linear text_fc1_, text_fc2_;
  Tensor logit_scale_;
};

// Trains the evaluator on a labeled corpus with batches of one item per
// distinct caption (symmetric InfoNCE over cosine logits).
std::shared_ptr<ToyEvaluator> train_toy_evaluator(
    const std::vector<MotionSequence>& corpus,
    const std::vector<std::string>& captions, const EvaluatorConfig& cfg);

void save_evaluator_checkpoint(const ToyEvaluator& ev, uint64_t step,
                               const std::string& path);
std::shared_ptr<ToyEvaluator> load_evaluator_checkpoint(const std::string& path);

// ---- repeated-run summaries (value +/- 95% half-width) ----

struct MetricSummary {
  double value = 0, ci_half = 0;
};

// FID on the full sets; CI from bootstrap resampling of both feature sets.
MetricSummary fid_summary(const Mat& a, const Mat& b, int reps, RngStream& rng);
// Mean and CI over repeated runs with fresh sampling RNG.
MetricSummary diversity_summary(const Mat& a, int pairs, int reps, RngStream& rng);
struct RPrecisionSummary {
  MetricSummary top1, top2, top3;
};
RPrecisionSummary r_precision_summary(const Mat& motion, const Mat& text,
                                      int pool, int reps, RngStream& rng);

}  // namespace moma
