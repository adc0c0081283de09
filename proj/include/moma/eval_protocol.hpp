#pragma once

#include <string>
#include <vector>

#include "moma/inference_engine.hpp"
#include "moma/metrics.hpp"

namespace moma {

struct GenerationEvalOptions {
  int n_prompts = 0;  // 0 = one generation per test item
  int reps = 20;
  int rp_pool = 32;
  int div_pairs = 300;
  uint64_t seed = 0;
};

struct GenerationEvalReport {
  MetricSummary fid, mm_dist, diversity, real_diversity;
  RPrecisionSummary rp;
  double aitf_ms = 0;  // average inference time per generated frame
  int n_generated = 0;

  std::string to_kv() const;
};

// Generates one motion per selected test caption (target length = the test
// item's length) and scores the batch against the real test set in the
// evaluator's feature space.
GenerationEvalReport evaluate_generation(
    const MadModels& models, const ToyEvaluator& evaluator,
    const std::vector<MotionSequence>& test_seqs,
    const std::vector<std::string>& test_captions, const InferenceParams& params,
    const GenerationEvalOptions& opts);

// Gaussian junk motions matching the test sequences' shapes, drawn in
// normalized space around the given stats. Baseline for FID sanity gaps.
std::vector<MotionSequence> make_noise_motions(
    const std::vector<MotionSequence>& like, const NormStats& stats,
    uint64_t seed);

}  // namespace moma
