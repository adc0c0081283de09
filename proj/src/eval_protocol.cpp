#include "moma/eval_protocol.hpp"

#include <chrono>
#include <sstream>

namespace moma {

std::string GenerationEvalReport::to_kv() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "n_generated = " << n_generated << '\n';
  os << "r_precision.top1 = " << rp.top1.value << " +- " << rp.top1.ci_half << '\n';
  os << "r_precision.top2 = " << rp.top2.value << " +- " << rp.top2.ci_half << '\n';
  os << "r_precision.top3 = " << rp.top3.value << " +- " << rp.top3.ci_half << '\n';
  os << "fid = " << fid.value << " +- " << fid.ci_half << '\n';
  os << "mm_dist = " << mm_dist.value << " +- " << mm_dist.ci_half << '\n';
  os << "diversity = " << diversity.value << " +- " << diversity.ci_half << '\n';
  os << "real_diversity = " << real_diversity.value << " +- "
     << real_diversity.ci_half << '\n';
  os << "aitf_ms = " << aitf_ms << '\n';
  return os.str();
}

GenerationEvalReport evaluate_generation(
    const MadModels& models, const ToyEvaluator& evaluator,
    const std::vector<MotionSequence>& test_seqs,
    const std::vector<std::string>& test_captions, const InferenceParams& params,
    const GenerationEvalOptions& opts) {
  MOMA_CHECK(test_seqs.size() == test_captions.size() && !test_seqs.empty(),
             "evaluate_generation: bad test set");
  const int n = opts.n_prompts > 0
                    ? std::min<int>(opts.n_prompts,
                                    static_cast<int>(test_seqs.size()))
                    : static_cast<int>(test_seqs.size());

  std::vector<MotionSequence> generated;
  std::vector<std::string> prompts;
  generated.reserve(static_cast<size_t>(n));
  long total_frames = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < n; ++i) {
    InferenceParams p = params;
    p.target_frames = static_cast<int>(test_seqs[static_cast<size_t>(i)].length());
    p.seed = derive_stream(opts.seed, "gen-item", static_cast<uint64_t>(i))
                 .next_u64();
    MotionSequence m =
        generate(test_captions[static_cast<size_t>(i)], p, std::nullopt, models);
    total_frames += m.length();
    generated.push_back(std::move(m));
    prompts.push_back(test_captions[static_cast<size_t>(i)]);
  }
  const auto t1 = std::chrono::steady_clock::now();

  const Mat gen_feats = evaluator.motion_features(generated);
  const Mat real_feats = evaluator.motion_features(test_seqs);
  const Mat text_feats = evaluator.text_features(prompts);

  GenerationEvalReport report;
  report.n_generated = n;
  report.aitf_ms =
      std::chrono::duration<double, std::milli>(t1 - t0).count() /
      static_cast<double>(std::max<long>(1, total_frames));
  RngStream rng = derive_stream(opts.seed, "eval-metrics");
  report.fid = fid_summary(gen_feats, real_feats, opts.reps, rng);
  report.mm_dist.value = mm_dist(gen_feats, text_feats);
  if (gen_feats.rows() >= opts.rp_pool)
    report.rp = r_precision_summary(gen_feats, text_feats, opts.rp_pool,
                                    opts.reps, rng);
  report.diversity =
      diversity_summary(gen_feats, opts.div_pairs, opts.reps, rng);
  report.real_diversity =
      diversity_summary(real_feats, opts.div_pairs, opts.reps, rng);
  return report;
}

std::vector<MotionSequence> make_noise_motions(
    const std::vector<MotionSequence>& like, const NormStats& stats,
    uint64_t seed) {
  std::vector<MotionSequence> out;
  out.reserve(like.size());
  for (size_t i = 0; i < like.size(); ++i) {
    RngStream rng = derive_stream(seed, "noise-motion", i);
    Mat norm(like[i].length(), like[i].dim());
    for (long r = 0; r < norm.rows(); ++r)
      for (long c = 0; c < norm.cols(); ++c) norm(r, c) = rng.normal();
    MotionSequence m = like[i];
    m.frames = denormalize_frames(norm, stats).cast<float>();
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace moma
