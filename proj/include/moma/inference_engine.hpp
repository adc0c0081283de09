#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "moma/diffusion_head.hpp"
#include "moma/latent_transformer.hpp"
#include "moma/motion_data.hpp"
#include "moma/motion_vae.hpp"
#include "moma/noise_process.hpp"
#include "moma/text_encoder.hpp"

namespace moma {

enum class InferenceMode { kKeyframe, kLinear, kBilinear };

InferenceMode parse_inference_mode(const std::string& s);
std::string inference_mode_name(InferenceMode m);

struct InferenceParams {
  int steps = 9;            // R, autoregressive step count
  double cfg_scale = 3.0;   // s_c
  InferenceMode mode = InferenceMode::kKeyframe;
  SamplerParams sampler;
  int target_frames = 196;
  uint64_t seed = 0;

  void validate() const;
};

struct KeyframeSet {
  std::map<int, Eigen::VectorXd> entries;  // frame index -> pose (d, raw space)
};

KeyframeSet load_keyframes(const std::string& path, int expected_dim);
void save_keyframes(const KeyframeSet& kf, const std::string& path);

struct GenerationState {
  Mat latents;  // N x c
  std::vector<bool> resolved;
  std::vector<bool> pinned;

  long size() const { return latents.rows(); }
  long unresolved_count() const;
  MaskFlags mask() const;  // masked = !resolved
};

// Masking-ratio schedulers. Endpoints are exact: ratio(mode, 0, R) = 1 and
// ratio(mode, R, R) = 0.
double mask_ratio(InferenceMode mode, int i, int R);

// Positions to resolve at step i. Resolves
// unresolved_count - ceil(mask_ratio(mode, i+1, R) * N) positions (at least
// one while any remain), never touching resolved or pinned ones.
std::vector<int> select_positions(InferenceMode mode, int i, int R,
                                  const GenerationState& state, RngStream& rng);

// Everything generation needs, bundled.
struct MadModels {
  std::shared_ptr<LatentCodec> codec;
  std::shared_ptr<LatentTransformer> transformer;
  std::shared_ptr<DiffusionHead> head;  // null when regression_head
  std::shared_ptr<TextEncoderBase> text;
  NoiseSchedule schedule;
  NormStats stats;
  LayoutDescriptor layout;
  float fps = 20.0f;
  // Ablation variant: the transformer's condition tokens are taken directly
  // as predicted latents; no diffusion head runs.
  bool regression_head = false;
};

// Encodes each keyframe pose (replicated across its l-frame window) through
// the codec mean and pins the corresponding latent position.
void inject_keyframes(GenerationState& state, const KeyframeSet& kf,
                      const MadModels& models, int target_frames);

// Text-to-motion generation, optionally guided by user keyframes.
MotionSequence generate(const std::string& text, const InferenceParams& params,
                        const std::optional<KeyframeSet>& keyframes,
                        const MadModels& models);

// Regenerates the non-preserved parts of `source`. preserve has one flag per
// frame and must be constant within each l-frame window.
MotionSequence edit(const MotionSequence& source,
                    const std::vector<bool>& preserve, const std::string& text,
                    const InferenceParams& params, const MadModels& models);

// Joins two clips by generating transition frames between the tail of A and
// the head of B. transition_frames and context_frames must be multiples of l.
MotionSequence stitch(const MotionSequence& clip_a, const MotionSequence& clip_b,
                      int transition_frames, int context_frames,
                      const std::string& text, const InferenceParams& params,
                      const MadModels& models);

// The generation loop on an explicit state; returns the final latents.
// Exposed for tests that assert pinning and partition invariants.
Mat run_generation_loop(GenerationState& state, const std::string& text,
                        const InferenceParams& params, const MadModels& models);

}  // namespace moma
