#include "moma/inference_engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace moma {

InferenceMode parse_inference_mode(const std::string& s) {
  if (s == "keyframe") return InferenceMode::kKeyframe;
  if (s == "linear") return InferenceMode::kLinear;
  if (s == "bilinear") return InferenceMode::kBilinear;
  throw Error("unknown inference mode: " + s);
}

std::string inference_mode_name(InferenceMode m) {
  switch (m) {
    case InferenceMode::kKeyframe: return "keyframe";
    case InferenceMode::kLinear: return "linear";
    case InferenceMode::kBilinear: return "bilinear";
  }
  return "?";
}

void InferenceParams::validate() const {
  MOMA_CHECK(steps >= 1, "inference: R must be >= 1");
  MOMA_CHECK(target_frames >= 1, "inference: target_frames must be >= 1");
}

KeyframeSet load_keyframes(const std::string& path, int expected_dim) {
  std::ifstream is(path);
  MOMA_CHECK(is.good(), "keyframes: cannot open " + path);
  KeyframeSet kf;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    MOMA_CHECK(tab != std::string::npos,
               "keyframes: missing tab in line: " + line);
    const int idx = std::stoi(line.substr(0, tab));
    std::istringstream vals(line.substr(tab + 1));
    std::vector<double> v;
    double x;
    while (vals >> x) v.push_back(x);
    MOMA_CHECK(static_cast<int>(v.size()) == expected_dim,
               "keyframes: pose width mismatch at frame " + std::to_string(idx));
    Eigen::VectorXd pose(expected_dim);
    for (int i = 0; i < expected_dim; ++i) pose(i) = v[i];
    MOMA_CHECK(!kf.entries.count(idx),
               "keyframes: duplicate frame index " + std::to_string(idx));
    kf.entries[idx] = std::move(pose);
  }
  return kf;
}

void save_keyframes(const KeyframeSet& kf, const std::string& path) {
  std::ofstream os(path);
  MOMA_CHECK(os.good(), "keyframes: cannot open " + path);
  os.precision(17);
  for (const auto& [idx, pose] : kf.entries) {
    os << idx << '\t';
    for (long i = 0; i < pose.size(); ++i) {
      if (i) os << ' ';
      os << pose(i);
    }
    os << '\n';
  }
}

long GenerationState::unresolved_count() const {
  long n = 0;
  for (bool r : resolved) n += r ? 0 : 1;
  return n;
}

MaskFlags GenerationState::mask() const {
  MaskFlags m;
  m.flags.resize(resolved.size());
  for (size_t i = 0; i < resolved.size(); ++i) m.flags[i] = !resolved[i];
  return m;
}

double mask_ratio(InferenceMode mode, int i, int R) {
  MOMA_CHECK(R >= 1 && i >= 0 && i <= R, "mask_ratio: need 0 <= i <= R");
  if (i == 0) return 1.0;
  if (i == R) return 0.0;
  const double frac = static_cast<double>(i) / static_cast<double>(R);
  if (mode == InferenceMode::kKeyframe)
    return std::cos(M_PI / 2.0 * frac);
  return 1.0 - frac;
}

std::vector<int> select_positions(InferenceMode mode, int i, int R,
                                  const GenerationState& state, RngStream& rng) {
  MOMA_CHECK(i >= 0 && i < R, "select_positions: need i < R");
  const long n_total = state.size();
  std::vector<int> unresolved;
  for (long p = 0; p < n_total; ++p)
    if (!state.resolved[static_cast<size_t>(p)])
      unresolved.push_back(static_cast<int>(p));
  if (unresolved.empty()) return {};

  const long keep = static_cast<long>(
      std::ceil(mask_ratio(mode, i + 1, R) * static_cast<double>(n_total)));
  long count = static_cast<long>(unresolved.size()) - keep;
  count = std::max<long>(count, 1);
  count = std::min<long>(count, static_cast<long>(unresolved.size()));

  std::vector<int> picked;
  picked.reserve(count);
  switch (mode) {
    case InferenceMode::kKeyframe: {
      std::vector<int> sub = rng.sample_without_replacement(
          static_cast<int>(unresolved.size()), static_cast<int>(count));
      for (int s : sub) picked.push_back(unresolved[static_cast<size_t>(s)]);
      break;
    }
    case InferenceMode::kLinear: {
      for (long k = 0; k < count; ++k)
        picked.push_back(unresolved[static_cast<size_t>(k)]);
      break;
    }
    case InferenceMode::kBilinear: {
      // Alternate lowest / highest, progressing inward from both ends.
      long lo = 0, hi = static_cast<long>(unresolved.size()) - 1;
      for (long k = 0; k < count; ++k) {
        if (k % 2 == 0)
          picked.push_back(unresolved[static_cast<size_t>(lo++)]);
        else
          picked.push_back(unresolved[static_cast<size_t>(hi--)]);
      }
      break;
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

void inject_keyframes(GenerationState& state, const KeyframeSet& kf,
                      const MadModels& models, int target_frames) {
  const int l = models.codec->downsample_factor();
  const long n = state.size();
  for (const auto& [idx, pose] : kf.entries) {
    MOMA_CHECK(idx >= 0 && idx < target_frames,
               "keyframes: frame index " + std::to_string(idx) +
                   " outside [0, target_frames)");
    MOMA_CHECK(pose.size() == models.layout.d, "keyframes: pose width mismatch");
    const long p = idx / l;
    MOMA_CHECK(p < n, "keyframes: frame index " + std::to_string(idx) +
                          " falls in the truncated tail");
    MOMA_CHECK(!state.pinned[static_cast<size_t>(p)],
               "keyframes: two keyframes map to latent position " +
                   std::to_string(p));
    // Replicate the pose over the l-frame window, then encode its mean.
    Mat window = pose.transpose().replicate(l, 1);
    Mat z = models.codec->encode_mean(normalize_frames(window, models.stats));
    MOMA_CHECK(z.rows() == 1, "keyframes: window encoded to more than one token");
    state.latents.row(p) = z.row(0);
    state.resolved[static_cast<size_t>(p)] = true;
    state.pinned[static_cast<size_t>(p)] = true;
  }
}

Mat run_generation_loop(GenerationState& state, const std::string& text,
                        const InferenceParams& params, const MadModels& models) {
  params.validate();
  const int R = params.steps;
  const int c = models.codec->latent_dim();
  RngStream select_rng = derive_stream(params.seed, "select");
  SamplerParams sampler = params.sampler;
  sampler.seed = derive_stream(params.seed, "sampler-seed").next_u64();

  NoGradGuard ng;
  const TextEncoding t_cond = models.text->encode(text);
  const TextEncoding t_null = models.text->null_embedding();

  for (int i = 0; i < R && state.unresolved_count() > 0; ++i) {
    const std::vector<int> sel =
        select_positions(params.mode, i, R, state, select_rng);
    if (sel.empty()) break;
    const MaskFlags mask = state.mask();
    Mat cond = models.transformer->forward_values(state.latents, mask, t_cond);
    if (params.cfg_scale != 1.0) {
      // The unconditional pass reuses the same masked input; only the text
      // token differs. With s_c == 1 the combine is skipped entirely so the
      // output bit-matches a single conditional pass.
      const Mat uncond =
          models.transformer->forward_values(state.latents, mask, t_null);
      cond = cfg_combine(cond, uncond, params.cfg_scale);
    }
    Mat cond_sel(static_cast<long>(sel.size()), cond.cols());
    for (size_t k = 0; k < sel.size(); ++k)
      cond_sel.row(static_cast<long>(k)) = cond.row(sel[k]);

    Mat z_sel;
    if (models.regression_head) {
      MOMA_CHECK(cond.cols() == c,
                 "regression head requires cond_dim == latent_dim");
      z_sel = cond_sel;
    } else {
      DenoiseFn denoise = [&](const Mat& z_t, int t, const Mat& cc) {
        return models.head->denoise(z_t, t, cc);
      };
      z_sel = sample_tokens(cond_sel, c, sampler, models.schedule, denoise, sel);
    }
    for (size_t k = 0; k < sel.size(); ++k) {
      const int p = sel[k];
      MOMA_CHECK(!state.pinned[static_cast<size_t>(p)],
                 "generation: attempted to rewrite a pinned position");
      state.latents.row(p) = z_sel.row(static_cast<long>(k));
      state.resolved[static_cast<size_t>(p)] = true;
    }
  }
  MOMA_CHECK(state.unresolved_count() == 0,
             "generation: positions left unresolved after R steps");
  return state.latents;
}

namespace {

MotionSequence decode_to_motion(const Mat& latents, const MadModels& models) {
  const Mat frames_norm = models.codec->decode_values(latents);
  const Mat frames = denormalize_frames(frames_norm, models.stats);
  MotionSequence out;
  out.fps = models.fps;
  out.layout = models.layout;
  out.frames = frames.cast<float>();
  out.validate();
  return out;
}

GenerationState fresh_state(long n, int c) {
  GenerationState state;
  state.latents = Mat::Zero(n, c);
  state.resolved.assign(static_cast<size_t>(n), false);
  state.pinned.assign(static_cast<size_t>(n), false);
  return state;
}

}  // namespace

MotionSequence generate(const std::string& text, const InferenceParams& params,
                        const std::optional<KeyframeSet>& keyframes,
                        const MadModels& models) {
  params.validate();
  MOMA_CHECK(params.target_frames <= 196, "generate: target_frames > 196");
  const int l = models.codec->downsample_factor();
  MOMA_CHECK(params.target_frames >= l,
             "generate: target_frames below one latent window");
  const long n = params.target_frames / l;
  GenerationState state = fresh_state(n, models.codec->latent_dim());
  if (keyframes) inject_keyframes(state, *keyframes, models, params.target_frames);
  run_generation_loop(state, text, params, models);
  return decode_to_motion(state.latents, models);
}

MotionSequence edit(const MotionSequence& source,
                    const std::vector<bool>& preserve, const std::string& text,
                    const InferenceParams& params, const MadModels& models) {
  MOMA_CHECK(static_cast<long>(preserve.size()) == source.length(),
             "edit: preserve mask length mismatch");
  const int l = models.codec->downsample_factor();
  const long n = source.length() / l;
  MOMA_CHECK(n >= 1, "edit: source shorter than one latent window");

  // Preserve flags must be constant within each window; latents are the
  // unit of pinning.
  for (long p = 0; p < n; ++p) {
    const bool head = preserve[static_cast<size_t>(p * l)];
    for (int j = 1; j < l; ++j)
      MOMA_CHECK(preserve[static_cast<size_t>(p * l + j)] == head,
                 "edit: preserve mask mixed within window " + std::to_string(p));
  }

  const Mat src_norm =
      normalize_frames(source.frames_d().topRows(n * l), models.stats);
  const Mat z_src = models.codec->encode_mean(src_norm);
  MOMA_CHECK(z_src.rows() == n, "edit: unexpected latent count");

  GenerationState state = fresh_state(n, models.codec->latent_dim());
  for (long p = 0; p < n; ++p) {
    if (preserve[static_cast<size_t>(p * l)]) {
      state.latents.row(p) = z_src.row(p);
      state.resolved[static_cast<size_t>(p)] = true;
      state.pinned[static_cast<size_t>(p)] = true;
    }
  }
  if (state.unresolved_count() > 0)
    run_generation_loop(state, text, params, models);
  return decode_to_motion(state.latents, models);
}

MotionSequence stitch(const MotionSequence& clip_a, const MotionSequence& clip_b,
                      int transition_frames, int context_frames,
                      const std::string& text, const InferenceParams& params,
                      const MadModels& models) {
  const int l = models.codec->downsample_factor();
  MOMA_CHECK(transition_frames >= 0 && transition_frames % l == 0,
             "stitch: transition_frames must be a multiple of the window size");
  MOMA_CHECK(context_frames >= l && context_frames % l == 0,
             "stitch: context_frames must be a positive multiple of the window size");
  const long ta = (clip_a.length() / l) * l;
  const long tb = (clip_b.length() / l) * l;
  MOMA_CHECK(ta >= context_frames && tb >= context_frames,
             "stitch: clips shorter than the requested context");

  const Mat a = clip_a.frames_d().topRows(ta);
  const Mat b = clip_b.frames_d().topRows(tb);

  MotionSequence out;
  out.fps = models.fps;
  out.layout = models.layout;

  if (transition_frames == 0) {
    Mat joined(ta + tb, a.cols());
    joined << a, b;
    out.frames = joined.cast<float>();
    out.validate();
    return out;
  }

  const long n_ctx = context_frames / l;
  const long n_gap = transition_frames / l;
  const long n = 2 * n_ctx + n_gap;

  const Mat tail_norm = normalize_frames(a.bottomRows(context_frames), models.stats);
  const Mat head_norm = normalize_frames(b.topRows(context_frames), models.stats);
  const Mat z_tail = models.codec->encode_mean(tail_norm);
  const Mat z_head = models.codec->encode_mean(head_norm);

  GenerationState state = fresh_state(n, models.codec->latent_dim());
  for (long p = 0; p < n_ctx; ++p) {
    state.latents.row(p) = z_tail.row(p);
    state.resolved[static_cast<size_t>(p)] = true;
    state.pinned[static_cast<size_t>(p)] = true;
    state.latents.row(n - 1 - p) = z_head.row(n_ctx - 1 - p);
    state.resolved[static_cast<size_t>(n - 1 - p)] = true;
    state.pinned[static_cast<size_t>(n - 1 - p)] = true;
  }
  run_generation_loop(state, text, params, models);

  // Decode the whole [tail | gap | head] stretch, keep only the gap frames.
  const Mat decoded = models.codec->decode_values(state.latents);
  const Mat gap = denormalize_frames(
      decoded.middleRows(context_frames, transition_frames), models.stats);

  Mat joined(ta + transition_frames + tb, a.cols());
  joined << a, gap, b;
  out.frames = joined.cast<float>();
  out.validate();
  return out;
}

}  // namespace moma
