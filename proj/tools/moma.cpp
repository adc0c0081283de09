#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "moma/ablation.hpp"
#include "moma/eval_protocol.hpp"
#include "moma/factory.hpp"
#include "moma/plot.hpp"

namespace fs = std::filesystem;
using namespace moma;

namespace {

// Flag overrides recorded as (config key, value); applied after the config
// file so precedence is flags > file > defaults.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> kv;
  void add(const std::string& key, const std::string& value) {
    kv.emplace_back(key, value);
  }
};

RunConfig resolve_config(const std::string& config_path, const Overrides& over) {
  RunConfig cfg = RunConfig::defaults();
  if (!config_path.empty()) cfg.load_file(config_path);
  for (const auto& [k, v] : over.kv) cfg.set(k, v);
  return cfg;
}

void manifest_for(const std::string& out_path, const std::string& subcommand,
                  const RunConfig& cfg,
                  const std::vector<std::pair<std::string, std::string>>& artifacts) {
  write_run_manifest(out_path + ".manifest", subcommand, cfg, artifacts);
}

std::vector<bool> parse_preserve_ranges(const std::string& spec, long t_len,
                                        int l) {
  std::vector<bool> preserve(static_cast<size_t>(t_len), false);
  std::istringstream is(spec);
  std::string part;
  while (std::getline(is, part, ',')) {
    const auto colon = part.find(':');
    MOMA_CHECK(colon != std::string::npos,
               "edit: preserve range must be start:end, got " + part);
    long a = std::stol(part.substr(0, colon));
    long b = std::stol(part.substr(colon + 1));
    MOMA_CHECK(0 <= a && a < b && b <= t_len, "edit: bad preserve range " + part);
    // Round outward to latent-window boundaries.
    const long a2 = (a / l) * l;
    const long b2 = std::min<long>(t_len, ((b + l - 1) / l) * l);
    if (a2 != a || b2 != b)
      std::fprintf(stderr, "note: preserve range %ld:%ld widened to %ld:%ld\n",
                   a, b, a2, b2);
    for (long t = a2; t < b2; ++t) preserve[static_cast<size_t>(t)] = true;
  }
  return preserve;
}

std::vector<bool> parse_preserve_file(const std::string& path, long t_len, int l) {
  std::ifstream is(path);
  MOMA_CHECK(is.good(), "edit: cannot open " + path);
  std::ostringstream spec;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    MOMA_CHECK(tab != std::string::npos,
               "edit: preserve line needs start<TAB>end, got " + line);
    if (!first) spec << ',';
    spec << line.substr(0, tab) << ':' << line.substr(tab + 1);
    first = false;
  }
  return parse_preserve_ranges(spec.str(), t_len, l);
}

MadModels load_models(const std::string& vae_path, const std::string& mad_path) {
  LoadedVae vae = load_vae_checkpoint(vae_path);
  // EMA weights are the inference weights; fall back to raw parameters for
  // checkpoints trained without EMA.
  LoadedMad mad = load_mad_checkpoint(mad_path, /*use_ema_weights=*/false);
  if (mad.has_ema) mad = load_mad_checkpoint(mad_path, /*use_ema_weights=*/true);
  return make_models(vae, mad.model, vae.fps);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"moma: masked autoregressive diffusion over continuous motion latents"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "key = value config file")
      ->configurable(false);

  Overrides over;
  auto add_override_opt = [&](CLI::App* cmd, const std::string& flag,
                              const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
           flag, [&over, key](const std::string& v) { over.add(key, v); }, help)
        ->type_name("VALUE");
  };

  // ---- make-toy-data ----
  auto* cmd_data = app.add_subcommand("make-toy-data", "generate the procedural corpus");
  std::string data_out;
  cmd_data->add_option("--out", data_out, "output directory")->required();
  add_override_opt(cmd_data, "--seed", "seed", "master seed");
  add_override_opt(cmd_data, "--classes", "toy.classes", "archetype count");
  add_override_opt(cmd_data, "--per-class", "toy.per_class", "sequences per archetype");
  add_override_opt(cmd_data, "--joints", "toy.joints", "skeleton joint count");
  add_override_opt(cmd_data, "--min-len", "toy.t_min", "minimum frames");
  add_override_opt(cmd_data, "--max-len", "toy.t_max", "maximum frames");
  add_override_opt(cmd_data, "--fps", "toy.fps", "frame rate");

  // ---- train-vae ----
  auto* cmd_vae = app.add_subcommand("train-vae", "stage 1: motion VAE");
  std::string vae_data, vae_out;
  cmd_vae->add_option("--data", vae_data, "corpus manifest")->required();
  cmd_vae->add_option("--out", vae_out, "checkpoint path")->required();
  add_override_opt(cmd_vae, "--seed", "seed", "master seed");
  add_override_opt(cmd_vae, "--lr", "vae.lr", "learning rate");
  add_override_opt(cmd_vae, "--batch", "vae.batch_size", "batch size");
  add_override_opt(cmd_vae, "--iters", "vae.iterations", "iteration count");
  add_override_opt(cmd_vae, "--epochs", "vae.epochs", "epoch count");

  // ---- train-mad ----
  auto* cmd_mad = app.add_subcommand("train-mad", "stage 2: masked diffusion");
  std::string mad_data, mad_vae, mad_out, mad_cache;
  cmd_mad->add_option("--data", mad_data, "corpus manifest")->required();
  cmd_mad->add_option("--vae", mad_vae, "trained VAE checkpoint")->required();
  cmd_mad->add_option("--out", mad_out, "checkpoint path")->required();
  cmd_mad->add_option("--cache", mad_cache, "latent cache path (built if missing)");
  add_override_opt(cmd_mad, "--seed", "seed", "master seed");
  add_override_opt(cmd_mad, "--lr", "mad.lr", "learning rate");
  add_override_opt(cmd_mad, "--batch", "mad.batch_size", "batch size");
  add_override_opt(cmd_mad, "--iters", "mad.iterations", "iteration count");
  add_override_opt(cmd_mad, "--epochs", "mad.epochs", "epoch count");
  add_override_opt(cmd_mad, "--t-diff", "diffusion.t_diff", "diffusion steps");

  // ---- reconstruct ----
  auto* cmd_rec = app.add_subcommand("reconstruct", "VAE round trip + MPJPE");
  std::string rec_in, rec_vae, rec_out;
  cmd_rec->add_option("--in", rec_in, "input motion file")->required();
  cmd_rec->add_option("--vae", rec_vae, "trained VAE checkpoint")->required();
  cmd_rec->add_option("--out", rec_out, "output motion file")->required();

  // ---- generate ----
  auto* cmd_gen = app.add_subcommand("generate", "text to motion");
  std::string gen_text, gen_vae, gen_mad, gen_out, gen_keyframes;
  cmd_gen->add_option("--text", gen_text, "prompt")->required();
  cmd_gen->add_option("--vae", gen_vae, "VAE checkpoint")->required();
  cmd_gen->add_option("--mad", gen_mad, "MAD checkpoint")->required();
  cmd_gen->add_option("--out", gen_out, "output motion file")->required();
  cmd_gen->add_option("--keyframes", gen_keyframes, "keyframe file");
  add_override_opt(cmd_gen, "--seed", "seed", "master seed");
  add_override_opt(cmd_gen, "--length", "infer.target_frames", "frames to generate");
  add_override_opt(cmd_gen, "--cfg", "infer.cfg", "guidance scale s_c");
  add_override_opt(cmd_gen, "--steps", "infer.steps", "autoregressive steps R");
  add_override_opt(cmd_gen, "--mode", "infer.mode", "keyframe|linear|bilinear");
  add_override_opt(cmd_gen, "--sampler", "diffusion.sampler", "ddpm|ddim");
  add_override_opt(cmd_gen, "--ddim-steps", "diffusion.inference_steps", "T_i");
  add_override_opt(cmd_gen, "--eta", "diffusion.eta", "DDIM eta");
  add_override_opt(cmd_gen, "--threads", "threads", "1 = bit-reproducible");

  // ---- edit ----
  auto* cmd_edit = app.add_subcommand("edit", "regenerate non-preserved frames");
  std::string edit_in, edit_vae, edit_mad, edit_out, edit_text;
  std::string edit_ranges, edit_file;
  cmd_edit->add_option("--in", edit_in, "source motion file")->required();
  cmd_edit->add_option("--text", edit_text, "prompt")->required();
  cmd_edit->add_option("--vae", edit_vae, "VAE checkpoint")->required();
  cmd_edit->add_option("--mad", edit_mad, "MAD checkpoint")->required();
  cmd_edit->add_option("--out", edit_out, "output motion file")->required();
  cmd_edit->add_option("--preserve", edit_ranges, "ranges start:end,... to keep");
  cmd_edit->add_option("--preserve-file", edit_file,
                       "file of start<TAB>end lines to keep");
  add_override_opt(cmd_edit, "--seed", "seed", "master seed");
  add_override_opt(cmd_edit, "--cfg", "infer.cfg", "guidance scale s_c");
  add_override_opt(cmd_edit, "--steps", "infer.steps", "autoregressive steps R");
  add_override_opt(cmd_edit, "--mode", "infer.mode", "keyframe|linear|bilinear");

  // ---- stitch ----
  auto* cmd_stitch = app.add_subcommand("stitch", "join clips with a generated transition");
  std::string st_a, st_b, st_vae, st_mad, st_out, st_text;
  int st_transition = 0;
  cmd_stitch->add_option("--in-a", st_a, "first clip")->required();
  cmd_stitch->add_option("--in-b", st_b, "second clip")->required();
  cmd_stitch->add_option("--transition", st_transition, "transition frames")->required();
  cmd_stitch->add_option("--text", st_text, "prompt for the transition")->required();
  cmd_stitch->add_option("--vae", st_vae, "VAE checkpoint")->required();
  cmd_stitch->add_option("--mad", st_mad, "MAD checkpoint")->required();
  cmd_stitch->add_option("--out", st_out, "output motion file")->required();
  add_override_opt(cmd_stitch, "--context", "infer.context_frames", "context frames per side");
  add_override_opt(cmd_stitch, "--seed", "seed", "master seed");
  add_override_opt(cmd_stitch, "--cfg", "infer.cfg", "guidance scale s_c");
  add_override_opt(cmd_stitch, "--steps", "infer.steps", "autoregressive steps R");

  // ---- eval ----
  auto* cmd_eval = app.add_subcommand("eval", "metric suite on generated motions");
  std::string ev_test, ev_train, ev_vae, ev_mad, ev_ckpt, ev_out;
  cmd_eval->add_option("--data", ev_test, "held-out test manifest")->required();
  cmd_eval->add_option("--train-data", ev_train,
                       "training manifest (used when fitting the evaluator)");
  cmd_eval->add_option("--vae", ev_vae, "VAE checkpoint")->required();
  cmd_eval->add_option("--mad", ev_mad, "MAD checkpoint")->required();
  cmd_eval->add_option("--evaluator", ev_ckpt,
                       "evaluator checkpoint (trained and saved here if missing)");
  cmd_eval->add_option("--out", ev_out, "report path prefix")->required();
  add_override_opt(cmd_eval, "--seed", "seed", "master seed");
  add_override_opt(cmd_eval, "--n", "eval.n_generate", "prompts to generate (0 = all)");
  add_override_opt(cmd_eval, "--reps", "eval.reps", "repetitions for the CIs");
  add_override_opt(cmd_eval, "--cfg", "infer.cfg", "guidance scale s_c");
  add_override_opt(cmd_eval, "--steps", "infer.steps", "autoregressive steps R");
  add_override_opt(cmd_eval, "--mode", "infer.mode", "keyframe|linear|bilinear");

  // ---- plot ----
  auto* cmd_plot = app.add_subcommand("plot", "render keyposes to SVG");
  std::string plot_in, plot_out;
  int plot_stride = 10;
  cmd_plot->add_option("--in", plot_in, "motion file")->required();
  cmd_plot->add_option("--out", plot_out, "SVG path")->required();
  cmd_plot->add_option("--stride", plot_stride, "frames between keyposes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (cmd_data->parsed()) {
    RunConfig cfg = resolve_config(config_path, over);
    const ToyCorpusSpec spec = toy_spec_from(cfg);
    ToyCorpus corpus = generate_toy_corpus(spec);
    fs::create_directories(data_out);
    std::vector<std::string> files;
    for (size_t i = 0; i < corpus.sequences.size(); ++i) {
      std::ostringstream name;
      name << "seq_" << std::setw(5) << std::setfill('0') << i << ".moma";
      save_motion(corpus.sequences[i], (fs::path(data_out) / name.str()).string());
      files.push_back(name.str());
    }
    const std::string manifest = (fs::path(data_out) / "manifest.tsv").string();
    write_corpus_manifest(manifest, files, corpus.captions);
    manifest_for((fs::path(data_out) / "run").string(), "make-toy-data", cfg,
                 {{"manifest", manifest}});
    std::printf("wrote %zu sequences to %s\n", corpus.sequences.size(),
                data_out.c_str());
    return 0;
  }

  if (cmd_vae->parsed()) {
    RunConfig cfg = resolve_config(config_path, over);
    LabeledCorpus corpus = load_labeled_corpus(vae_data);
    const LayoutDescriptor layout = corpus.sequences[0].layout;
    TrainConfig tc = vae_train_config_from(cfg);
    tc.log_every = 200;
    VaeTrainResult r =
        train_vae(corpus.sequences, vae_config_from(cfg, layout.d), tc, layout);
    save_vae_checkpoint(*r.vae, r.stats, layout, corpus.sequences[0].fps,
                        static_cast<uint64_t>(r.loss_history.size()), vae_out);
    manifest_for(vae_out, "train-vae", cfg, {{"checkpoint", vae_out}});
    std::printf("final loss %.6f -> %s\n", r.loss_history.back(), vae_out.c_str());
    return 0;
  }

  if (cmd_mad->parsed()) {
    RunConfig cfg = resolve_config(config_path, over);
    LabeledCorpus corpus = load_labeled_corpus(mad_data);
    LoadedVae vae = load_vae_checkpoint(mad_vae);
    LatentCache cache;
    if (!mad_cache.empty() && fs::exists(mad_cache)) {
      cache = LatentCache::load(mad_cache);
    } else {
      cache = latent_cache_build(corpus.sequences, corpus.captions, *vae.vae,
                                 vae.stats);
      if (!mad_cache.empty()) cache.save(mad_cache);
    }
    std::vector<std::string> templates;
    for (const auto& c : corpus.captions) {
      bool seen = false;
      for (const auto& t : templates)
        if (t == c) seen = true;
      if (!seen) templates.push_back(c);
    }
    TrainConfig tc = mad_train_config_from(cfg);
    tc.log_every = 100;
    MadTrainResult r = train_mad(
        cache, transformer_config_from(cfg, vae.vae->latent_dim()),
        head_config_from(cfg), cfg.get_int("diffusion.t_diff"), templates, tc);
    save_mad_checkpoint(r.model, &r.ema,
                        static_cast<uint64_t>(r.loss_history.size()), mad_out);
    manifest_for(mad_out, "train-mad", cfg, {{"checkpoint", mad_out}});
    std::printf("final loss %.6f -> %s\n", r.loss_history.back(), mad_out.c_str());
    return 0;
  }

  if (cmd_rec->parsed()) {
    RunConfig cfg = resolve_config(config_path, over);
    LoadedVae vae = load_vae_checkpoint(rec_vae);
    MotionSequence src = load_motion(rec_in);
    const int l = vae.vae->downsample_factor();
    MOMA_CHECK(src.length() >= l, "reconstruct: input shorter than one window");
    const long n = src.length() / l;
    const Mat x = normalize_frames(src.frames_d().topRows(n * l), vae.stats);
    const Mat z = vae.vae->encode_mean(x);
    const Mat recon = denormalize_frames(vae.vae->decode_values(z), vae.stats);
    MotionSequence out = src;
    out.frames = recon.cast<float>();
    save_motion(out, rec_out);
    MotionSequence src_cropped = src;
    src_cropped.frames = src.frames.topRows(n * l);
    const double err = mpjpe(recover_joints(out), recover_joints(src_cropped));
    manifest_for(rec_out, "reconstruct", cfg, {{"motion", rec_out}});
    std::printf("mpjpe = %.6f\n", err);
    return 0;
  }

  if (cmd_gen->parsed()) {
    RunConfig cfg = resolve_config(config_path, over);
    MadModels models = load_models(gen_vae, gen_mad);
    InferenceParams params = inference_params_from(cfg);
    std::optional<KeyframeSet> kf;
    if (!gen_keyframes.empty())
      kf = load_keyframes(gen_keyframes, models.layout.d);
    MotionSequence motion = generate(gen_text, params, kf, models);
    save_motion(motion, gen_out);
    manifest_for(gen_out, "generate", cfg, {{"motion", gen_out}});
    std::printf("generated %ld frames -> %s\n", motion.length(), gen_out.c_str());
    return 0;
  }

  if (cmd_edit->parsed()) {
    RunConfig cfg = resolve_config(config_path, over);
    MadModels models = load_models(edit_vae, edit_mad);
    MotionSequence src = load_motion(edit_in);
    const int l = models.codec->downsample_factor();
    MOMA_CHECK(!edit_ranges.empty() || !edit_file.empty(),
               "edit: provide --preserve or --preserve-file");
    std::vector<bool> preserve =
        !edit_file.empty() ? parse_preserve_file(edit_file, src.length(), l)
                           : parse_preserve_ranges(edit_ranges, src.length(), l);
    InferenceParams params = inference_params_from(cfg);
    MotionSequence out = edit(src, preserve, edit_text, params, models);
    save_motion(out, edit_out);
    manifest_for(edit_out, "edit", cfg, {{"motion", edit_out}});
    std::printf("edited %ld frames -> %s\n", out.length(), edit_out.c_str());
    return 0;
  }

  if (cmd_stitch->parsed()) {
    RunConfig cfg = resolve_config(config_path, over);
    MadModels models = load_models(st_vae, st_mad);
    MotionSequence a = load_motion(st_a);
    MotionSequence b = load_motion(st_b);
    InferenceParams params = inference_params_from(cfg);
    MotionSequence out = stitch(a, b, st_transition,
                                cfg.get_int("infer.context_frames"), st_text,
                                params, models);
    save_motion(out, st_out);
    manifest_for(st_out, "stitch", cfg, {{"motion", st_out}});
    std::printf("stitched %ld frames -> %s\n", out.length(), st_out.c_str());
    return 0;
  }

  if (cmd_eval->parsed()) {
    RunConfig cfg = resolve_config(config_path, over);
    MadModels models = load_models(ev_vae, ev_mad);
    LabeledCorpus test = load_labeled_corpus(ev_test);
    std::shared_ptr<ToyEvaluator> evaluator;
    if (!ev_ckpt.empty() && fs::exists(ev_ckpt)) {
      evaluator = load_evaluator_checkpoint(ev_ckpt);
    } else {
      MOMA_CHECK(!ev_train.empty(),
                 "eval: --train-data required to fit a new evaluator");
      LabeledCorpus train = load_labeled_corpus(ev_train);
      evaluator = train_toy_evaluator(train.sequences, train.captions,
                                      evaluator_config_from(cfg));
      if (!ev_ckpt.empty()) save_evaluator_checkpoint(*evaluator, 0, ev_ckpt);
    }
    GenerationEvalReport report =
        evaluate_generation(models, *evaluator, test.sequences, test.captions,
                            inference_params_from(cfg), eval_options_from(cfg));
    {
      std::ofstream os(ev_out + ".txt");
      os << "metric report (value +- 95% half-width over repeated runs)\n";
      os << report.to_kv();
    }
    {
      std::ofstream os(ev_out + ".kv");
      os << report.to_kv();
    }
    manifest_for(ev_out, "eval", cfg,
                 {{"report", ev_out + ".txt"}, {"kv", ev_out + ".kv"}});
    std::printf("%s", report.to_kv().c_str());
    return 0;
  }

  if (cmd_plot->parsed()) {
    RunConfig cfg = resolve_config(config_path, over);
    MotionSequence motion = load_motion(plot_in);
    plot_motion(motion, plot_stride, plot_out);
    manifest_for(plot_out, "plot", cfg, {{"image", plot_out}});
    std::printf("wrote %s\n", plot_out.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}
