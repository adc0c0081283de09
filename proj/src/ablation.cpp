#include "moma/ablation.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "moma/factory.hpp"

namespace moma {

namespace {

std::vector<std::pair<int, int>> parse_pairs(const std::string& s) {
  std::vector<std::pair<int, int>> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) {
    const auto colon = part.find(':');
    MOMA_CHECK(colon != std::string::npos, "ablate: bad steps pair " + part);
    out.emplace_back(std::stoi(part.substr(0, colon)),
                     std::stoi(part.substr(colon + 1)));
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) out.push_back(std::stoi(part));
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) out.push_back(std::stod(part));
  return out;
}

struct Workbench {
  LabeledCorpus train, test;
  LoadedVae vae;
  MadModel mad;
  std::shared_ptr<ToyEvaluator> evaluator;
  LatentCache cache;
  std::vector<std::string> templates;
  float fps = 20.0f;
};

std::vector<std::string> distinct_captions(const std::vector<std::string>& all) {
  std::vector<std::string> out;
  for (const auto& c : all) {
    bool seen = false;
    for (const auto& o : out)
      if (o == c) seen = true;
    if (!seen) out.push_back(c);
  }
  return out;
}

TrainConfig scaled(const TrainConfig& base, double scale, long dataset_size) {
  TrainConfig t = base;
  t.iterations = std::max<long>(
      1, static_cast<long>(static_cast<double>(base.resolve_iterations(dataset_size)) * scale));
  t.epochs = 0;
  return t;
}

Workbench prepare_workbench(const RunConfig& cfg, const AblationPaths& paths) {
  namespace fs = std::filesystem;
  fs::create_directories(paths.out_dir);
  Workbench wb;
  wb.train = load_labeled_corpus(paths.train_manifest);
  wb.test = load_labeled_corpus(paths.test_manifest);
  wb.templates = distinct_captions(wb.train.captions);
  wb.fps = wb.train.sequences[0].fps;

  if (!paths.vae_ckpt.empty()) {
    wb.vae = load_vae_checkpoint(paths.vae_ckpt);
  } else {
    const LayoutDescriptor layout = wb.train.sequences[0].layout;
    VaeTrainResult r = train_vae(wb.train.sequences,
                                 vae_config_from(cfg, layout.d),
                                 vae_train_config_from(cfg), layout);
    const std::string path = (fs::path(paths.out_dir) / "vae.ckpt").string();
    save_vae_checkpoint(*r.vae, r.stats, layout, wb.fps,
                        static_cast<uint64_t>(r.loss_history.size()), path);
    wb.vae = load_vae_checkpoint(path);
  }
  wb.cache = latent_cache_build(wb.train.sequences, wb.train.captions,
                                *wb.vae.vae, wb.vae.stats);

  if (!paths.eval_ckpt.empty()) {
    wb.evaluator = load_evaluator_checkpoint(paths.eval_ckpt);
  } else {
    wb.evaluator = train_toy_evaluator(wb.train.sequences, wb.train.captions,
                                       evaluator_config_from(cfg));
    save_evaluator_checkpoint(*wb.evaluator, 0,
                              (fs::path(paths.out_dir) / "eval.ckpt").string());
  }

  if (!paths.mad_ckpt.empty()) {
    wb.mad = load_mad_checkpoint(paths.mad_ckpt, /*use_ema_weights=*/true).model;
  } else {
    const TrainConfig tc = mad_train_config_from(cfg);
    MadTrainResult r = train_mad(
        wb.cache, transformer_config_from(cfg, wb.vae.vae->latent_dim()),
        head_config_from(cfg), cfg.get_int("diffusion.t_diff"), wb.templates, tc);
    const std::string path = (fs::path(paths.out_dir) / "mad.ckpt").string();
    save_mad_checkpoint(r.model, &r.ema,
                        static_cast<uint64_t>(r.loss_history.size()), path);
    wb.mad = load_mad_checkpoint(path, /*use_ema_weights=*/true).model;
  }
  return wb;
}

GenerationEvalReport eval_models(const Workbench& wb, const MadModels& models,
                                 const RunConfig& cfg,
                                 const InferenceParams& params) {
  return evaluate_generation(models, *wb.evaluator, wb.test.sequences,
                             wb.test.captions, params, eval_options_from(cfg));
}

AblationTable::Row metric_row(const std::string& name,
                              const GenerationEvalReport& r) {
  return {name,
          {r.rp.top1.value, r.rp.top2.value, r.rp.top3.value, r.fid.value,
           r.mm_dist.value, r.diversity.value}};
}

const std::vector<std::string> kMetricCols = {"Top1",    "Top2",      "Top3",
                                              "FID",     "MM-Dist",   "Diversity"};

}  // namespace

std::string AblationTable::to_markdown() const {
  std::ostringstream os;
  os << "# Ablation: " << name << "\n\n|  |";
  for (const auto& c : columns) os << ' ' << c << " |";
  os << "\n|--|";
  for (size_t i = 0; i < columns.size(); ++i) os << "--|";
  os << '\n';
  for (const auto& row : rows) {
    os << "| " << row.name << " |";
    char buf[32];
    for (double v : row.values) {
      std::snprintf(buf, sizeof(buf), " %.4f |", v);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::string AblationTable::to_kv() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  for (const auto& row : rows)
    for (size_t i = 0; i < columns.size(); ++i)
      os << name << '.' << row.name << '.' << columns[i] << " = "
         << row.values[i] << '\n';
  return os.str();
}

AblationTable run_ablation(const std::string& name, const RunConfig& cfg,
                           const AblationPaths& paths) {
  namespace fs = std::filesystem;
  Workbench wb = prepare_workbench(cfg, paths);
  const InferenceParams base_params = inference_params_from(cfg);
  const MadModels full_models = make_models(wb.vae, wb.mad, wb.fps);
  const double variant_scale = cfg.get_double("ablate.variant_iter_scale");

  AblationTable table;
  table.name = name;

  if (name == "modes") {
    table.columns = kMetricCols;
    for (InferenceMode mode : {InferenceMode::kKeyframe, InferenceMode::kLinear,
                               InferenceMode::kBilinear}) {
      InferenceParams p = base_params;
      p.mode = mode;
      table.rows.push_back(
          metric_row(inference_mode_name(mode), eval_models(wb, full_models, cfg, p)));
    }
  } else if (name == "steps") {
    table.columns = {"FID", "Top3", "MM-Dist", "AITF_ms"};
    const TrainConfig tc = mad_train_config_from(cfg);
    for (const auto& [t_train, t_infer] : parse_pairs(cfg.get("ablate.steps_pairs"))) {
      MadTrainResult r = train_mad(
          wb.cache, transformer_config_from(cfg, wb.vae.vae->latent_dim()),
          head_config_from(cfg), t_train, wb.templates,
          scaled(tc, variant_scale, static_cast<long>(wb.cache.entries.size())));
      r.ema.copy_to(r.model.trainable_params());
      MadModels models = make_models(wb.vae, r.model, wb.fps);
      InferenceParams p = base_params;
      if (t_infer < t_train) {
        p.sampler.sampler = SamplerKind::kDdim;
        p.sampler.inference_steps = t_infer;
      } else {
        p.sampler.sampler = SamplerKind::kDdpm;
        p.sampler.inference_steps = 0;
      }
      const GenerationEvalReport rep = eval_models(wb, models, cfg, p);
      std::ostringstream row;
      row << "T" << t_train << "_I" << t_infer;
      table.rows.push_back({row.str(),
                            {rep.fid.value, rep.rp.top3.value,
                             rep.mm_dist.value, rep.aitf_ms}});
    }
  } else if (name == "cfg_r") {
    table.columns = {"FID", "MM-Dist"};
    for (double sc : parse_doubles(cfg.get("ablate.cfg_list"))) {
      InferenceParams p = base_params;
      p.cfg_scale = sc;
      const GenerationEvalReport rep = eval_models(wb, full_models, cfg, p);
      std::ostringstream row;
      row << "cfg" << sc;
      table.rows.push_back({row.str(), {rep.fid.value, rep.mm_dist.value}});
    }
    for (int r_steps : parse_ints(cfg.get("ablate.r_list"))) {
      InferenceParams p = base_params;
      p.steps = r_steps;
      const GenerationEvalReport rep = eval_models(wb, full_models, cfg, p);
      std::ostringstream row;
      row << "R" << r_steps;
      table.rows.push_back({row.str(), {rep.fid.value, rep.mm_dist.value}});
    }
  } else if (name == "head_depth") {
    table.columns = kMetricCols;
    const TrainConfig tc = mad_train_config_from(cfg);
    for (int depth : parse_ints(cfg.get("ablate.head_depths"))) {
      HeadConfig hc = head_config_from(cfg);
      hc.blocks = depth;
      MadTrainResult r = train_mad(
          wb.cache, transformer_config_from(cfg, wb.vae.vae->latent_dim()), hc,
          cfg.get_int("diffusion.t_diff"), wb.templates,
          scaled(tc, variant_scale, static_cast<long>(wb.cache.entries.size())));
      r.ema.copy_to(r.model.trainable_params());
      std::ostringstream row;
      row << depth << "_layers";
      table.rows.push_back(metric_row(
          row.str(),
          eval_models(wb, make_models(wb.vae, r.model, wb.fps), cfg, base_params)));
    }
  } else if (name == "components") {
    table.columns = kMetricCols;
    const TrainConfig tc = mad_train_config_from(cfg);
    const long m = static_cast<long>(wb.cache.entries.size());
    const int d = wb.vae.layout.d;
    const int t_diff = cfg.get_int("diffusion.t_diff");
    // Observation-space variants get one token per frame.
    int max_t = 0;
    for (const auto& s : wb.train.sequences)
      max_t = std::max<int>(max_t, static_cast<int>(s.length()));
    for (const auto& s : wb.test.sequences)
      max_t = std::max<int>(max_t, static_cast<int>(s.length()));
    const LatentCache raw_cache = latent_cache_build_identity(
        wb.train.sequences, wb.train.captions, wb.vae.stats, max_t);

    table.rows.push_back(
        metric_row("full", eval_models(wb, full_models, cfg, base_params)));

    {  // Without VAE: diffusion directly over observation-space tokens.
      TransformerConfig t = transformer_config_from(cfg, d);
      t.max_positions = max_t + 1;
      MadTrainResult r = train_mad(raw_cache, t, head_config_from(cfg), t_diff,
                                   wb.templates, scaled(tc, variant_scale, m));
      r.ema.copy_to(r.model.trainable_params());
      MadModels models = make_models(wb.vae, r.model, wb.fps);
      models.codec = std::make_shared<IdentityCodec>(d);
      table.rows.push_back(
          metric_row("no_vae", eval_models(wb, models, cfg, base_params)));
    }
    {  // Without diffusion head: transformer regresses the latents.
      TransformerConfig t = transformer_config_from(cfg, wb.vae.vae->latent_dim());
      t.cond_dim = t.latent_dim;
      MadTrainResult r =
          train_mad(wb.cache, t, head_config_from(cfg), t_diff, wb.templates,
                    scaled(tc, variant_scale, m), /*regression_head=*/true);
      r.ema.copy_to(r.model.trainable_params());
      table.rows.push_back(metric_row(
          "no_head",
          eval_models(wb, make_models(wb.vae, r.model, wb.fps), cfg, base_params)));
    }
    {  // Transformer only: regression over observation-space tokens.
      TransformerConfig t = transformer_config_from(cfg, d);
      t.cond_dim = d;
      t.max_positions = max_t + 1;
      MadTrainResult r =
          train_mad(raw_cache, t, head_config_from(cfg), t_diff, wb.templates,
                    scaled(tc, variant_scale, m), /*regression_head=*/true);
      r.ema.copy_to(r.model.trainable_params());
      MadModels models = make_models(wb.vae, r.model, wb.fps);
      models.codec = std::make_shared<IdentityCodec>(d);
      table.rows.push_back(
          metric_row("transformer_only", eval_models(wb, models, cfg, base_params)));
    }
  } else {
    throw Error("unknown ablation name: " + name);
  }

  std::ofstream md((fs::path(paths.out_dir) / (name + ".md")).string());
  md << table.to_markdown();
  std::ofstream kv((fs::path(paths.out_dir) / (name + ".kv")).string());
  kv << table.to_kv();
  write_run_manifest((fs::path(paths.out_dir) / (name + ".manifest")).string(),
                     "ablate-" + name, cfg, {});
  return table;
}

}  // namespace moma
