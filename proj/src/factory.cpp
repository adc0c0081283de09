#include "moma/factory.hpp"

#include <sstream>

namespace moma {

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) out.push_back(std::stoi(part));
  return out;
}

}  // namespace

VaeConfig vae_config_from(const RunConfig& cfg, int feature_dim) {
  VaeConfig v;
  v.feature_dim = feature_dim;
  v.latent_dim = cfg.get_int("vae.latent_dim");
  v.res_layers = cfg.get_int("vae.res_layers");
  v.down_layers = cfg.get_int("vae.down_layers");
  v.widths = parse_int_list(cfg.get("vae.widths"));
  v.kl_weight = cfg.get_double("vae.kl_weight");
  v.vel_weight = cfg.get_double("vae.vel_weight");
  v.validate();
  return v;
}

TrainConfig vae_train_config_from(const RunConfig& cfg) {
  TrainConfig t;
  t.lr = cfg.get_double("vae.lr");
  t.batch_size = cfg.get_int("vae.batch_size");
  t.iterations = cfg.get_long("vae.iterations");
  t.epochs = cfg.get_long("vae.epochs");
  t.warmup_iters = cfg.get_long("vae.warmup_iters");
  t.decay_epoch = cfg.get_long("vae.decay_epoch");
  t.decay_factor = cfg.get_double("vae.decay_factor");
  t.use_ema = false;
  t.seed = static_cast<uint64_t>(cfg.get_long("seed"));
  return t;
}

TransformerConfig transformer_config_from(const RunConfig& cfg, int latent_dim) {
  TransformerConfig t;
  t.layers = cfg.get_int("mad.layers");
  t.heads = cfg.get_int("mad.heads");
  t.hidden = cfg.get_int("mad.hidden");
  t.cond_dim = cfg.get_int("mad.cond_dim");
  t.max_positions = cfg.get_int("mad.max_positions");
  t.latent_dim = latent_dim;
  t.text_dim = cfg.get_int("mad.text_dim");
  t.ffn_mult = cfg.get_int("mad.ffn_mult");
  t.validate();
  return t;
}

HeadConfig head_config_from(const RunConfig& cfg) {
  HeadConfig h;
  h.blocks = cfg.get_int("head.blocks");
  h.width = cfg.get_int("head.width");
  h.timestep_embed_dim = cfg.get_int("head.timestep_embed_dim");
  h.squared_loss = cfg.get_bool("head.squared_loss");
  return h;
}

TrainConfig mad_train_config_from(const RunConfig& cfg) {
  TrainConfig t;
  t.lr = cfg.get_double("mad.lr");
  t.batch_size = cfg.get_int("mad.batch_size");
  t.iterations = cfg.get_long("mad.iterations");
  t.epochs = cfg.get_long("mad.epochs");
  t.warmup_iters = cfg.get_long("mad.warmup_iters");
  t.decay_epoch = cfg.get_long("mad.decay_epoch");
  t.decay_factor = cfg.get_double("mad.decay_factor");
  t.ema_decay = cfg.get_double("mad.ema_decay");
  t.use_ema = true;
  t.cond_dropout = cfg.get_double("mad.cond_dropout");
  t.seed = static_cast<uint64_t>(cfg.get_long("seed"));
  return t;
}

InferenceParams inference_params_from(const RunConfig& cfg) {
  InferenceParams p;
  p.steps = cfg.get_int("infer.steps");
  p.cfg_scale = cfg.get_double("infer.cfg");
  p.mode = parse_inference_mode(cfg.get("infer.mode"));
  p.target_frames = cfg.get_int("infer.target_frames");
  p.seed = static_cast<uint64_t>(cfg.get_long("seed"));
  const std::string sampler = cfg.get("diffusion.sampler");
  if (sampler == "ddpm")
    p.sampler.sampler = SamplerKind::kDdpm;
  else if (sampler == "ddim")
    p.sampler.sampler = SamplerKind::kDdim;
  else
    throw Error("unknown sampler: " + sampler);
  p.sampler.inference_steps = cfg.get_int("diffusion.inference_steps");
  p.sampler.eta = cfg.get_double("diffusion.eta");
  p.sampler.threads = cfg.get_int("threads");
  return p;
}

EvaluatorConfig evaluator_config_from(const RunConfig& cfg) {
  EvaluatorConfig e;
  e.feature_dim = cfg.get_int("eval.feature_dim");
  e.hidden = cfg.get_int("eval.hidden");
  e.layers = cfg.get_int("eval.layers");
  e.heads = cfg.get_int("eval.heads");
  e.text_dim = cfg.get_int("eval.text_dim");
  e.max_len = cfg.get_int("eval.max_len");
  e.ffn_mult = cfg.get_int("eval.ffn_mult");
  e.lr = cfg.get_double("eval.lr");
  e.iterations = cfg.get_long("eval.iterations");
  e.seed = static_cast<uint64_t>(cfg.get_long("seed"));
  return e;
}

ToyCorpusSpec toy_spec_from(const RunConfig& cfg) {
  ToyCorpusSpec s;
  s.n_classes = cfg.get_int("toy.classes");
  s.n_per_class = cfg.get_int("toy.per_class");
  s.joint_count = cfg.get_int("toy.joints");
  s.t_min = cfg.get_int("toy.t_min");
  s.t_max = cfg.get_int("toy.t_max");
  s.fps = static_cast<float>(cfg.get_double("toy.fps"));
  s.seed = static_cast<uint64_t>(cfg.get_long("seed"));
  s.validate();
  return s;
}

GenerationEvalOptions eval_options_from(const RunConfig& cfg) {
  GenerationEvalOptions o;
  o.n_prompts = cfg.get_int("eval.n_generate");
  o.reps = cfg.get_int("eval.reps");
  o.rp_pool = cfg.get_int("eval.rp_pool");
  o.div_pairs = cfg.get_int("eval.div_pairs");
  o.seed = static_cast<uint64_t>(cfg.get_long("seed"));
  return o;
}

MadModels make_models(const LoadedVae& vae, const MadModel& mad, float fps) {
  MadModels m;
  m.codec = vae.vae;
  m.transformer = mad.transformer;
  m.head = mad.head;
  m.text = mad.text;
  m.schedule = mad.schedule;
  m.stats = vae.stats;
  m.layout = vae.layout;
  m.fps = fps;
  m.regression_head = mad.regression_head;
  return m;
}

}  // namespace moma
