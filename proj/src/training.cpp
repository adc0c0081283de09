#include "moma/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace moma {

long TrainConfig::resolve_iterations(long dataset_size) const {
  if (iterations > 0) return iterations;
  MOMA_CHECK(epochs > 0, "train config: set iterations or epochs");
  const long per_epoch =
      std::max<long>(1, (dataset_size + batch_size - 1) / batch_size);
  return epochs * per_epoch;
}

double TrainConfig::lr_at(long iter, long iters_per_epoch) const {
  double v = lr;
  if (warmup_iters > 0 && iter < warmup_iters)
    v *= static_cast<double>(iter + 1) / static_cast<double>(warmup_iters);
  if (decay_epoch > 0 && iters_per_epoch > 0 &&
      iter >= decay_epoch * iters_per_epoch)
    v *= decay_factor;
  return v;
}

MaskFlags sample_train_mask(long n, RngStream& rng) {
  MOMA_CHECK(n >= 1, "sample_train_mask: N must be >= 1");
  const double u = rng.uniform();
  const double r = std::cos(M_PI / 2.0 * u);
  long k = static_cast<long>(std::ceil(r * static_cast<double>(n)));
  k = std::max<long>(1, std::min<long>(n, k));
  MaskFlags m;
  m.flags.assign(static_cast<size_t>(n), false);
  for (int p : rng.sample_without_replacement(static_cast<int>(n),
                                              static_cast<int>(k)))
    m.flags[static_cast<size_t>(p)] = true;
  return m;
}

// ---- stage 1 ----

double vae_train_step(MotionVae& vae, const std::vector<Mat>& batch_norm,
                      int v_lo, int v_hi, nn::AdamOptimizer& opt, double lr,
                      RngStream& rng) {
  MOMA_CHECK(!batch_norm.empty(), "vae_train_step: empty batch");
  opt.zero_grad();
  const double inv_b = 1.0 / static_cast<double>(batch_norm.size());
  const int l = vae.config().downsample();
  double total = 0.0;
  for (const Mat& x : batch_norm) {
    const long n = x.rows() / l;
    MOMA_CHECK(n >= 1, "vae_train_step: sequence shorter than one window");
    const Mat target = x.topRows(n * l);
    auto [mu, log_var] = vae.encode_t(Tensor::constant(target));
    Mat noise(mu.rows(), mu.cols());
    for (long r = 0; r < noise.rows(); ++r)
      for (long c = 0; c < noise.cols(); ++c) noise(r, c) = rng.normal();
    Tensor z = reparameterize_t(mu, log_var, noise);
    Tensor recon = vae.decode_t(z);
    VaeLossParts parts = vae_total_loss(recon, target, mu, log_var,
                                        vae.nll_log_var(), vae.config(), v_lo,
                                        v_hi);
    total += parts.total.scalar();
    backward(scale(parts.total, inv_b));
  }
  opt.step(lr);
  return total * inv_b;
}

VaeTrainResult train_vae(const std::vector<MotionSequence>& corpus,
                         const VaeConfig& vae_cfg, const TrainConfig& cfg,
                         const LayoutDescriptor& layout) {
  MOMA_CHECK(!corpus.empty(), "train_vae: empty corpus");
  VaeTrainResult result;
  result.stats = compute_stats(corpus);

  std::vector<Mat> normalized;
  normalized.reserve(corpus.size());
  for (const auto& seq : corpus)
    normalized.push_back(normalize_frames(seq.frames_d(), result.stats));

  result.vae = std::make_shared<MotionVae>(vae_cfg, cfg.seed);
  std::vector<NodePtr> params;
  for (const auto& [name, node] : result.vae->params().items())
    params.push_back(node);
  nn::AdamOptimizer opt(params);

  const long m = static_cast<long>(normalized.size());
  const long iters = cfg.resolve_iterations(m);
  const long per_epoch = std::max<long>(1, (m + cfg.batch_size - 1) / cfg.batch_size);
  RngStream noise_rng = derive_stream(cfg.seed, "vae-noise");
  std::vector<int> order;
  for (long it = 0; it < iters; ++it) {
    const long epoch = it / per_epoch;
    const long pos_in_epoch = it % per_epoch;
    if (pos_in_epoch == 0)
      order = derive_stream(cfg.seed, "vae-shuffle", static_cast<uint64_t>(epoch))
                  .permutation(static_cast<int>(m));
    std::vector<Mat> batch;
    for (long k = pos_in_epoch * cfg.batch_size;
         k < std::min<long>(m, (pos_in_epoch + 1) * cfg.batch_size); ++k)
      batch.push_back(normalized[static_cast<size_t>(order[static_cast<size_t>(k)])]);
    const double loss = vae_train_step(*result.vae, batch, layout.v_lo,
                                       layout.v_hi, opt, cfg.lr_at(it, per_epoch),
                                       noise_rng);
    result.loss_history.push_back(loss);
    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it == iters - 1))
      std::fprintf(stderr, "[vae] iter %ld/%ld loss %.6f\n", it, iters, loss);
  }
  return result;
}

// ---- latent cache ----

void LatentCache::save(const std::string& path) const {
  Checkpoint ck;
  ck.set_config("model", "latent_cache");
  ck.set_config("count", std::to_string(entries.size()));
  std::ostringstream caps;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (i) caps << '\t';
    caps << entries[i].caption;
    std::ostringstream mu_name, lv_name;
    mu_name << "mu." << i;
    lv_name << "lv." << i;
    ck.set_array(mu_name.str(), entries[i].mu);
    ck.set_array(lv_name.str(), entries[i].log_var);
  }
  ck.set_config("captions", caps.str());
  ck.save(path);
}

LatentCache LatentCache::load(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  MOMA_CHECK(ck.get_config("model") == "latent_cache",
             "not a latent cache: " + path);
  const long count = ck.get_config_long("count");
  std::vector<std::string> captions;
  {
    std::istringstream is(ck.get_config("captions"));
    std::string part;
    while (std::getline(is, part, '\t')) captions.push_back(part);
  }
  MOMA_CHECK(static_cast<long>(captions.size()) == count,
             "latent cache: caption count mismatch");
  LatentCache cache;
  for (long i = 0; i < count; ++i) {
    std::ostringstream mu_name, lv_name;
    mu_name << "mu." << i;
    lv_name << "lv." << i;
    cache.entries.push_back(LatentCacheEntry{ck.get_array(mu_name.str()),
                                             ck.get_array(lv_name.str()),
                                             captions[static_cast<size_t>(i)]});
  }
  return cache;
}

LatentCache latent_cache_build(const std::vector<MotionSequence>& corpus,
                               const std::vector<std::string>& captions,
                               const MotionVae& vae, const NormStats& stats) {
  MOMA_CHECK(corpus.size() == captions.size(), "latent cache: size mismatch");
  LatentCache cache;
  cache.entries.reserve(corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    const Mat x = normalize_frames(corpus[i].frames_d(), stats);
    LatentPosterior p = vae.encode(x);
    cache.entries.push_back(LatentCacheEntry{p.mu, p.log_var, captions[i]});
  }
  return cache;
}

LatentCache latent_cache_build_identity(const std::vector<MotionSequence>& corpus,
                                        const std::vector<std::string>& captions,
                                        const NormStats& stats, int max_positions) {
  MOMA_CHECK(corpus.size() == captions.size(), "latent cache: size mismatch");
  LatentCache cache;
  cache.entries.reserve(corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    Mat x = normalize_frames(corpus[i].frames_d(), stats);
    if (x.rows() > max_positions) x = x.topRows(max_positions);
    cache.entries.push_back(LatentCacheEntry{
        x, Mat::Constant(x.rows(), x.cols(), kLogVarClampLo), captions[i]});
  }
  return cache;
}

// ---- stage 2 ----

std::vector<NodePtr> MadModel::trainable_params() const {
  std::vector<NodePtr> out;
  for (const auto& [name, node] : named_params()) out.push_back(node);
  return out;
}

std::vector<std::pair<std::string, NodePtr>> MadModel::named_params() const {
  std::vector<std::pair<std::string, NodePtr>> out;
  transformer->params().collect("transformer.", out);
  if (head) head->params().collect("head.", out);
  if (text) text->params().collect("text.", out);
  return out;
}

MadModel make_mad_model(const TransformerConfig& tcfg, const HeadConfig& hcfg,
                        int t_diff, std::vector<std::string> text_templates,
                        uint64_t seed, bool regression_head) {
  MadModel m;
  m.tcfg = tcfg;
  m.hcfg = hcfg;
  m.regression_head = regression_head;
  if (regression_head)
    MOMA_CHECK(tcfg.cond_dim == tcfg.latent_dim,
               "regression head requires cond_dim == latent_dim");
  m.transformer =
      std::make_shared<LatentTransformer>(tcfg, derive_stream(seed, "t").next_u64());
  if (!regression_head) {
    HeadConfig hc = hcfg;
    hc.latent_dim = tcfg.latent_dim;
    hc.cond_dim = tcfg.cond_dim;
    m.hcfg = hc;
    m.head = std::make_shared<DiffusionHead>(hc, derive_stream(seed, "h").next_u64());
    m.head->set_max_timestep(t_diff);
  }
  m.text = std::make_shared<ToyTextEncoder>(tcfg.text_dim, std::move(text_templates),
                                            derive_stream(seed, "x").next_u64());
  m.schedule = make_schedule(t_diff);
  return m;
}

double mad_train_step(MadModel& model, const LatentCache& cache,
                      const std::vector<int>& batch, nn::AdamOptimizer& opt,
                      double lr, nn::EmaState* ema, RngStream& rng,
                      double cond_dropout) {
  MOMA_CHECK(!batch.empty(), "mad_train_step: empty batch");
  opt.zero_grad();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (int idx : batch) {
    MOMA_CHECK(idx >= 0 && idx < static_cast<int>(cache.entries.size()),
               "mad_train_step: cache index out of range");
    const LatentCacheEntry& e = cache.entries[static_cast<size_t>(idx)];
    const long n = e.mu.rows();

    // Fresh posterior sample each visit.
    Mat noise(n, e.mu.cols());
    for (long r = 0; r < n; ++r)
      for (long c = 0; c < noise.cols(); ++c) noise(r, c) = rng.normal();
    const Mat z = reparameterize(LatentPosterior{e.mu, e.log_var}, noise);

    const MaskFlags mask = sample_train_mask(n, rng);
    const bool drop = rng.uniform() < cond_dropout;

    const std::vector<int> masked = mask.masked_indices();
    const long n_masked = static_cast<long>(masked.size());
    Mat z0(n_masked, z.cols());
    for (long k = 0; k < n_masked; ++k)
      z0.row(k) = z.row(masked[static_cast<size_t>(k)]);
    std::vector<int> t(static_cast<size_t>(n_masked));
    for (auto& tv : t)
      tv = static_cast<int>(rng.integer(static_cast<uint64_t>(model.schedule.t_diff)));
    Mat eps(n_masked, z.cols());
    for (long r = 0; r < n_masked; ++r)
      for (long c = 0; c < eps.cols(); ++c) eps(r, c) = rng.normal();

    const TextEncoding t_enc =
        drop ? model.text->null_embedding() : model.text->encode(e.caption);
    Tensor cond = model.transformer->forward(z, mask, t_enc);
    Tensor cond_masked = gather_rows(cond, masked);

    Tensor loss;
    if (model.regression_head) {
      loss = mean_all(square(sub(cond_masked, Tensor::constant(z0))));
    } else {
      loss = diffusion_loss(z0, t, eps, cond_masked, *model.head, model.schedule);
    }
    total += loss.scalar();
    backward(scale(loss, inv_b));
  }
  opt.step(lr);
  if (ema) ema->update(model.trainable_params());
  return total * inv_b;
}

MadTrainResult train_mad(const LatentCache& cache, const TransformerConfig& tcfg,
                         const HeadConfig& hcfg, int t_diff,
                         std::vector<std::string> text_templates,
                         const TrainConfig& cfg, bool regression_head) {
  MOMA_CHECK(!cache.entries.empty(), "train_mad: empty cache");
  MadTrainResult result;
  result.model = make_mad_model(tcfg, hcfg, t_diff, std::move(text_templates),
                                cfg.seed, regression_head);
  std::vector<NodePtr> params = result.model.trainable_params();
  nn::AdamOptimizer opt(params);
  result.ema = nn::EmaState(params, cfg.ema_decay);

  const long m = static_cast<long>(cache.entries.size());
  const long iters = cfg.resolve_iterations(m);
  const long per_epoch = std::max<long>(1, (m + cfg.batch_size - 1) / cfg.batch_size);
  RngStream rng = derive_stream(cfg.seed, "mad-train");
  std::vector<int> order;
  for (long it = 0; it < iters; ++it) {
    const long epoch = it / per_epoch;
    const long pos = it % per_epoch;
    if (pos == 0)
      order = derive_stream(cfg.seed, "mad-shuffle", static_cast<uint64_t>(epoch))
                  .permutation(static_cast<int>(m));
    std::vector<int> batch;
    for (long k = pos * cfg.batch_size;
         k < std::min<long>(m, (pos + 1) * cfg.batch_size); ++k)
      batch.push_back(order[static_cast<size_t>(k)]);
    const double loss =
        mad_train_step(result.model, cache, batch, opt, cfg.lr_at(it, per_epoch),
                       cfg.use_ema ? &result.ema : nullptr, rng, cfg.cond_dropout);
    result.loss_history.push_back(loss);
    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it == iters - 1))
      std::fprintf(stderr, "[mad] iter %ld/%ld loss %.6f\n", it, iters, loss);
  }
  return result;
}

void ema_update(const std::vector<NodePtr>& params, nn::EmaState& ema) {
  ema.update(params);
}

// ---- checkpoint ----

namespace {

std::string join_tab(const std::vector<std::string>& parts) {
  std::ostringstream os;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) os << '\t';
    os << parts[i];
  }
  return os.str();
}

std::vector<std::string> split_tab(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, '\t')) out.push_back(part);
  return out;
}

}  // namespace

void save_mad_checkpoint(const MadModel& model, const nn::EmaState* ema,
                         uint64_t step, const std::string& path) {
  Checkpoint ck;
  ck.step = step;
  ck.set_config("model", "mad");
  ck.set_config("t.layers", std::to_string(model.tcfg.layers));
  ck.set_config("t.heads", std::to_string(model.tcfg.heads));
  ck.set_config("t.hidden", std::to_string(model.tcfg.hidden));
  ck.set_config("t.cond_dim", std::to_string(model.tcfg.cond_dim));
  ck.set_config("t.max_positions", std::to_string(model.tcfg.max_positions));
  ck.set_config("t.latent_dim", std::to_string(model.tcfg.latent_dim));
  ck.set_config("t.text_dim", std::to_string(model.tcfg.text_dim));
  ck.set_config("t.ffn_mult", std::to_string(model.tcfg.ffn_mult));
  ck.set_config("h.blocks", std::to_string(model.hcfg.blocks));
  ck.set_config("h.width", std::to_string(model.hcfg.width));
  ck.set_config("h.timestep_embed_dim",
                std::to_string(model.hcfg.timestep_embed_dim));
  ck.set_config("h.squared_loss", model.hcfg.squared_loss ? "1" : "0");
  ck.set_config("d.t_diff", std::to_string(model.schedule.t_diff));
  ck.set_config("regression_head", model.regression_head ? "1" : "0");
  ck.set_config("text.templates", join_tab(model.text->templates()));
  for (const auto& [name, node] : model.named_params())
    ck.set_array(name, node->value);
  if (ema) {
    const auto params = model.named_params();
    const auto& shadow = ema->shadow();
    MOMA_CHECK(shadow.size() == params.size(), "save_mad: ema size mismatch");
    ck.set_config("ema.decay", std::to_string(ema->decay()));
    for (size_t i = 0; i < params.size(); ++i)
      ck.set_array("ema." + params[i].first, shadow[i]);
  }
  ck.save(path);
}

LoadedMad load_mad_checkpoint(const std::string& path, bool use_ema_weights) {
  Checkpoint ck = Checkpoint::load(path);
  MOMA_CHECK(ck.get_config("model") == "mad", "not a mad checkpoint: " + path);
  TransformerConfig tcfg;
  tcfg.layers = static_cast<int>(ck.get_config_long("t.layers"));
  tcfg.heads = static_cast<int>(ck.get_config_long("t.heads"));
  tcfg.hidden = static_cast<int>(ck.get_config_long("t.hidden"));
  tcfg.cond_dim = static_cast<int>(ck.get_config_long("t.cond_dim"));
  tcfg.max_positions = static_cast<int>(ck.get_config_long("t.max_positions"));
  tcfg.latent_dim = static_cast<int>(ck.get_config_long("t.latent_dim"));
  tcfg.text_dim = static_cast<int>(ck.get_config_long("t.text_dim"));
  tcfg.ffn_mult = static_cast<int>(ck.get_config_long("t.ffn_mult"));
  HeadConfig hcfg;
  hcfg.blocks = static_cast<int>(ck.get_config_long("h.blocks"));
  hcfg.width = static_cast<int>(ck.get_config_long("h.width"));
  hcfg.timestep_embed_dim =
      static_cast<int>(ck.get_config_long("h.timestep_embed_dim"));
  hcfg.squared_loss = ck.get_config("h.squared_loss") == "1";
  const int t_diff = static_cast<int>(ck.get_config_long("d.t_diff"));
  const bool regression = ck.get_config("regression_head") == "1";

  LoadedMad out;
  out.model = make_mad_model(tcfg, hcfg, t_diff,
                             split_tab(ck.get_config("text.templates")),
                             /*seed=*/0, regression);
  const auto params = out.model.named_params();
  for (const auto& [name, node] : params) {
    const Mat& v = ck.get_array(name);
    MOMA_CHECK(v.rows() == node->value.rows() && v.cols() == node->value.cols(),
               "mad checkpoint: shape mismatch for " + name);
    node->value = v;
  }
  out.has_ema = ck.has_config("ema.decay");
  if (use_ema_weights) {
    MOMA_CHECK(out.has_ema, "mad checkpoint: EMA weights requested but absent");
    for (const auto& [name, node] : params) node->value = ck.get_array("ema." + name);
  }
  out.step = ck.step;
  return out;
}

}  // namespace moma
