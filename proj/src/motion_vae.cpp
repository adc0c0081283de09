#include "moma/motion_vae.hpp"

#include <sstream>

namespace moma {

void VaeConfig::validate() const {
  MOMA_CHECK(feature_dim > 0, "vae config: feature_dim must be > 0");
  MOMA_CHECK(latent_dim > 0, "vae config: latent_dim must be > 0");
  MOMA_CHECK(res_layers >= 0, "vae config: res_layers must be >= 0");
  MOMA_CHECK(down_layers >= 1, "vae config: down_layers must be >= 1");
  MOMA_CHECK(static_cast<int>(widths.size()) == down_layers,
             "vae config: need one width per stage");
  MOMA_CHECK(kl_weight >= 0 && vel_weight >= 0,
             "vae config: loss weights must be >= 0");
}

MotionVae::MotionVae(VaeConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  RngStream rng = derive_stream(seed, "vae-init");
  const int d = cfg_.feature_dim;
  const int c = cfg_.latent_dim;

  enc_in_ = nn::Conv1d(params_, "enc.in", d, cfg_.widths[0], 3, 1, 1, rng);
  int prev = cfg_.widths[0];
  for (int s = 0; s < cfg_.down_layers; ++s) {
    const int w = cfg_.widths[s];
    EncStage stage;
    std::ostringstream base;
    base << "enc.s" << s;
    stage.down = nn::Conv1d(params_, base.str() + ".down", prev, w, 3, 2, 1, rng);
    for (int r = 0; r < cfg_.res_layers; ++r) {
      std::ostringstream rb;
      rb << base.str() << ".res" << r;
      stage.res.push_back(ResBlock{
          nn::Conv1d(params_, rb.str() + ".c1", w, w, 3, 1, 1, rng),
          nn::Conv1d(params_, rb.str() + ".c2", w, w, 3, 1, 1, rng)});
    }
    enc_stages_.push_back(std::move(stage));
    prev = w;
  }
  mu_head_ = nn::Linear(params_, "enc.mu", prev, c, rng);
  logvar_head_ = nn::Linear(params_, "enc.logvar", prev, c, rng);

  dec_in_ = nn::Linear(params_, "dec.in", c, prev, rng);
  for (int s = cfg_.down_layers - 1; s >= 0; --s) {
    const int w = cfg_.widths[s];
    const int w_out = s > 0 ? cfg_.widths[s - 1] : cfg_.widths[0];
    DecStage stage;
    std::ostringstream base;
    base << "dec.s" << s;
    for (int r = 0; r < cfg_.res_layers; ++r) {
      std::ostringstream rb;
      rb << base.str() << ".res" << r;
      stage.res.push_back(ResBlock{
          nn::Conv1d(params_, rb.str() + ".c1", w, w, 3, 1, 1, rng),
          nn::Conv1d(params_, rb.str() + ".c2", w, w, 3, 1, 1, rng)});
    }
    stage.up = nn::Conv1d(params_, base.str() + ".up", w, w_out, 3, 1, 1, rng);
    dec_stages_.push_back(std::move(stage));
  }
  dec_out_ = nn::Conv1d(params_, "dec.out", cfg_.widths[0], d, 3, 1, 1, rng);
  nll_log_var_ = params_.create_zeros("nll.log_var", 1, 1);
}

Tensor MotionVae::res_forward(const ResBlock& b, const Tensor& x) const {
  return add(x, b.conv2.forward(silu(b.conv1.forward(silu(x)))));
}

std::pair<Tensor, Tensor> MotionVae::encode_t(const Tensor& x_norm) const {
  const int l = cfg_.downsample();
  MOMA_CHECK(x_norm.rows() >= l, "encode: T must be >= downsample factor");
  MOMA_CHECK(x_norm.cols() == cfg_.feature_dim, "encode: feature dim mismatch");
  const long n = x_norm.rows() / l;
  Tensor h = x_norm.rows() % l == 0 ? x_norm : slice_rows(x_norm, 0, n * l);
  h = enc_in_.forward(h);
  for (const auto& stage : enc_stages_) {
    h = stage.down.forward(h);
    for (const auto& r : stage.res) h = res_forward(r, h);
  }
  Tensor mu = mu_head_.forward(h);
  Tensor log_var = clamp(logvar_head_.forward(h), kLogVarClampLo, kLogVarClampHi);
  return {mu, log_var};
}

Tensor MotionVae::decode_t(const Tensor& z) const {
  MOMA_CHECK(z.rows() >= 1, "decode: N must be >= 1");
  MOMA_CHECK(z.cols() == cfg_.latent_dim, "decode: latent dim mismatch");
  Tensor h = dec_in_.forward(z);
  for (const auto& stage : dec_stages_) {
    for (const auto& r : stage.res) h = res_forward(r, h);
    h = stage.up.forward(upsample_rows2(h));
  }
  return dec_out_.forward(h);
}

LatentPosterior MotionVae::encode(const Mat& x_norm) const {
  NoGradGuard ng;
  auto [mu, lv] = encode_t(Tensor::constant(x_norm));
  return LatentPosterior{mu.value(), lv.value()};
}

Mat MotionVae::encode_mean(const Mat& x_norm) const {
  NoGradGuard ng;
  auto [mu, lv] = encode_t(Tensor::constant(x_norm));
  return mu.value();
}

Mat MotionVae::decode_values(const Mat& z) const {
  NoGradGuard ng;
  return decode_t(Tensor::constant(z)).value();
}

Mat reparameterize(const LatentPosterior& p, const Mat& noise) {
  MOMA_CHECK(p.mu.rows() == noise.rows() && p.mu.cols() == noise.cols() &&
                 p.mu.rows() == p.log_var.rows() &&
                 p.mu.cols() == p.log_var.cols(),
             "reparameterize: shape mismatch");
  return p.mu.array() + (0.5 * p.log_var.array()).exp() * noise.array();
}

Tensor reparameterize_t(const Tensor& mu, const Tensor& log_var,
                        const Mat& noise) {
  MOMA_CHECK(mu.rows() == noise.rows() && mu.cols() == noise.cols(),
             "reparameterize: shape mismatch");
  return add(mu, mul(exp(scale(log_var, 0.5)), Tensor::constant(noise)));
}

Tensor loss_nll(const Tensor& recon, const Mat& target,
                const Tensor& nll_log_var) {
  MOMA_CHECK(recon.rows() == target.rows() && recon.cols() == target.cols(),
             "loss_nll: shape mismatch");
  Tensor r = mean_all(abs(sub(recon, Tensor::constant(target))));
  Tensor inv_sigma_sq = exp(scale(nll_log_var, -1.0));
  return add(mul(r, inv_sigma_sq), nll_log_var);
}

Tensor loss_kl(const Tensor& mu, const Tensor& log_var) {
  Tensor term = add_scalar(sub(sub(log_var, square(mu)), exp(log_var)), 1.0);
  return scale(mean_all(term), -0.5);
}

Tensor loss_velocity(const Tensor& recon, const Mat& target, int v_lo, int v_hi) {
  MOMA_CHECK(recon.rows() == target.rows() && recon.cols() == target.cols(),
             "loss_velocity: shape mismatch");
  MOMA_CHECK(0 <= v_lo && v_lo < v_hi && v_hi <= recon.cols(),
             "loss_velocity: bad velocity range");
  Tensor pred_v = slice_cols(recon, v_lo, v_hi);
  Mat target_v = target.middleCols(v_lo, v_hi - v_lo);
  return mean_all(abs(sub(pred_v, Tensor::constant(target_v))));
}

VaeLossParts vae_total_loss(const Tensor& recon, const Mat& target,
                            const Tensor& mu, const Tensor& log_var,
                            const Tensor& nll_log_var, const VaeConfig& cfg,
                            int v_lo, int v_hi) {
  VaeLossParts parts;
  parts.nll = loss_nll(recon, target, nll_log_var);
  parts.kl = loss_kl(mu, log_var);
  parts.velocity = loss_velocity(recon, target, v_lo, v_hi);
  parts.total = add(parts.nll, add(scale(parts.kl, cfg.kl_weight),
                                   scale(parts.velocity, cfg.vel_weight)));
  return parts;
}

namespace {

std::string join_widths(const std::vector<int>& widths) {
  std::ostringstream os;
  for (size_t i = 0; i < widths.size(); ++i) {
    if (i) os << ',';
    os << widths[i];
  }
  return os.str();
}

std::vector<int> parse_widths(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) out.push_back(std::stoi(part));
  return out;
}

}  // namespace

void save_vae_checkpoint(const MotionVae& vae, const NormStats& stats,
                         const LayoutDescriptor& layout, float fps,
                         uint64_t step, const std::string& path) {
  const VaeConfig& cfg = vae.config();
  Checkpoint ck;
  ck.step = step;
  ck.set_config("model", "motion_vae");
  ck.set_config("layout.fps", std::to_string(fps));
  ck.set_config("vae.feature_dim", std::to_string(cfg.feature_dim));
  ck.set_config("vae.latent_dim", std::to_string(cfg.latent_dim));
  ck.set_config("vae.res_layers", std::to_string(cfg.res_layers));
  ck.set_config("vae.down_layers", std::to_string(cfg.down_layers));
  ck.set_config("vae.widths", join_widths(cfg.widths));
  ck.set_config("vae.kl_weight", std::to_string(cfg.kl_weight));
  ck.set_config("vae.vel_weight", std::to_string(cfg.vel_weight));
  ck.set_config("layout.kind",
                layout.kind == LayoutKind::kToy ? "toy" : "humanml3d");
  ck.set_config("layout.d", std::to_string(layout.d));
  ck.set_config("layout.joint_count", std::to_string(layout.joint_count));
  ck.set_config("layout.v_lo", std::to_string(layout.v_lo));
  ck.set_config("layout.v_hi", std::to_string(layout.v_hi));
  ck.put_params("vae.", vae.params());
  ck.set_array("norm.mean", stats.mean.transpose());
  ck.set_array("norm.std", stats.std.transpose());
  ck.save(path);
}

LoadedVae load_vae_checkpoint(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  MOMA_CHECK(ck.get_config("model") == "motion_vae",
             "not a motion_vae checkpoint: " + path);
  VaeConfig cfg;
  cfg.feature_dim = static_cast<int>(ck.get_config_long("vae.feature_dim"));
  cfg.latent_dim = static_cast<int>(ck.get_config_long("vae.latent_dim"));
  cfg.res_layers = static_cast<int>(ck.get_config_long("vae.res_layers"));
  cfg.down_layers = static_cast<int>(ck.get_config_long("vae.down_layers"));
  cfg.widths = parse_widths(ck.get_config("vae.widths"));
  cfg.kl_weight = ck.get_config_double("vae.kl_weight");
  cfg.vel_weight = ck.get_config_double("vae.vel_weight");

  LoadedVae out;
  out.vae = std::make_shared<MotionVae>(cfg, /*seed=*/0);
  ck.load_params("vae.", out.vae->params());
  out.stats.mean = ck.get_array("norm.mean").row(0).transpose();
  out.stats.std = ck.get_array("norm.std").row(0).transpose();
  out.layout.kind = ck.get_config("layout.kind") == "toy" ? LayoutKind::kToy
                                                          : LayoutKind::kHumanml3d;
  out.layout.d = static_cast<int>(ck.get_config_long("layout.d"));
  out.layout.joint_count =
      static_cast<int>(ck.get_config_long("layout.joint_count"));
  out.layout.v_lo = static_cast<int>(ck.get_config_long("layout.v_lo"));
  out.layout.v_hi = static_cast<int>(ck.get_config_long("layout.v_hi"));
  out.fps = static_cast<float>(ck.get_config_double("layout.fps"));
  out.step = ck.step;
  return out;
}

}  // namespace moma
