#include "moma/diffusion_head.hpp"

#include <cmath>
#include <sstream>

namespace moma {

namespace {
// Gates start small but nonzero: a zero gate would cut the only gradient
// path from the loss back into the condition tokens (and the transformer
// behind them) on the first step.
constexpr double kGateInit = 0.1;
}  // namespace

void HeadConfig::validate() const {
  MOMA_CHECK(blocks >= 1, "head config: blocks must be >= 1");
  MOMA_CHECK(latent_dim >= 1 && cond_dim >= 1, "head config: dims must be >= 1");
  MOMA_CHECK(timestep_embed_dim >= 2 && timestep_embed_dim % 2 == 0,
             "head config: timestep_embed_dim must be even and >= 2");
}

DiffusionHead::DiffusionHead(HeadConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  RngStream rng = derive_stream(seed, "head-init");
  const int ted = cfg_.timestep_embed_dim;
  const int w = cfg_.effective_width();
  t_proj1_ = nn::Linear(params_, "t_proj1", ted, ted, rng);
  t_proj2_ = nn::Linear(params_, "t_proj2", ted, ted, rng);
  cond_proj_ = nn::Linear(params_, "cond_proj", cfg_.cond_dim, ted, rng);
  in_proj_ = nn::Linear(params_, "in_proj", cfg_.latent_dim, w, rng);
  for (int i = 0; i < cfg_.blocks; ++i) {
    std::ostringstream name;
    name << "block" << i;
    Block b;
    b.ada = nn::Linear(params_, name.str() + ".ada", ted, 2 * w, rng);
    b.fc1 = nn::Linear(params_, name.str() + ".fc1", w, w, rng);
    b.fc2 = nn::Linear(params_, name.str() + ".fc2", w, w, rng);
    b.gate = params_.create_const(name.str() + ".gate", 1, w, kGateInit);
    blocks_.push_back(std::move(b));
  }
  out_proj_ = nn::Linear(params_, "out_proj", w, cfg_.latent_dim, rng);
}

Tensor DiffusionHead::timestep_embed(const std::vector<int>& t) const {
  const int ted = cfg_.timestep_embed_dim;
  const int half = ted / 2;
  Mat feats(static_cast<long>(t.size()), ted);
  for (size_t r = 0; r < t.size(); ++r) {
    MOMA_CHECK(t[r] >= 0 && t[r] < max_timestep_,
               "timestep_embed: step out of range");
    for (int i = 0; i < half; ++i) {
      const double w =
          std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
      feats(static_cast<long>(r), i) = std::sin(t[r] * w);
      feats(static_cast<long>(r), half + i) = std::cos(t[r] * w);
    }
  }
  return t_proj2_.forward(silu(t_proj1_.forward(Tensor::constant(feats))));
}

Tensor DiffusionHead::forward(const Tensor& z_t, const std::vector<int>& t,
                              const Tensor& cond) const {
  MOMA_CHECK(z_t.cols() == cfg_.latent_dim, "head: latent dim mismatch");
  MOMA_CHECK(cond.cols() == cfg_.cond_dim, "head: cond dim mismatch");
  MOMA_CHECK(z_t.rows() == cond.rows(), "head: row count mismatch");
  MOMA_CHECK(static_cast<long>(t.size()) == z_t.rows(),
             "head: one timestep per row required");

  Tensor cvec = add(timestep_embed(t), cond_proj_.forward(cond));
  Tensor h = in_proj_.forward(z_t);
  const int w = cfg_.effective_width();
  for (const auto& b : blocks_) {
    Tensor mod = b.ada.forward(silu(cvec));
    Tensor sc = add_scalar(slice_cols(mod, 0, w), 1.0);
    Tensor sh = slice_cols(mod, w, 2 * w);
    Tensor x = add(mul(layer_norm_rows(h), sc), sh);
    x = b.fc2.forward(silu(b.fc1.forward(x)));
    h = add(h, mul_row_broadcast(x, b.gate));
  }
  return out_proj_.forward(h);
}

Mat DiffusionHead::denoise(const Mat& z_t, int t, const Mat& cond) const {
  NoGradGuard ng;
  std::vector<int> ts(static_cast<size_t>(z_t.rows()), t);
  return forward(Tensor::constant(z_t), ts, Tensor::constant(cond)).value();
}

Tensor diffusion_loss(const Mat& z0_masked, const std::vector<int>& t,
                      const Mat& eps, const Tensor& cond_masked,
                      const DiffusionHead& head, const NoiseSchedule& sched) {
  const long rows = z0_masked.rows();
  MOMA_CHECK(rows >= 1, "diffusion_loss: no masked positions");
  MOMA_CHECK(eps.rows() == rows && eps.cols() == z0_masked.cols(),
             "diffusion_loss: eps shape mismatch");
  MOMA_CHECK(cond_masked.rows() == rows, "diffusion_loss: cond rows mismatch");
  MOMA_CHECK(static_cast<long>(t.size()) == rows,
             "diffusion_loss: step count mismatch");

  Mat z_t(rows, z0_masked.cols());
  for (long r = 0; r < rows; ++r) {
    const double ab = sched.alpha_bar_at(t[static_cast<size_t>(r)]);
    z_t.row(r) = std::sqrt(ab) * z0_masked.row(r) +
                 std::sqrt(1.0 - ab) * eps.row(r);
  }
  Tensor zhat0 = head.forward(Tensor::constant(z_t), t, cond_masked);
  Tensor diff = sub(zhat0, Tensor::constant(z0_masked));
  if (head.config().squared_loss) return mean_all(square(diff));
  return mean_all(sqrt(add_scalar(sum_cols(square(diff)), 1e-12)));
}

}  // namespace moma
