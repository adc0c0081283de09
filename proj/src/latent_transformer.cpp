#include "moma/latent_transformer.hpp"

#include <sstream>

namespace moma {

void TransformerConfig::validate() const {
  MOMA_CHECK(layers >= 0, "transformer config: layers must be >= 0");
  MOMA_CHECK(heads >= 1, "transformer config: heads must be >= 1");
  MOMA_CHECK(hidden % heads == 0,
             "transformer config: hidden must be divisible by heads");
  MOMA_CHECK(cond_dim >= 1 && latent_dim >= 1 && text_dim >= 1,
             "transformer config: dims must be >= 1");
  MOMA_CHECK(max_positions >= 2, "transformer config: max_positions must be >= 2");
}

long MaskFlags::masked_count() const {
  long n = 0;
  for (bool f : flags) n += f ? 1 : 0;
  return n;
}

std::vector<int> MaskFlags::masked_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> MaskFlags::resolved_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < flags.size(); ++i)
    if (!flags[i]) out.push_back(static_cast<int>(i));
  return out;
}

MaskFlags MaskFlags::all_masked(long n) {
  MaskFlags m;
  m.flags.assign(static_cast<size_t>(n), true);
  return m;
}

LatentTransformer::LatentTransformer(TransformerConfig cfg, uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  RngStream rng = derive_stream(seed, "transformer-init");
  mask_token_ = params_.create("mask_token", 1, cfg_.latent_dim,
                               [&] { return 0.02 * rng.normal(); });
  text_proj_ = nn::Linear(params_, "text_proj", cfg_.text_dim, cfg_.hidden, rng);
  in_proj_ = nn::Linear(params_, "in_proj", cfg_.latent_dim, cfg_.hidden, rng);
  pos_table_ = params_.create("pos_table", cfg_.max_positions, cfg_.hidden,
                              [&] { return 0.02 * rng.normal(); });
  for (int i = 0; i < cfg_.layers; ++i) {
    std::ostringstream name;
    name << "block" << i;
    blocks_.emplace_back(params_, name.str(), cfg_.hidden, cfg_.heads,
                         cfg_.ffn_mult, rng);
  }
  final_ln_ = nn::LayerNorm(params_, "final_ln", cfg_.hidden);
  out_proj_ = nn::Linear(params_, "out_proj", cfg_.hidden, cfg_.cond_dim, rng);
}

Tensor LatentTransformer::forward(const Mat& z, const MaskFlags& mask,
                                  const TextEncoding& text) const {
  const long n = z.rows();
  MOMA_CHECK(n >= 1, "transformer: empty latent sequence");
  MOMA_CHECK(mask.size() == n, "transformer: mask length mismatch");
  MOMA_CHECK(n <= cfg_.max_positions - 1,
             "transformer: sequence longer than max_positions - 1");
  MOMA_CHECK(z.cols() == cfg_.latent_dim, "transformer: latent dim mismatch");
  MOMA_CHECK(text.vector.rows() == 1 && text.vector.cols() == cfg_.text_dim,
             "transformer: text embedding dim mismatch");

  // Resolved rows keep their latent values; masked rows become the [MASK]
  // parameter. Masked content is zeroed first so it cannot leak.
  Mat base = z;
  Mat indicator = Mat::Zero(n, 1);
  for (long i = 0; i < n; ++i) {
    if (mask.flags[static_cast<size_t>(i)]) {
      base.row(i).setZero();
      indicator(i, 0) = 1.0;
    }
  }
  Tensor tokens = add(Tensor::constant(base),
                      mul_col_broadcast(repeat_rows(mask_token_, n),
                                        Tensor::constant(indicator)));

  std::vector<int> latent_pos(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) latent_pos[static_cast<size_t>(i)] = static_cast<int>(i) + 1;
  Tensor x = add(in_proj_.forward(tokens), gather_rows(pos_table_, latent_pos));
  Tensor text_row =
      add(text_proj_.forward(text.vector), gather_rows(pos_table_, {0}));
  Tensor h = concat_rows({text_row, x});
  for (const auto& block : blocks_) h = block.forward(h);
  h = final_ln_.forward(h);
  Tensor cond = out_proj_.forward(h);
  return slice_rows(cond, 1, n + 1);
}

Mat LatentTransformer::forward_values(const Mat& z, const MaskFlags& mask,
                                      const TextEncoding& text) const {
  NoGradGuard ng;
  return forward(z, mask, text).value();
}

Mat cfg_combine(const Mat& cond, const Mat& uncond, double s_c) {
  MOMA_CHECK(cond.rows() == uncond.rows() && cond.cols() == uncond.cols(),
             "cfg_combine: shape mismatch");
  return uncond + s_c * (cond - uncond);
}

}  // namespace moma
