#pragma once

#include <vector>

#include "moma/nn.hpp"
#include "moma/tensor.hpp"
#include "moma/text_encoder.hpp"

namespace moma {

struct TransformerConfig {
  int layers = 16;
  int heads = 8;
  int hidden = 1024;
  int cond_dim = 512;       // condition token width
  int max_positions = 50;   // 49 latent positions + 1 text slot
  int latent_dim = 512;     // c of the incoming latent tokens
  int text_dim = 64;        // e of the text embedding
  int ffn_mult = 4;

  void validate() const;
};

// true = position is masked (unresolved).
struct MaskFlags {
  std::vector<bool> flags;

  long size() const { return static_cast<long>(flags.size()); }
  long masked_count() const;
  std::vector<int> masked_indices() const;
  std::vector<int> resolved_indices() const;
  static MaskFlags all_masked(long n);
};

// Bidirectional transformer over [text, z_1..z_N]. Masked positions are
// replaced by the learned continuous [MASK] token before projection, so
// their content in z never reaches the network. Output strips the text slot.
class LatentTransformer {
 public:
  LatentTransformer(TransformerConfig cfg, uint64_t seed);

  // z is N x c (values at masked rows ignored). Returns N x cond_dim.
  Tensor forward(const Mat& z, const MaskFlags& mask,
                 const TextEncoding& text) const;
  Mat forward_values(const Mat& z, const MaskFlags& mask,
                     const TextEncoding& text) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const TransformerConfig& config() const { return cfg_; }

 private:
  TransformerConfig cfg_;
  nn::ParamStore params_;
  Tensor mask_token_;      // 1 x c learned [MASK]
  nn::Linear text_proj_;   // e -> hidden
  nn::Linear in_proj_;     // c -> hidden
  Tensor pos_table_;       // max_positions x hidden, row 0 = text slot
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_ln_;
  nn::Linear out_proj_;    // hidden -> cond_dim
};

// Classifier-free guidance: c_uncond + s_c * (c_cond - c_uncond).
Mat cfg_combine(const Mat& cond, const Mat& uncond, double s_c);

}  // namespace moma
