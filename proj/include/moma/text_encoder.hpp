#pragma once

#include <memory>
#include <string>
#include <vector>

#include "moma/nn.hpp"
#include "moma/tensor.hpp"

namespace moma {

struct TextEncoding {
  Tensor vector;  // 1 x e
  bool null_flag = false;
};

// Pluggable caption encoder. The paper uses CLIP; here the toy encoder and a
// pre-encoded vector file stand in behind the same interface.
class TextEncoderBase {
 public:
  virtual ~TextEncoderBase() = default;
  virtual TextEncoding encode(const std::string& caption) const = 0;
  virtual TextEncoding null_embedding() const = 0;
  virtual int dim() const = 0;
};

// Learned lookup over registered caption templates with a hashed word-token
// fallback, plus a dedicated learned null embedding. All rows are trainable.
class ToyTextEncoder : public TextEncoderBase {
 public:
  ToyTextEncoder(int embed_dim, std::vector<std::string> templates,
                 uint64_t seed, int n_buckets = 64);

  TextEncoding encode(const std::string& caption) const override;
  TextEncoding null_embedding() const override;
  int dim() const override { return embed_dim_; }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const std::vector<std::string>& templates() const { return templates_; }
  int buckets() const { return n_buckets_; }

 private:
  int embed_dim_;
  int n_buckets_;
  std::vector<std::string> templates_;
  nn::ParamStore params_;
  Tensor template_table_;  // n_templates x e
  Tensor bucket_table_;    // n_buckets x e
  Tensor null_row_;        // 1 x e
};

// Captions pre-encoded offline, loaded from a sidecar file of
// "caption<TAB>e space-separated reals" lines. The "<null>" caption, when
// present, supplies the unconditional embedding; otherwise zeros are used.
class VectorFileTextEncoder : public TextEncoderBase {
 public:
  explicit VectorFileTextEncoder(const std::string& path);

  TextEncoding encode(const std::string& caption) const override;
  TextEncoding null_embedding() const override;
  int dim() const override { return embed_dim_; }

 private:
  int embed_dim_ = 0;
  std::vector<std::pair<std::string, Mat>> entries_;
  Mat null_vec_;
};

// Lowercased word hash used by the toy fallback path.
std::vector<int> hash_caption_tokens(const std::string& caption, int n_buckets);

}  // namespace moma
