#pragma once

#include <string>
#include <vector>

#include "moma/config.hpp"
#include "moma/eval_protocol.hpp"
#include "moma/motion_vae.hpp"

namespace moma {

// Observation-space codec: latents are the normalized frames themselves.
// Stands in for the VAE in the component-removal ablations.
class IdentityCodec : public LatentCodec {
 public:
  explicit IdentityCodec(int dim) : dim_(dim) {}
  Mat encode_mean(const Mat& x_norm) const override { return x_norm; }
  Mat decode_values(const Mat& z) const override { return z; }
  int downsample_factor() const override { return 1; }
  int latent_dim() const override { return dim_; }

 private:
  int dim_;
};

struct AblationPaths {
  std::string train_manifest;
  std::string test_manifest;
  std::string out_dir;
  // Reused when non-empty; otherwise trained at the configured toy budget
  // and written into out_dir.
  std::string vae_ckpt;
  std::string mad_ckpt;
  std::string eval_ckpt;
};

struct AblationTable {
  std::string name;
  std::vector<std::string> columns;
  struct Row {
    std::string name;
    std::vector<double> values;
  };
  std::vector<Row> rows;

  std::string to_markdown() const;
  std::string to_kv() const;
};

// name is one of: modes, steps, cfg_r, head_depth, components.
AblationTable run_ablation(const std::string& name, const RunConfig& cfg,
                           const AblationPaths& paths);

}  // namespace moma
