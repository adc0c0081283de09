#pragma once

#include <string>
#include <vector>

#include "moma/rng.hpp"
#include "moma/tensor.hpp"

namespace moma::nn {

// Ordered, named parameter registry. Nodes are shared with the modules that
// created them, so optimizers and checkpoints see live values.
class ParamStore {
 public:
  Tensor create(const std::string& name, long rows, long cols,
                std::function<double()> init);
  Tensor create_zeros(const std::string& name, long rows, long cols);
  Tensor create_const(const std::string& name, long rows, long cols, double v);

  const std::vector<std::pair<std::string, NodePtr>>& items() const {
    return items_;
  }
  NodePtr find(const std::string& name) const;
  void zero_grad();
  long total_size() const;

  // Collects this store's nodes into `out`, names prefixed.
  void collect(const std::string& prefix,
               std::vector<std::pair<std::string, NodePtr>>& out) const;

 private:
  std::vector<std::pair<std::string, NodePtr>> items_;
};

// Xavier-uniform bound for a (fan_in, fan_out) weight.
double xavier_bound(long fan_in, long fan_out);

struct Linear {
  Tensor w;  // in x out
  Tensor b;  // 1 x out (optional)
  bool has_bias = true;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, long in, long out,
         RngStream& rng, bool bias = true);
  Tensor forward(const Tensor& x) const;
};

struct Conv1d {
  Tensor w;  // (in*k) x out
  Tensor b;  // 1 x out
  int k = 3, stride = 1, pad = 1;

  Conv1d() = default;
  Conv1d(ParamStore& ps, const std::string& name, long in, long out, int k,
         int stride, int pad, RngStream& rng);
  Tensor forward(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma, beta;  // 1 x C
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, long dim);
  Tensor forward(const Tensor& x) const;
};

// Pre-norm transformer block: x += attn(ln1(x)); x += ffn(ln2(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  Linear wq, wk, wv, wo;
  Linear ff1, ff2;
  int heads = 1;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& ps, const std::string& name, long hidden,
                   int heads, long ffn_mult, RngStream& rng);
  Tensor forward(const Tensor& x) const;
};

Tensor multihead_attention(const Tensor& x, const Linear& wq, const Linear& wk,
                           const Linear& wv, const Linear& wo, int heads);

// Adam over shared parameter nodes.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<NodePtr> params, double beta1 = 0.9,
                double beta2 = 0.99, double eps = 1e-8);
  void step(double lr);
  void zero_grad();
  long step_count() const { return t_; }

 private:
  std::vector<NodePtr> params_;
  std::vector<Mat> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// Exponential moving average of parameter values:
// shadow <- decay*shadow + (1-decay)*param.
class EmaState {
 public:
  EmaState() = default;
  EmaState(const std::vector<NodePtr>& params, double decay);
  void update(const std::vector<NodePtr>& params);
  // Overwrites parameter values with the shadow (used for eval weights).
  void copy_to(const std::vector<NodePtr>& params) const;
  const std::vector<Mat>& shadow() const { return shadow_; }
  std::vector<Mat>& shadow_mut() { return shadow_; }
  double decay() const { return decay_; }

 private:
  std::vector<Mat> shadow_;
  double decay_ = 0.999;
};

}  // namespace moma::nn
