#include "moma/nn.hpp"

#include <cmath>

namespace moma::nn {

Tensor ParamStore::create(const std::string& name, long rows, long cols,
                          std::function<double()> init) {
  MOMA_CHECK(find(name) == nullptr, "duplicate parameter name: " + name);
  Mat v(rows, cols);
  for (long c = 0; c < cols; ++c)
    for (long r = 0; r < rows; ++r) v(r, c) = init();
  Tensor t = Tensor::param(std::move(v));
  items_.emplace_back(name, t.node);
  return t;
}

Tensor ParamStore::create_zeros(const std::string& name, long rows, long cols) {
  return create_const(name, rows, cols, 0.0);
}

Tensor ParamStore::create_const(const std::string& name, long rows, long cols,
                                double v) {
  return create(name, rows, cols, [v] { return v; });
}

NodePtr ParamStore::find(const std::string& name) const {
  for (const auto& [n, p] : items_)
    if (n == name) return p;
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& [n, p] : items_) {
    p->ensure_grad();
    p->grad.setZero();
  }
}

long ParamStore::total_size() const {
  long s = 0;
  for (const auto& [n, p] : items_) s += p->value.size();
  return s;
}

void ParamStore::collect(const std::string& prefix,
                         std::vector<std::pair<std::string, NodePtr>>& out) const {
  for (const auto& [n, p] : items_) out.emplace_back(prefix + n, p);
}

double xavier_bound(long fan_in, long fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Linear::Linear(ParamStore& ps, const std::string& name, long in, long out,
               RngStream& rng, bool bias)
    : has_bias(bias) {
  const double bnd = xavier_bound(in, out);
  w = ps.create(name + ".w", in, out, [&] { return rng.uniform(-bnd, bnd); });
  if (bias) b = ps.create_zeros(name + ".b", 1, out);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, w);
  return has_bias ? add_row_broadcast(y, b) : y;
}

Conv1d::Conv1d(ParamStore& ps, const std::string& name, long in, long out,
               int k_, int stride_, int pad_, RngStream& rng)
    : k(k_), stride(stride_), pad(pad_) {
  const long fan_in = in * k_;
  const double bnd = xavier_bound(fan_in, out);
  w = ps.create(name + ".w", fan_in, out, [&] { return rng.uniform(-bnd, bnd); });
  b = ps.create_zeros(name + ".b", 1, out);
}

Tensor Conv1d::forward(const Tensor& x) const {
  return conv1d(x, w, b, k, stride, pad);
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, long dim) {
  gamma = ps.create_const(name + ".g", 1, dim, 1.0);
  beta = ps.create_zeros(name + ".b", 1, dim);
}

Tensor LayerNorm::forward(const Tensor& x) const {
  return add_row_broadcast(mul_row_broadcast(layer_norm_rows(x, eps), gamma),
                           beta);
}

Tensor multihead_attention(const Tensor& x, const Linear& wq, const Linear& wk,
                           const Linear& wv, const Linear& wo, int heads) {
  const long hidden = x.cols();
  MOMA_CHECK(hidden % heads == 0, "attention: hidden not divisible by heads");
  const long dh = hidden / heads;
  Tensor q = wq.forward(x), k = wk.forward(x), v = wv.forward(x);
  std::vector<Tensor> ctx;
  ctx.reserve(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor att = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    ctx.push_back(matmul(att, vh));
  }
  return wo.forward(concat_cols(ctx));
}

TransformerBlock::TransformerBlock(ParamStore& ps, const std::string& name,
                                   long hidden, int heads_, long ffn_mult,
                                   RngStream& rng)
    : ln1(ps, name + ".ln1", hidden),
      ln2(ps, name + ".ln2", hidden),
      wq(ps, name + ".wq", hidden, hidden, rng),
      wk(ps, name + ".wk", hidden, hidden, rng),
      wv(ps, name + ".wv", hidden, hidden, rng),
      wo(ps, name + ".wo", hidden, hidden, rng),
      ff1(ps, name + ".ff1", hidden, hidden * ffn_mult, rng),
      ff2(ps, name + ".ff2", hidden * ffn_mult, hidden, rng),
      heads(heads_) {}

Tensor TransformerBlock::forward(const Tensor& x) const {
  Tensor h = add(x, multihead_attention(ln1.forward(x), wq, wk, wv, wo, heads));
  return add(h, ff2.forward(gelu(ff1.forward(ln2.forward(h)))));
}

AdamOptimizer::AdamOptimizer(std::vector<NodePtr> params, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamOptimizer::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Node& p = *params_[i];
    p.ensure_grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    const Mat mhat = m_[i] / bc1;
    const Mat vhat = v_[i] / bc2;
    p.value.array() -=
        lr * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) {
    p->ensure_grad();
    p->grad.setZero();
  }
}

EmaState::EmaState(const std::vector<NodePtr>& params, double decay)
    : decay_(decay) {
  shadow_.reserve(params.size());
  for (const auto& p : params) shadow_.push_back(p->value);
}

void EmaState::update(const std::vector<NodePtr>& params) {
  MOMA_CHECK(params.size() == shadow_.size(), "ema: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    MOMA_CHECK(shadow_[i].rows() == params[i]->value.rows() &&
                   shadow_[i].cols() == params[i]->value.cols(),
               "ema: shape mismatch");
    shadow_[i] = decay_ * shadow_[i] + (1.0 - decay_) * params[i]->value;
  }
}

void EmaState::copy_to(const std::vector<NodePtr>& params) const {
  MOMA_CHECK(params.size() == shadow_.size(), "ema: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) params[i]->value = shadow_[i];
}

}  // namespace moma::nn
