#include "moma/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace moma {

namespace {

thread_local bool g_grad_enabled = true;

NodePtr make_node(Mat value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool req = false;
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p && p->requires_grad) req = true;
  }
  n->requires_grad = req;
  if (req) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Tensor Tensor::constant(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = false;
  return Tensor(n);
}

Tensor Tensor::param(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  n->ensure_grad();
  return Tensor(n);
}

void backward(const Tensor& loss) {
  MOMA_CHECK(loss.defined(), "backward: undefined tensor");
  MOMA_CHECK(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be 1x1");
  if (!loss.node->requires_grad) return;

  // Post-order DFS (iterative) to get a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node.get(), 0);
  visited.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      Node* p = node->parents[child++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node->ensure_grad();
  loss.node->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      for (auto& p : n->parents)
        if (p && p->requires_grad) p->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  MOMA_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  NodePtr an = a.node, bn = b.node;
  return Tensor(make_node(a.value() + b.value(), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) an->grad += n.grad;
    if (bn->requires_grad) bn->grad += n.grad;
  }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  MOMA_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  NodePtr an = a.node, bn = b.node;
  return Tensor(make_node(a.value() - b.value(), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) an->grad += n.grad;
    if (bn->requires_grad) bn->grad -= n.grad;
  }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  MOMA_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  NodePtr an = a.node, bn = b.node;
  return Tensor(make_node(a.value().cwiseProduct(b.value()), {an, bn},
                          [an, bn](Node& n) {
                            if (an->requires_grad)
                              an->grad += n.grad.cwiseProduct(bn->value);
                            if (bn->requires_grad)
                              bn->grad += n.grad.cwiseProduct(an->value);
                          }));
}

Tensor scale(const Tensor& a, double s) {
  NodePtr an = a.node;
  return Tensor(make_node(a.value() * s, {an}, [an, s](Node& n) {
    if (an->requires_grad) an->grad += n.grad * s;
  }));
}

Tensor add_scalar(const Tensor& a, double s) {
  NodePtr an = a.node;
  return Tensor(make_node(a.value().array() + s, {an}, [an](Node& n) {
    if (an->requires_grad) an->grad += n.grad;
  }));
}

Tensor exp(const Tensor& a) {
  NodePtr an = a.node;
  Mat y = a.value().array().exp();
  return Tensor(make_node(y, {an}, [an](Node& n) {
    if (an->requires_grad) an->grad += n.grad.cwiseProduct(n.value);
  }));
}

Tensor abs(const Tensor& a) {
  NodePtr an = a.node;
  return Tensor(make_node(a.value().cwiseAbs(), {an}, [an](Node& n) {
    if (an->requires_grad)
      an->grad += n.grad.cwiseProduct(
          an->value.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }));
  }));
}

Tensor square(const Tensor& a) {
  NodePtr an = a.node;
  return Tensor(make_node(a.value().cwiseProduct(a.value()), {an}, [an](Node& n) {
    if (an->requires_grad) an->grad += 2.0 * n.grad.cwiseProduct(an->value);
  }));
}

Tensor sqrt(const Tensor& a) {
  NodePtr an = a.node;
  Mat y = a.value().cwiseSqrt();
  return Tensor(make_node(std::move(y), {an}, [an](Node& n) {
    if (an->requires_grad)
      an->grad += n.grad.cwiseQuotient(2.0 * n.value.cwiseMax(1e-300));
  }));
}

Tensor silu(const Tensor& a) {
  NodePtr an = a.node;
  Mat y = a.value().unaryExpr([](double v) { return v * sigmoid(v); });
  return Tensor(make_node(std::move(y), {an}, [an](Node& n) {
    if (!an->requires_grad) return;
    Mat d = an->value.unaryExpr([](double v) {
      const double s = sigmoid(v);
      return s * (1.0 + v * (1.0 - s));
    });
    an->grad += n.grad.cwiseProduct(d);
  }));
}

Tensor gelu(const Tensor& a) {
  NodePtr an = a.node;
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  Mat y = a.value().unaryExpr(
      [&](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  return Tensor(make_node(std::move(y), {an}, [an](Node& n) {
    if (!an->requires_grad) return;
    Mat d = an->value.unaryExpr([&](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
             v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
    an->grad += n.grad.cwiseProduct(d);
  }));
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  NodePtr an = a.node;
  Mat y = a.value().cwiseMax(lo).cwiseMin(hi);
  return Tensor(make_node(std::move(y), {an}, [an, lo, hi](Node& n) {
    if (!an->requires_grad) return;
    Mat mask = an->value.unaryExpr(
        [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
    an->grad += n.grad.cwiseProduct(mask);
  }));
}

Tensor mul_scalar_node(const Tensor& a, const Tensor& s) {
  MOMA_CHECK(s.rows() == 1 && s.cols() == 1, "mul_scalar_node: s must be 1x1");
  NodePtr an = a.node, sn = s.node;
  return Tensor(make_node(a.value() * s.scalar(), {an, sn}, [an, sn](Node& n) {
    if (an->requires_grad) an->grad += n.grad * sn->value(0, 0);
    if (sn->requires_grad)
      sn->grad(0, 0) += n.grad.cwiseProduct(an->value).sum();
  }));
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  MOMA_CHECK(a.cols() == b.rows(), "matmul: inner dims mismatch");
  NodePtr an = a.node, bn = b.node;
  Mat y(a.rows(), b.cols());
  // Row-looped so that evaluating any subset of rows matches the batched
  // result bit for bit.
  for (long r = 0; r < a.rows(); ++r)
    y.row(r).noalias() = an->value.row(r) * bn->value;
  return Tensor(make_node(std::move(y), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) an->grad.noalias() += n.grad * bn->value.transpose();
    if (bn->requires_grad) bn->grad.noalias() += an->value.transpose() * n.grad;
  }));
}

Tensor transpose(const Tensor& a) {
  NodePtr an = a.node;
  return Tensor(make_node(a.value().transpose(), {an}, [an](Node& n) {
    if (an->requires_grad) an->grad += n.grad.transpose();
  }));
}

Tensor add_row_broadcast(const Tensor& x, const Tensor& row) {
  MOMA_CHECK(row.rows() == 1 && row.cols() == x.cols(),
             "add_row_broadcast: shape mismatch");
  NodePtr xn = x.node, rn = row.node;
  Mat y = x.value().rowwise() + row.value().row(0);
  return Tensor(make_node(std::move(y), {xn, rn}, [xn, rn](Node& n) {
    if (xn->requires_grad) xn->grad += n.grad;
    if (rn->requires_grad) rn->grad.row(0) += n.grad.colwise().sum();
  }));
}

Tensor mul_row_broadcast(const Tensor& x, const Tensor& row) {
  MOMA_CHECK(row.rows() == 1 && row.cols() == x.cols(),
             "mul_row_broadcast: shape mismatch");
  NodePtr xn = x.node, rn = row.node;
  Mat y = x.value().array().rowwise() * row.value().row(0).array();
  return Tensor(make_node(std::move(y), {xn, rn}, [xn, rn](Node& n) {
    if (xn->requires_grad)
      xn->grad.array() += n.grad.array().rowwise() * rn->value.row(0).array();
    if (rn->requires_grad)
      rn->grad.row(0) += n.grad.cwiseProduct(xn->value).colwise().sum();
  }));
}

Tensor mul_col_broadcast(const Tensor& x, const Tensor& col) {
  MOMA_CHECK(col.cols() == 1 && col.rows() == x.rows(),
             "mul_col_broadcast: shape mismatch");
  NodePtr xn = x.node, cn = col.node;
  Mat y = x.value().array().colwise() * col.value().col(0).array();
  return Tensor(make_node(std::move(y), {xn, cn}, [xn, cn](Node& n) {
    if (xn->requires_grad)
      xn->grad.array() += n.grad.array().colwise() * cn->value.col(0).array();
    if (cn->requires_grad)
      cn->grad.col(0) += n.grad.cwiseProduct(xn->value).rowwise().sum();
  }));
}

// ---- shape ----

Tensor slice_rows(const Tensor& a, long r0, long r1) {
  MOMA_CHECK(0 <= r0 && r0 < r1 && r1 <= a.rows(), "slice_rows: bad range");
  NodePtr an = a.node;
  Mat y = a.value().middleRows(r0, r1 - r0);
  return Tensor(make_node(std::move(y), {an}, [an, r0, r1](Node& n) {
    if (an->requires_grad) an->grad.middleRows(r0, r1 - r0) += n.grad;
  }));
}

Tensor slice_cols(const Tensor& a, long c0, long c1) {
  MOMA_CHECK(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: bad range");
  NodePtr an = a.node;
  Mat y = a.value().middleCols(c0, c1 - c0);
  return Tensor(make_node(std::move(y), {an}, [an, c0, c1](Node& n) {
    if (an->requires_grad) an->grad.middleCols(c0, c1 - c0) += n.grad;
  }));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  MOMA_CHECK(!parts.empty(), "concat_rows: empty");
  long rows = 0;
  const long cols = parts[0].cols();
  for (const auto& p : parts) {
    MOMA_CHECK(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat y(rows, cols);
  std::vector<NodePtr> parents;
  parents.reserve(parts.size());
  long r = 0;
  for (const auto& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    parents.push_back(p.node);
    r += p.rows();
  }
  return Tensor(make_node(std::move(y), std::move(parents), [](Node& n) {
    long r = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) p->grad += n.grad.middleRows(r, p->value.rows());
      r += p->value.rows();
    }
  }));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  MOMA_CHECK(!parts.empty(), "concat_cols: empty");
  long cols = 0;
  const long rows = parts[0].rows();
  for (const auto& p : parts) {
    MOMA_CHECK(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat y(rows, cols);
  std::vector<NodePtr> parents;
  parents.reserve(parts.size());
  long c = 0;
  for (const auto& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    parents.push_back(p.node);
    c += p.cols();
  }
  return Tensor(make_node(std::move(y), std::move(parents), [](Node& n) {
    long c = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) p->grad += n.grad.middleCols(c, p->value.cols());
      c += p->value.cols();
    }
  }));
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  NodePtr an = a.node;
  Mat y(static_cast<long>(idx.size()), a.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    MOMA_CHECK(idx[i] >= 0 && idx[i] < a.rows(), "gather_rows: index out of range");
    y.row(static_cast<long>(i)) = a.value().row(idx[i]);
  }
  return Tensor(make_node(std::move(y), {an}, [an, idx](Node& n) {
    if (!an->requires_grad) return;
    for (size_t i = 0; i < idx.size(); ++i)
      an->grad.row(idx[i]) += n.grad.row(static_cast<long>(i));
  }));
}

Tensor repeat_rows(const Tensor& row, long n) {
  MOMA_CHECK(row.rows() == 1, "repeat_rows: expects 1xC");
  NodePtr rn = row.node;
  Mat y = row.value().replicate(n, 1);
  return Tensor(make_node(std::move(y), {rn}, [rn](Node& n) {
    if (rn->requires_grad) rn->grad.row(0) += n.grad.colwise().sum();
  }));
}

Tensor upsample_rows2(const Tensor& a) {
  NodePtr an = a.node;
  Mat y(a.rows() * 2, a.cols());
  for (long r = 0; r < a.rows(); ++r) {
    y.row(2 * r) = a.value().row(r);
    y.row(2 * r + 1) = a.value().row(r);
  }
  return Tensor(make_node(std::move(y), {an}, [an](Node& n) {
    if (!an->requires_grad) return;
    for (long r = 0; r < an->value.rows(); ++r)
      an->grad.row(r) += n.grad.row(2 * r) + n.grad.row(2 * r + 1);
  }));
}

// ---- reductions ----

Tensor mean_all(const Tensor& a) {
  NodePtr an = a.node;
  Mat y(1, 1);
  y(0, 0) = a.value().mean();
  const double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
  return Tensor(make_node(std::move(y), {an}, [an, inv](Node& n) {
    if (an->requires_grad)
      an->grad.array() += n.grad(0, 0) * inv;
  }));
}

Tensor sum_all(const Tensor& a) {
  NodePtr an = a.node;
  Mat y(1, 1);
  y(0, 0) = a.value().sum();
  return Tensor(make_node(std::move(y), {an}, [an](Node& n) {
    if (an->requires_grad) an->grad.array() += n.grad(0, 0);
  }));
}

Tensor mean_rows(const Tensor& a) {
  NodePtr an = a.node;
  Mat y = a.value().colwise().mean();
  const double inv = 1.0 / static_cast<double>(a.rows());
  return Tensor(make_node(std::move(y), {an}, [an, inv](Node& n) {
    if (!an->requires_grad) return;
    an->grad += (n.grad.row(0) * inv).replicate(an->value.rows(), 1);
  }));
}

Tensor sum_cols(const Tensor& a) {
  NodePtr an = a.node;
  Mat y = a.value().rowwise().sum();
  return Tensor(make_node(std::move(y), {an}, [an](Node& n) {
    if (!an->requires_grad) return;
    an->grad += n.grad.col(0).replicate(1, an->value.cols());
  }));
}

// ---- row-wise nonlinearities ----

Tensor softmax_rows(const Tensor& a) {
  NodePtr an = a.node;
  Mat y(a.rows(), a.cols());
  for (long r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    Eigen::RowVectorXd e = (a.value().row(r).array() - m).exp();
    y.row(r) = e / e.sum();
  }
  return Tensor(make_node(std::move(y), {an}, [an](Node& n) {
    if (!an->requires_grad) return;
    for (long r = 0; r < n.value.rows(); ++r) {
      const double dot = n.grad.row(r).dot(n.value.row(r));
      an->grad.row(r) += n.value.row(r).cwiseProduct(
          (n.grad.row(r).array() - dot).matrix());
    }
  }));
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  NodePtr an = a.node;
  const long C = a.cols();
  Mat y(a.rows(), C);
  Eigen::VectorXd inv_std(a.rows());
  for (long r = 0; r < a.rows(); ++r) {
    const double mu = a.value().row(r).mean();
    const double var =
        (a.value().row(r).array() - mu).square().sum() / static_cast<double>(C);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std(r) = istd;
    y.row(r) = (a.value().row(r).array() - mu) * istd;
  }
  return Tensor(make_node(std::move(y), {an}, [an, inv_std](Node& n) {
    if (!an->requires_grad) return;
    const long C = n.value.cols();
    for (long r = 0; r < n.value.rows(); ++r) {
      const double gm = n.grad.row(r).mean();
      const double gym = n.grad.row(r).cwiseProduct(n.value.row(r)).sum() /
                         static_cast<double>(C);
      an->grad.row(r) +=
          inv_std(r) * (n.grad.row(r).array() - gm - n.value.row(r).array() * gym)
              .matrix();
    }
  }));
}

Tensor l2_normalize_rows(const Tensor& a, double post_scale, double eps) {
  NodePtr an = a.node;
  Mat y(a.rows(), a.cols());
  Eigen::VectorXd norms(a.rows());
  for (long r = 0; r < a.rows(); ++r) {
    const double n2 = a.value().row(r).squaredNorm();
    const double nn = std::sqrt(n2 + eps);
    norms(r) = nn;
    y.row(r) = a.value().row(r) * (post_scale / nn);
  }
  return Tensor(make_node(std::move(y), {an}, [an, norms, post_scale](Node& n) {
    if (!an->requires_grad) return;
    for (long r = 0; r < n.value.rows(); ++r) {
      const double nn = norms(r);
      const double dot = n.grad.row(r).dot(an->value.row(r));
      an->grad.row(r) += (post_scale / nn) * n.grad.row(r) -
                         (post_scale * dot / (nn * nn * nn)) * an->value.row(r);
    }
  }));
}

// ---- conv ----

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int k,
              int stride, int pad) {
  const long T = x.rows();
  const long in = x.cols();
  MOMA_CHECK(w.rows() == static_cast<long>(in) * k, "conv1d: weight rows != in*k");
  MOMA_CHECK(b.rows() == 1 && b.cols() == w.cols(), "conv1d: bad bias shape");
  const long t_out = (T + 2L * pad - k) / stride + 1;
  MOMA_CHECK(t_out >= 1, "conv1d: output length < 1");

  Mat cols(t_out, static_cast<long>(in) * k);
  cols.setZero();
  for (long r = 0; r < t_out; ++r) {
    for (int j = 0; j < k; ++j) {
      const long src = r * stride - pad + j;
      if (src >= 0 && src < T)
        cols.block(r, static_cast<long>(j) * in, 1, in) = x.value().row(src);
    }
  }
  Mat y(t_out, w.cols());
  for (long r = 0; r < t_out; ++r)
    y.row(r).noalias() = cols.row(r) * w.value();
  y.rowwise() += b.value().row(0);

  NodePtr xn = x.node, wn = w.node, bn = b.node;
  auto cols_keep = std::make_shared<Mat>(std::move(cols));
  return Tensor(make_node(
      std::move(y), {xn, wn, bn},
      [xn, wn, bn, cols_keep, k, stride, pad](Node& n) {
        const long in = xn->value.cols();
        const long T = xn->value.rows();
        if (wn->requires_grad)
          wn->grad.noalias() += cols_keep->transpose() * n.grad;
        if (bn->requires_grad) bn->grad.row(0) += n.grad.colwise().sum();
        if (xn->requires_grad) {
          for (long r = 0; r < n.value.rows(); ++r) {
            for (int j = 0; j < k; ++j) {
              const long src = r * stride - pad + j;
              if (src < 0 || src >= T) continue;
              xn->grad.row(src).noalias() +=
                  n.grad.row(r) *
                  wn->value.middleRows(static_cast<long>(j) * in, in).transpose();
            }
          }
        }
      }));
}

// ---- losses ----

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
  MOMA_CHECK(static_cast<long>(targets.size()) == logits.rows(),
             "cross_entropy_rows: target count mismatch");
  NodePtr ln = logits.node;
  const long R = logits.rows();
  double total = 0.0;
  Mat softmax(R, logits.cols());
  for (long r = 0; r < R; ++r) {
    MOMA_CHECK(targets[r] >= 0 && targets[r] < logits.cols(),
               "cross_entropy_rows: target out of range");
    const double m = logits.value().row(r).maxCoeff();
    Eigen::RowVectorXd e = (logits.value().row(r).array() - m).exp();
    const double s = e.sum();
    softmax.row(r) = e / s;
    total += (m + std::log(s)) - logits.value()(r, targets[r]);
  }
  Mat y(1, 1);
  y(0, 0) = total / static_cast<double>(R);
  auto soft_keep = std::make_shared<Mat>(std::move(softmax));
  return Tensor(make_node(std::move(y), {ln}, [ln, targets, soft_keep](Node& n) {
    if (!ln->requires_grad) return;
    const long R = ln->value.rows();
    const double g = n.grad(0, 0) / static_cast<double>(R);
    for (long r = 0; r < R; ++r) {
      ln->grad.row(r) += g * soft_keep->row(r);
      ln->grad(r, targets[r]) -= g;
    }
  }));
}

}  // namespace moma
