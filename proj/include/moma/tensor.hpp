#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace moma {

using Mat = Eigen::MatrixXd;

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define MOMA_CHECK(cond, msg)                         \
  do {                                                \
    if (!(cond)) throw ::moma::Error(msg);            \
  } while (0)

// Reverse-mode autodiff over 2-D double matrices. Values are computed
// eagerly; when gradients are enabled each op records a closure that pushes
// the output gradient to its parents.
struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Mat::Zero(value.rows(), value.cols());
  }
};

using NodePtr = std::shared_ptr<Node>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node(std::move(n)) {}

  static Tensor constant(Mat v);
  static Tensor param(Mat v);  // leaf with requires_grad

  bool defined() const { return node != nullptr; }
  const Mat& value() const { return node->value; }
  Mat& value_mut() { return node->value; }
  const Mat& grad() const { return node->grad; }
  long rows() const { return node->value.rows(); }
  long cols() const { return node->value.cols(); }
  double scalar() const { return node->value(0, 0); }
  bool requires_grad() const { return node && node->requires_grad; }

  NodePtr node;
};

// Gradient recording is on by default; NoGradGuard disables it for pure
// evaluation (values only, no graph retained).
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
// node with requires_grad. loss must be 1x1.
void backward(const Tensor& loss);

// ---- elementwise / scalar ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
// a * s where s is a 1x1 node; gradients reach both.
Tensor mul_scalar_node(const Tensor& a, const Tensor& s);

// ---- linear algebra ----
// Row-looped product: each output row is computed as a.row(r) * b, so a
// batched call is bit-identical to per-row calls.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x (N x C) + row (1 x C) broadcast over rows.
Tensor add_row_broadcast(const Tensor& x, const Tensor& row);
// x (N x C) .* row (1 x C) broadcast over rows.
Tensor mul_row_broadcast(const Tensor& x, const Tensor& row);
// x (N x C) .* col (N x 1) broadcast over columns.
Tensor mul_col_broadcast(const Tensor& x, const Tensor& col);

// ---- shape ----
Tensor slice_rows(const Tensor& a, long r0, long r1);  // [r0, r1)
Tensor slice_cols(const Tensor& a, long c0, long c1);  // [c0, c1)
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor repeat_rows(const Tensor& row, long n);  // 1xC -> NxC
// Nearest-neighbour x2 upsampling along rows.
Tensor upsample_rows2(const Tensor& a);

// ---- reductions ----
Tensor mean_all(const Tensor& a);  // 1x1
Tensor sum_all(const Tensor& a);   // 1x1
Tensor mean_rows(const Tensor& a); // 1xC, mean over rows
Tensor sum_cols(const Tensor& a);  // Nx1, sum over columns

// ---- row-wise nonlinearities ----
Tensor softmax_rows(const Tensor& a);
// LayerNorm without learned affine.
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);
// Rows scaled to unit L2 norm (with eps floor), then by `post_scale`.
Tensor l2_normalize_rows(const Tensor& a, double post_scale = 1.0,
                         double eps = 1e-8);

// ---- conv ----
// 1-D convolution along rows. x is T x in, w is (in*k) x out with column
// grouping [tap*in + channel], b is 1 x out. Zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int k,
              int stride, int pad);

// ---- losses ----
// Mean over rows of logsumexp(row) - row[target]. Backward is softmax-onehot.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets);

}  // namespace moma
