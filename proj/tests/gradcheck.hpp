#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "moma/nn.hpp"
#include "moma/tensor.hpp"

namespace moma::testutil {

// Central finite differences over every entry of `param`, compared against
// the analytic gradient already accumulated in param->grad. `eval` must
// rebuild the forward pass and return the loss value.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
};

inline GradCheckResult finite_diff_check(const std::vector<std::pair<std::string, NodePtr>>& params,
                                         const std::function<double()>& eval,
                                         double step = 1e-3,
                                         double denom_floor = 1e-6) {
  GradCheckResult res;
  for (const auto& [name, p] : params) {
    for (long c = 0; c < p->value.cols(); ++c) {
      for (long r = 0; r < p->value.rows(); ++r) {
        const double saved = p->value(r, c);
        p->value(r, c) = saved + step;
        const double up = eval();
        p->value(r, c) = saved - step;
        const double down = eval();
        p->value(r, c) = saved;
        const double fd = (up - down) / (2.0 * step);
        const double an = p->grad(r, c);
        const double rel =
            std::abs(an - fd) /
            std::max({std::abs(an), std::abs(fd), denom_floor});
        if (rel > res.max_rel_err) {
          res.max_rel_err = rel;
          res.worst = name + "(" + std::to_string(r) + "," + std::to_string(c) +
                      ") analytic=" + std::to_string(an) +
                      " fd=" + std::to_string(fd);
        }
      }
    }
  }
  return res;
}

inline Mat random_mat(long rows, long cols, RngStream& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (long c = 0; c < cols; ++c)
    for (long r = 0; r < rows; ++r) m(r, c) = scale * rng.normal();
  return m;
}

}  // namespace moma::testutil
