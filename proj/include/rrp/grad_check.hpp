#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rrp/tensor.hpp"

namespace rrp {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  // Probes whose +/-eps evaluation changed a ReLU sign or maxpool winner.
  // Such entries are excluded from max_rel_error; callers should resample.
  std::size_t kink_crossings = 0;
  bool passed = false;
};

// Compares reverse-mode gradients of the scalar `f` against central
// differences for every entry of every tensor in `params`.
// Relative error per entry is |a - n| / max(|a|, |n|, 1e-8).
// Throws NumericError naming the parameter if a difference is non-finite.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace rrp
