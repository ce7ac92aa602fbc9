#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rrp/grad_check.hpp"
#include "rrp/rng.hpp"

namespace rrp {

struct GradProblem {
  std::function<Tensor()> objective;
  std::vector<NamedTensor> params;
};

struct GradCase {
  std::string name;
  double tol = 1e-4;
  std::function<GradProblem(SplitMix64&)> build;
};

struct GradCaseResult {
  std::string name;
  double max_rel_error = 0.0;
  double tol = 0.0;
  std::size_t seeds = 0;
  std::size_t resamples = 0;
  std::string worst;  // "param[index]" of the largest error
  bool passed = false;
};

// Every differentiable op, the region-relation block (n=3, d=5, 4x4) and a
// tiny full model (channels [4,4,4], n=2, d=4, 32x32 input).
std::vector<GradCase> gradcheck_cases(double op_tol, double model_tol);

// Runs one case over `seeds` random draws. A draw whose probes cross a
// ReLU kink or maxpool tie is redrawn (up to 8 times) before counting.
GradCaseResult run_grad_case(const GradCase& grad_case, std::size_t seeds, double eps);

std::vector<GradCaseResult> run_gradcheck_suite(std::size_t seeds, double eps, double op_tol, double model_tol);

}  // namespace rrp
