#include <doctest.h>

#include <cmath>
#include <set>

#include "rrp/errors.hpp"
#include "rrp/grad_check.hpp"
#include "rrp/gradcheck_suite.hpp"

using namespace rrp;

namespace {

// y = sum(x^3) with a deliberately wrong backward rule (2x instead of 3x^2).
Tensor broken_cube(const Tensor& x) {
  std::vector<double> v(x.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += x.data()[i] * x.data()[i] * x.data()[i];
  return detail::make_result("broken_cube", {1}, {acc}, {x}, [x](std::span<const double> g) {
    auto dx = detail::grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0] * 2.0 * x.data()[i];
  });
}

}  // namespace

TEST_CASE("grad_check accepts a correct gradient") {
  Tensor x({3}, {0.3, -0.7, 1.1}, true);
  auto report = grad_check([&] { return sum_all(mul(mul(x, x), x)); }, {{"x", x}});
  CHECK(report.passed);
  CHECK(report.entries_checked == 3);
  CHECK(report.max_rel_error < 1e-8);
}

TEST_CASE("grad_check flags a wrong backward rule and names the parameter") {
  Tensor x({3}, {0.3, -0.7, 1.1}, true);
  auto report = grad_check([&] { return broken_cube(x); }, {{"cube_input", x}});
  CHECK_FALSE(report.passed);
  CHECK(report.worst_param == "cube_input");
  CHECK(report.max_rel_error > 0.1);
}

TEST_CASE("grad_check reports ReLU kink crossings instead of failing on them") {
  Tensor x({2}, {1e-7, 0.5}, true);
  auto report = grad_check([&] { return sum_all(relu(x)); }, {{"x", x}});
  CHECK(report.kink_crossings == 1);
  CHECK(report.passed);
}

TEST_CASE("grad_check restores parameters after probing") {
  Tensor x({2}, {0.25, -0.5}, true);
  grad_check([&] { return sum_all(mul(x, x)); }, {{"x", x}});
  CHECK(x.data()[0] == 0.25);
  CHECK(x.data()[1] == -0.5);
}

TEST_CASE("gradcheck suite lists every op exactly once") {
  auto cases = gradcheck_cases(1e-4, 1e-3);
  std::set<std::string> names;
  for (const auto& c : cases) CHECK(names.insert(c.name).second);
  for (const char* op : {"conv2d", "relu", "sigmoid", "maxpool2", "bilinear_resize", "matmul", "add", "mul",
                         "global_average_pool", "softmax_rows", "select_channel", "select_row", "stack_rows",
                         "broadcast_spatial", "scale", "sum_all", "flip_horizontal", "reg_loss", "cls_loss",
                         "normalize_adjacency", "gcn_layer", "attention_maps", "weighted_pool", "broadcast_fuse",
                         "rram", "model"}) {
    CHECK_MESSAGE(names.count(op) == 1, op);
  }
}

TEST_CASE("gradcheck suite fails relu under fault injection") {
  auto cases = gradcheck_cases(1e-4, 1e-3);
  const GradCase* relu_case = nullptr;
  for (const auto& c : cases)
    if (c.name == "relu") relu_case = &c;
  REQUIRE(relu_case);
  fault_injection().flip_relu_backward = true;
  auto result = run_grad_case(*relu_case, 2, 1e-5);
  fault_injection().flip_relu_backward = false;
  CHECK_FALSE(result.passed);
  CHECK(run_grad_case(*relu_case, 2, 1e-5).passed);
}
