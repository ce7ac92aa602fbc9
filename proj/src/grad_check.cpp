#include "rrp/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "rrp/errors.hpp"

namespace rrp {

namespace {

struct ProbeScope {
  explicit ProbeScope(detail::PatternProbe* probe) : previous(detail::active_probe()) {
    detail::set_active_probe(probe);
  }
  ~ProbeScope() { detail::set_active_probe(previous); }
  detail::PatternProbe* previous;
};

double evaluate(const std::function<Tensor()>& f, detail::PatternProbe& probe) {
  NoGradGuard no_grad;
  ProbeScope scope(&probe);
  return f().item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options) {
  for (const auto& p : params) {
    auto t = p.tensor;
    t.zero_grad();
  }

  detail::PatternProbe base_probe;
  Tensor y;
  {
    ProbeScope scope(&base_probe);
    y = f();
  }
  if (!std::isfinite(y.item())) throw NumericError("grad_check: non-finite objective");
  y.backward();

  GradCheckReport report;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    std::vector<double> analytic(t.size(), 0.0);
    if (!t.grad().empty()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      detail::PatternProbe plus_probe, minus_probe;
      values[i] = saved + options.eps;
      const double fp = evaluate(f, plus_probe);
      values[i] = saved - options.eps;
      const double fm = evaluate(f, minus_probe);
      values[i] = saved;

      const double numeric = (fp - fm) / (2.0 * options.eps);
      if (!std::isfinite(numeric)) {
        throw NumericError("grad_check: non-finite difference for " + p.name + "[" + std::to_string(i) + "]");
      }
      ++report.entries_checked;
      if (plus_probe.hash != base_probe.hash || minus_probe.hash != base_probe.hash) {
        ++report.kink_crossings;
        continue;
      }
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > report.max_rel_error || report.worst_param.empty()) {
        if (rel >= report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_param = p.name;
          report.worst_index = i;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  report.passed = report.max_rel_error <= options.tol;
  return report;
}

}  // namespace rrp
