#include "cirlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cirlab {

std::string GradCheckReport::to_string() const {
  char buf[256];
  std::string out;
  if (!deterministic) return "INVALID: loss function is not deterministic across identical calls\n";
  for (const auto& b : blocks) {
    std::snprintf(buf, sizeof(buf), "%-24s max_rel_err=%.3e max_abs_diff=%.3e %s\n", b.name.c_str(),
                  b.max_rel_err, b.max_abs_diff, b.pass ? "ok" : "FAIL");
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "overall: %s (step=%.1e tol=%.1e)\n", pass ? "pass" : "FAIL", step, tolerance);
  out += buf;
  return out;
}

GradCheckReport finite_diff_check(const GradCheckFn& f, std::vector<Tensor> params,
                                  const std::vector<std::string>& names, double step, double tolerance) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be positive");
  if (names.size() != params.size())
    throw std::invalid_argument("finite_diff_check: one name per parameter block required");

  GradCheckReport report;
  report.step = step;
  report.tolerance = tolerance;

  std::vector<Tensor> analytic;
  const double v1 = f(params, &analytic);
  const double v2 = f(params, nullptr);
  if (v1 != v2) {  // bitwise comparison on purpose
    report.deterministic = false;
    report.pass = false;
    return report;
  }
  if (analytic.size() != params.size())
    throw std::invalid_argument("finite_diff_check: callback returned wrong number of gradient blocks");

  const double zero_floor = 1e-6 * std::max(1.0, std::fabs(v1));

  report.pass = true;
  for (std::size_t b = 0; b < params.size(); ++b) {
    GradCheckBlock block;
    block.name = names[b];
    if (!analytic[b].same_shape(params[b]))
      throw std::invalid_argument("finite_diff_check: gradient shape mismatch in block " + names[b]);
    for (std::size_t i = 0; i < params[b].numel(); ++i) {
      const double saved = params[b].data[i];
      params[b].data[i] = saved + step;
      const double fp = f(params, nullptr);
      params[b].data[i] = saved - step;
      const double fm = f(params, nullptr);
      params[b].data[i] = saved;

      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[b].data[i];
      const double diff = std::fabs(a - numeric);
      const double mag = std::max(std::fabs(a), std::fabs(numeric));
      double rel = 0.0;
      if (mag > zero_floor) rel = diff / mag;
      if (diff > block.max_abs_diff) block.max_abs_diff = diff;
      if (rel > block.max_rel_err) block.max_rel_err = rel;
    }
    block.pass = block.max_rel_err <= tolerance;
    if (!block.pass) report.pass = false;
    report.blocks.push_back(std::move(block));
  }
  return report;
}

}  // namespace cirlab
