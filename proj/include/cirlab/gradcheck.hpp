#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cirlab/tensor.hpp"

namespace cirlab {

// Loss callback for gradient checking: evaluate the loss at the given
// parameter values; when grads_out is non-null, also fill one gradient tensor
// per parameter block (same shapes, same order).
using GradCheckFn = std::function<double(const std::vector<Tensor>& params, std::vector<Tensor>* grads_out)>;

struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_diff = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  bool deterministic = true;  // false => check invalid, pass forced false
  bool pass = false;
  double step = 0.0;
  double tolerance = 0.0;
  std::string to_string() const;
};

// Central finite differences per coordinate against the analytic gradient.
// Coordinates where both gradients are below a noise floor (1e-6 * max(1,|f|))
// count as matching; elsewhere rel err = |a-n| / max(|a|,|n|). The callback is
// evaluated twice at the base point first; non-identical results flag the
// check as invalid (non-deterministic loss).
GradCheckReport finite_diff_check(const GradCheckFn& f, std::vector<Tensor> params,
                                  const std::vector<std::string>& names, double step, double tolerance);

}  // namespace cirlab
