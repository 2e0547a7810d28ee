#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cirlab/tensor.hpp"

namespace cirlab {

struct AdamConfig {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One shared state across all parameter blocks; the step counter is never
// reset between experiences.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const AdamConfig& cfg, const std::vector<const Tensor*>& params);

  // Standard update with bias correction. A non-finite gradient aborts the
  // step before any parameter is touched and names the offending block.
  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
            const std::vector<std::string>& names);

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace cirlab
