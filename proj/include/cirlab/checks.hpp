#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cirlab/gradcheck.hpp"

namespace cirlab {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Central finite-difference checks for every loss operation and for the full
// composite, `instances` random seeded instances each at the given relative
// tolerance. Instances that land near a ReLU/hinge kink are regenerated.
std::vector<CheckResult> run_gradient_checks(std::uint64_t seed, std::size_t instances, double tolerance);

// Fast property sweep: schedules, Gram identities, buffer and pool
// contracts, rotation bijection, trainer determinism.
std::vector<CheckResult> run_invariant_checks(std::uint64_t seed);

bool all_pass(const std::vector<CheckResult>& results);
std::string format_results(const std::vector<CheckResult>& results);

}  // namespace cirlab
