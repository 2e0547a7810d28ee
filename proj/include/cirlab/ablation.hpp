#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cirlab/trainer.hpp"

namespace cirlab {

struct PresetResult {
  std::string preset;
  std::vector<double> finals;  // one final accuracy per seed
  double mean = 0.0;
  double stddev = 0.0;  // sample std, 0 for a single seed
};

struct OrderingCheck {
  std::string description;
  bool holds = false;
  double lhs = 0.0;
  double rhs = 0.0;
};

struct AblationReport {
  int table_id = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<PresetResult> presets;
  std::vector<OrderingCheck> orderings;

  bool orderings_hold() const;
  std::string to_string() const;
  std::string csv() const;
};

double mean_of(const std::vector<double>& v);
double stddev_of(const std::vector<double>& v);
double pooled_std(const PresetResult& a, const PresetResult& b);

// Runs every preset of the table over all seeds on top of the base config
// and evaluates the table's qualitative ordering.
AblationReport run_ablation(int table_id, const RunConfig& base, const std::vector<std::uint64_t>& seeds);

}  // namespace cirlab
