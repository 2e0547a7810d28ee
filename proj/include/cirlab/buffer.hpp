#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cirlab/tensor.hpp"

namespace cirlab {

// A stored (feature, logit, label) triple; raw images are never stored.
struct Exemplar {
  Tensor feature;  // feature_dim reals
  Tensor logit;    // C reals
  int label = 0;
  std::size_t task_of_origin = 0;

  std::size_t float_cost() const { return feature.numel() + logit.numel() + 1; }
};

// Reservoir of exemplars under a hard per-exemplar float budget. Single
// writer; sampling is read-only.
class MemoryBuffer {
 public:
  explicit MemoryBuffer(std::size_t capacity = 200, std::uint64_t seed = 0, std::size_t float_budget = 1024,
                        bool class_balanced = false);

  // Reservoir insert: under capacity append, otherwise replace a uniformly
  // random slot with probability capacity/seen_count. Exemplars over the
  // float budget are rejected.
  void insert(Exemplar e);

  // n draws, deterministic per seed: without replacement when n <= size,
  // with replacement otherwise. Empty buffer yields an empty batch.
  std::vector<Exemplar> sample_batch(std::size_t n, std::uint64_t seed) const;

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t seen_count() const { return seen_; }
  std::size_t float_budget() const { return float_budget_; }
  std::size_t total_floats() const;
  const Exemplar& at(std::size_t i) const { return items_[i]; }

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  std::size_t capacity_;
  std::size_t float_budget_;
  bool class_balanced_;
  std::uint64_t seen_ = 0;
  std::vector<Exemplar> items_;
  std::uint64_t rng_state_;
  std::map<int, std::uint64_t> seen_per_class_;  // class-balanced mode only

  std::uint64_t next_random();
  void insert_class_balanced(Exemplar e);
};

}  // namespace cirlab
