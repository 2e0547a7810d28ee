#pragma once

#include <deque>
#include <string>
#include <vector>

#include "cirlab/model.hpp"
#include "cirlab/tensor.hpp"

namespace cirlab {

// Per-sample distillation targets drawn from the pool: features from the
// most confident snapshot, logits from every snapshot.
struct PoolTargets {
  Tensor feature_targets;                  // B x F (0x.. when pool empty)
  std::vector<Tensor> logit_batches;       // one B x C per snapshot
  std::vector<int> selected_model_index;   // per sample, newest = size-1
  Tensor composite_logits;                 // B x C, per-sample most confident snapshot

  bool empty() const { return logit_batches.empty(); }
};

// FIFO of at most K previous-model snapshots, each EMA-blended toward the
// current model. Snapshots are deep copies, never aliased with the live
// parameters.
class ModelPool {
 public:
  explicit ModelPool(std::size_t max_size = 3, double ema_momentum = 0.999);

  void push_snapshot(const ModelParams& params);
  void ema_refresh_all(const ModelParams& current);

  std::size_t size() const { return snaps_.size(); }
  std::size_t max_size() const { return max_size_; }
  double ema_momentum() const { return momentum_; }
  const ModelParams& snapshot(std::size_t i) const { return snaps_.at(i); }  // 0 = oldest
  const ModelParams& newest() const { return snaps_.back(); }

  // Forward every snapshot over the batch; per-sample confidence is the max
  // softmax probability of the snapshot's classifier logits, ties broken
  // toward the newest snapshot. Empty pool yields empty targets.
  PoolTargets compute_targets(const Tensor& batch) const;

  // Averaged class probabilities of the current model and one snapshot
  // (newest minus `offset`), argmax per sample. Empty pool: current alone.
  std::vector<int> ensemble_predict(const ModelParams& current, const Tensor& batch,
                                    bool average_logits = false, std::size_t offset = 0) const;

  void save(const std::string& path) const;
  void load(const std::string& path, const ModelConfig& cfg);

 private:
  std::size_t max_size_;
  double momentum_;
  std::deque<ModelParams> snaps_;  // newest last
};

// Row-wise softmax helper shared by ensemble prediction and target selection.
Tensor softmax_rows(const Tensor& logits);

}  // namespace cirlab
