#pragma once

#include <vector>

#include "cirlab/graph.hpp"
#include "cirlab/tensor.hpp"

namespace cirlab {

// Scalar weights of the composite loss and their task-indexed schedules.
struct LossSchedule {
  double c = 0.5;
  double omega = 0.95;
  double gamma = 0.1;       // logit constraint
  double eta = 0.4;         // replay logit matching
  double beta_slope = 0.002;  // feature KD, linear in t
  double delta = 0.1;       // Gram logit KD

  void validate() const;
  double alpha(int t) const;  // c * omega^t
  double beta(int t) const;   // beta_slope * t
};

// Instance and class correlation matrices of a logit batch l: G = l*l^T
// (BxB) and class_gram = l^T*l (CxC).
struct GramPair {
  Tensor instance_gram;
  Tensor class_gram;
};

GramPair gram_pair(const Tensor& logits);
std::pair<Graph::NodeId, Graph::NodeId> gram_pair_nodes(Graph& g, Graph::NodeId logits);

// Cross-entropy whose softmax normalizer runs only over classes_in_batch;
// all other logit columns receive zero gradient.
Graph::NodeId ace_loss(Graph& g, Graph::NodeId logits, const std::vector<int>& labels,
                       const std::vector<int>& classes_in_batch);

// Standard 4-way cross-entropy for rotation prediction.
Graph::NodeId ssl_rotation_loss(Graph& g, Graph::NodeId rotation_logits, const std::vector<int>& rotation_labels);

// (1/B) sum_k ||G_curr - G_prev^k||^2 + (1/C) sum_k ||M_curr - M_prev^k||^2,
// squared Frobenius norms; previous logits are constants. Empty list -> 0.
// normalize_rows computes the Grams on unit-normalized logit rows, bounding
// the term's scale.
Graph::NodeId logit_kd_loss(Graph& g, Graph::NodeId curr_logits, const std::vector<Tensor>& prev_logits,
                            bool normalize_rows = false);

// Mean over the batch of squared L2 distance between feature rows; targets
// are constants.
Graph::NodeId feature_kd_loss(Graph& g, Graph::NodeId curr_features, const Tensor& target_features);

// Mean over the batch of sum_{j not yet seen} max(0, logit_j - logit_label +
// margin): keeps unseen class heads below the ground-truth logit.
Graph::NodeId logit_constraint_loss(Graph& g, Graph::NodeId logits, const std::vector<int>& labels,
                                    const std::vector<int>& seen_classes, double margin = 0.0);

// Mean squared error between current head outputs on stored features and the
// stored logits. Zero-row input -> 0.
Graph::NodeId der_loss(Graph& g, Graph::NodeId replay_logits_now, const Tensor& stored_logits);

// Which terms participate; mirrors the trainer's ablation flags. With ssl
// off the labeled weight is exactly 1 so the composite reduces to plain ACE
// arithmetic.
struct TermToggles {
  bool ssl = true;
  bool lc = true;
  bool der = true;
  bool feature_kd = true;
  bool logit_kd = true;
  bool dynamic_weighting = true;
};

struct FinalLossInputs {
  Graph::NodeId labeled_logits = -1;
  std::vector<int> labels;

  Graph::NodeId rotation_logits = -1;  // -1 when ssl disabled
  std::vector<int> rotation_labels;

  Graph::NodeId unlabeled_features = -1;  // -1 when KD disabled or no targets
  Graph::NodeId unlabeled_logits = -1;

  Graph::NodeId replay_logits = -1;  // -1 when replay empty
  std::vector<int> replay_labels;
  Tensor replay_stored_logits;

  Tensor feature_targets;                 // 0 rows when pool empty
  std::vector<Tensor> prev_logit_batches;  // empty when pool empty

  std::vector<int> seen_classes;
  double lc_margin = 0.0;
  bool logit_kd_normalize = false;
  bool replay_in_ace = true;  // off: replay feeds only the logit-matching term
};

struct LossBreakdown {
  double ace = 0.0, ssl = 0.0, lc = 0.0, der = 0.0, feature_kd = 0.0, logit_kd = 0.0;
  double w_ace = 0.0, w_ssl = 0.0, w_lc = 0.0, w_der = 0.0, w_feature_kd = 0.0, w_logit_kd = 0.0;
  double alpha = 0.0, beta = 0.0;
  double total = 0.0;
};

// (1-0.1a)*ACE(X_l, M) + a*SSL(X_u) + gamma*LC(X_l) + eta*DER(M)
// + beta(t)*FKD(X_u) + delta*LKD(X_u), with a = c*omega^t (or fixed c when
// dynamic weighting is off). Replayed exemplars join the ACE batch through
// the classifier head; disabled or empty terms contribute exactly nothing.
Graph::NodeId final_loss(Graph& g, const FinalLossInputs& in, const LossSchedule& sched, int t,
                         const TermToggles& toggles, LossBreakdown* breakdown = nullptr);

}  // namespace cirlab
