#include "cirlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace cirlab {

void LossSchedule::validate() const {
  if (!(omega > 0.0 && omega < 1.0))
    throw std::invalid_argument("schedule: omega must lie in (0,1), got " + std::to_string(omega));
  if (c < 0.0 || gamma < 0.0 || eta < 0.0 || beta_slope < 0.0 || delta < 0.0)
    throw std::invalid_argument("schedule: loss weights must be non-negative");
}

double LossSchedule::alpha(int t) const {
  if (t < 0) throw std::invalid_argument("schedule: task index must be >= 0");
  return c * std::pow(omega, static_cast<double>(t));
}

double LossSchedule::beta(int t) const {
  if (t < 0) throw std::invalid_argument("schedule: task index must be >= 0");
  return beta_slope * static_cast<double>(t);
}

GramPair gram_pair(const Tensor& logits) {
  if (!logits.is_matrix() || logits.rows() == 0 || logits.cols() == 0)
    throw std::invalid_argument("gram_pair: expected non-empty matrix, got " + shape_str(logits.shape));
  Graph g;
  Graph::NodeId l = g.constant(logits);
  auto [gi, gc] = gram_pair_nodes(g, l);
  return GramPair{g.value(gi), g.value(gc)};
}

std::pair<Graph::NodeId, Graph::NodeId> gram_pair_nodes(Graph& g, Graph::NodeId logits) {
  Graph::NodeId lt = g.transpose(logits);
  return {g.matmul(logits, lt), g.matmul(lt, logits)};
}

namespace {

// One-hot rows for the given labels over `width` columns.
Tensor one_hot(const std::vector<int>& labels, std::size_t width) {
  Tensor t(Shape{labels.size(), width});
  for (std::size_t i = 0; i < labels.size(); ++i) t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  return t;
}

Graph::NodeId masked_mean_ce(Graph& g, Graph::NodeId log_probs, const Tensor& pick_mask, std::size_t batch) {
  Graph::NodeId picked = g.mul(log_probs, g.constant(pick_mask));
  return g.scale(g.sum(picked), -1.0 / static_cast<double>(batch));
}

}  // namespace

Graph::NodeId ace_loss(Graph& g, Graph::NodeId logits, const std::vector<int>& labels,
                       const std::vector<int>& classes_in_batch) {
  const Tensor& l = g.value(logits);
  if (!l.is_matrix() || l.rows() != labels.size())
    throw std::invalid_argument("ace_loss: logits/labels size mismatch");
  if (classes_in_batch.empty()) throw std::invalid_argument("ace_loss: classes_in_batch is empty");
  const std::size_t c = l.cols();
  std::vector<int> cls = classes_in_batch;
  std::sort(cls.begin(), cls.end());
  cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
  std::vector<std::size_t> col_of(c, static_cast<std::size_t>(-1));
  for (std::size_t j = 0; j < cls.size(); ++j) {
    if (cls[j] < 0 || static_cast<std::size_t>(cls[j]) >= c)
      throw std::invalid_argument("ace_loss: class " + std::to_string(cls[j]) + " outside logit width " +
                                  std::to_string(c));
    col_of[static_cast<std::size_t>(cls[j])] = j;
  }
  std::vector<int> sub_labels(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c ||
        col_of[static_cast<std::size_t>(labels[i])] == static_cast<std::size_t>(-1))
      throw std::invalid_argument("ace_loss: label " + std::to_string(labels[i]) +
                                  " is not in classes_in_batch");
    sub_labels[i] = static_cast<int>(col_of[static_cast<std::size_t>(labels[i])]);
  }
  // Column selection via a constant 0/1 matrix keeps masked-out classes at
  // exactly zero gradient.
  Tensor sel(Shape{c, cls.size()});
  for (std::size_t j = 0; j < cls.size(); ++j) sel.at(static_cast<std::size_t>(cls[j]), j) = 1.0;
  Graph::NodeId sub = g.matmul(logits, g.constant(sel));
  Graph::NodeId lsm = g.log_softmax(sub);
  return masked_mean_ce(g, lsm, one_hot(sub_labels, cls.size()), labels.size());
}

Graph::NodeId ssl_rotation_loss(Graph& g, Graph::NodeId rotation_logits,
                                const std::vector<int>& rotation_labels) {
  const Tensor& l = g.value(rotation_logits);
  if (!l.is_matrix() || l.cols() != 4 || l.rows() != rotation_labels.size())
    throw std::invalid_argument("ssl_rotation_loss: expected Bx4 logits with one label per row");
  for (int k : rotation_labels)
    if (k < 0 || k > 3) throw std::invalid_argument("ssl_rotation_loss: rotation label outside {0,1,2,3}");
  Graph::NodeId lsm = g.log_softmax(rotation_logits);
  return masked_mean_ce(g, lsm, one_hot(rotation_labels, 4), rotation_labels.size());
}

namespace {

Tensor normalize_rows_host(const Tensor& t) {
  Tensor out = t;
  const std::size_t c = t.cols();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 1e-12;
    for (std::size_t j = 0; j < c; ++j) s += t.data[i * c + j] * t.data[i * c + j];
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] *= inv;
  }
  return out;
}

}  // namespace

Graph::NodeId logit_kd_loss(Graph& g, Graph::NodeId curr_logits, const std::vector<Tensor>& prev_logits,
                            bool normalize_rows) {
  if (prev_logits.empty()) return g.constant_scalar(0.0);
  const Tensor& cur = g.value(curr_logits);
  const std::size_t b = cur.rows(), c = cur.cols();
  for (const Tensor& p : prev_logits)
    if (p.shape != cur.shape)
      throw std::invalid_argument("logit_kd_loss: previous logits shape " + shape_str(p.shape) +
                                  " differs from current " + shape_str(cur.shape));
  Graph::NodeId base = normalize_rows ? g.row_normalize(curr_logits) : curr_logits;
  auto [g_curr, m_curr] = gram_pair_nodes(g, base);
  Graph::NodeId inst_total = -1, cls_total = -1;
  for (const Tensor& p : prev_logits) {
    // constants: no gradient into previous models
    const GramPair prev = gram_pair(normalize_rows ? normalize_rows_host(p) : p);
    Graph::NodeId di = g.sum_sq(g.sub(g_curr, g.constant(prev.instance_gram)));
    Graph::NodeId dc = g.sum_sq(g.sub(m_curr, g.constant(prev.class_gram)));
    inst_total = inst_total < 0 ? di : g.add(inst_total, di);
    cls_total = cls_total < 0 ? dc : g.add(cls_total, dc);
  }
  return g.add(g.scale(inst_total, 1.0 / static_cast<double>(b)),
               g.scale(cls_total, 1.0 / static_cast<double>(c)));
}

Graph::NodeId feature_kd_loss(Graph& g, Graph::NodeId curr_features, const Tensor& target_features) {
  const Tensor& cur = g.value(curr_features);
  if (cur.shape != target_features.shape)
    throw std::invalid_argument("feature_kd_loss: shape mismatch " + shape_str(cur.shape) + " vs " +
                                shape_str(target_features.shape));
  const std::size_t rows = cur.rows();
  Graph::NodeId diff = g.sub(curr_features, g.constant(target_features));
  return g.scale(g.sum_sq(diff), 1.0 / static_cast<double>(rows));
}

Graph::NodeId logit_constraint_loss(Graph& g, Graph::NodeId logits, const std::vector<int>& labels,
                                    const std::vector<int>& seen_classes, double margin) {
  const Tensor& l = g.value(logits);
  if (!l.is_matrix() || l.rows() != labels.size())
    throw std::invalid_argument("logit_constraint_loss: logits/labels size mismatch");
  const std::size_t b = l.rows(), c = l.cols();
  std::set<int> seen(seen_classes.begin(), seen_classes.end());
  for (int y : labels)
    if (!seen.count(y))
      throw std::invalid_argument("logit_constraint_loss: label " + std::to_string(y) +
                                  " not among seen classes");
  if (seen.size() >= c) return g.constant_scalar(0.0);  // no unseen heads to constrain

  // gt column broadcast: (logits . onehot) * ones gives logit_label per row.
  Tensor pick = one_hot(labels, c);
  Graph::NodeId gt_col = g.matmul(g.mul(logits, g.constant(pick)), g.constant(Tensor(Shape{c, 1}, 1.0)));
  Graph::NodeId gt_full = g.matmul(gt_col, g.constant(Tensor(Shape{1, c}, 1.0)));
  Graph::NodeId pre = g.add_scalar(g.sub(logits, gt_full), margin);
  // Seen columns are pushed far below zero before the hinge instead of being
  // masked after it: same value and gradient, but the ReLU never receives the
  // structural zeros of the label column (keeps kink probes meaningful).
  Tensor unseen_mask(Shape{b, c});
  Tensor seen_sink(Shape{b, c});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const bool is_seen = seen.count(static_cast<int>(j)) != 0;
      unseen_mask.at(i, j) = is_seen ? 0.0 : 1.0;
      seen_sink.at(i, j) = is_seen ? 1e6 : 0.0;
    }
  Graph::NodeId hinge = g.relu(g.sub(g.mul(pre, g.constant(unseen_mask)), g.constant(seen_sink)));
  return g.scale(g.sum(hinge), 1.0 / static_cast<double>(b));
}

Graph::NodeId der_loss(Graph& g, Graph::NodeId replay_logits_now, const Tensor& stored_logits) {
  if (stored_logits.numel() == 0) return g.constant_scalar(0.0);
  const Tensor& now = g.value(replay_logits_now);
  if (now.shape != stored_logits.shape)
    throw std::invalid_argument("der_loss: shape mismatch " + shape_str(now.shape) + " vs " +
                                shape_str(stored_logits.shape));
  const std::size_t count = now.numel();
  Graph::NodeId diff = g.sub(replay_logits_now, g.constant(stored_logits));
  return g.scale(g.sum_sq(diff), 1.0 / static_cast<double>(count));
}

Graph::NodeId final_loss(Graph& g, const FinalLossInputs& in, const LossSchedule& sched, int t,
                         const TermToggles& toggles, LossBreakdown* breakdown) {
  sched.validate();
  const double alpha = toggles.dynamic_weighting ? sched.alpha(t) : sched.c;
  const double beta = sched.beta(t);

  // ACE over the union of the labeled batch and replayed exemplars: the mean
  // cross-entropy over all rows, each row group normalized over the classes
  // of its own batch. Keeping the normalizers asymmetric stops fresh rows
  // from suppressing absent-class heads.
  auto distinct = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  const bool replay_active = toggles.der && in.replay_logits >= 0 && !in.replay_labels.empty();
  Graph::NodeId ace = ace_loss(g, in.labeled_logits, in.labels, distinct(in.labels));
  if (replay_active && in.replay_in_ace) {
    Graph::NodeId replay_ace = ace_loss(g, in.replay_logits, in.replay_labels, distinct(in.replay_labels));
    const double nl = static_cast<double>(in.labels.size());
    const double nr = static_cast<double>(in.replay_labels.size());
    ace = g.scale(g.add(g.scale(ace, nl), g.scale(replay_ace, nr)), 1.0 / (nl + nr));
  }

  const double w_ace = toggles.ssl ? 1.0 - 0.1 * alpha : 1.0;
  Graph::NodeId total = w_ace == 1.0 ? ace : g.scale(ace, w_ace);

  LossBreakdown bd;
  bd.alpha = alpha;
  bd.beta = beta;
  bd.ace = g.value(ace).item();
  bd.w_ace = w_ace;

  if (toggles.ssl) {
    if (in.rotation_logits < 0) throw std::invalid_argument("final_loss: ssl enabled but no rotation logits");
    Graph::NodeId ssl = ssl_rotation_loss(g, in.rotation_logits, in.rotation_labels);
    bd.ssl = g.value(ssl).item();
    bd.w_ssl = alpha;
    total = g.add(total, g.scale(ssl, alpha));
  }
  if (toggles.lc) {
    Graph::NodeId lc = logit_constraint_loss(g, in.labeled_logits, in.labels, in.seen_classes, in.lc_margin);
    bd.lc = g.value(lc).item();
    bd.w_lc = sched.gamma;
    total = g.add(total, g.scale(lc, sched.gamma));
  }
  if (replay_active) {
    Graph::NodeId der = der_loss(g, in.replay_logits, in.replay_stored_logits);
    bd.der = g.value(der).item();
    bd.w_der = sched.eta;
    total = g.add(total, g.scale(der, sched.eta));
  }
  if (toggles.feature_kd && in.unlabeled_features >= 0 && in.feature_targets.numel() > 0) {
    Graph::NodeId fkd = feature_kd_loss(g, in.unlabeled_features, in.feature_targets);
    bd.feature_kd = g.value(fkd).item();
    bd.w_feature_kd = beta;
    total = g.add(total, g.scale(fkd, beta));
  }
  if (toggles.logit_kd && in.unlabeled_logits >= 0 && !in.prev_logit_batches.empty()) {
    Graph::NodeId lkd = logit_kd_loss(g, in.unlabeled_logits, in.prev_logit_batches, in.logit_kd_normalize);
    bd.logit_kd = g.value(lkd).item();
    bd.w_logit_kd = sched.delta;
    total = g.add(total, g.scale(lkd, sched.delta));
  }

  bd.total = g.value(total).item();
  if (breakdown) *breakdown = bd;
  return total;
}

}  // namespace cirlab
