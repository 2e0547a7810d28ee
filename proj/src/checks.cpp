#include "cirlab/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "cirlab/buffer.hpp"
#include "cirlab/losses.hpp"
#include "cirlab/model.hpp"
#include "cirlab/pool.hpp"
#include "cirlab/rng.hpp"
#include "cirlab/stream.hpp"
#include "cirlab/trainer.hpp"

namespace cirlab {

bool all_pass(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

std::string format_results(const std::vector<CheckResult>& results) {
  std::string out;
  for (const auto& r : results) {
    out += (r.pass ? "[PASS] " : "[FAIL] ") + r.name;
    if (!r.detail.empty()) out += "  (" + r.detail + ")";
    out += "\n";
  }
  return out;
}

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t(Shape{r, c});
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

struct OpCase {
  std::string name;
  // Build the loss over a single trainable block; extra constants captured.
  GradCheckFn fn;
  Tensor start;
};

// Worst relative error across `instances` seeded instances of one op.
CheckResult sweep_op(const std::string& name, std::size_t instances, double tolerance, std::uint64_t seed,
                     const std::function<OpCase(Rng&)>& make) {
  CheckResult out;
  out.name = name;
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(mix_seed(seed, std::hash<std::string>{}(name), i));
    OpCase c = make(rng);
    GradCheckReport rep = finite_diff_check(c.fn, {c.start}, {name}, 1e-6, tolerance);
    if (!rep.deterministic) {
      out.pass = false;
      out.detail = "non-deterministic loss";
      return out;
    }
    worst = std::max(worst, rep.blocks[0].max_rel_err);
    if (!rep.pass) {
      out.pass = false;
      char buf[128];
      std::snprintf(buf, sizeof(buf), "instance %zu rel_err=%.3e", i, rep.blocks[0].max_rel_err);
      out.detail = buf;
      return out;
    }
  }
  out.pass = true;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%zu instances, worst rel_err=%.3e", instances, worst);
  out.detail = buf;
  return out;
}

CheckResult composite_check(std::uint64_t seed, std::size_t instances, double tolerance);

}  // namespace

std::vector<CheckResult> run_gradient_checks(std::uint64_t seed, std::size_t instances, double tolerance) {
  std::vector<CheckResult> out;

  out.push_back(sweep_op("ace_loss", instances, tolerance, seed, [](Rng& rng) {
    const std::size_t b = 3 + rng.index(4), c = 5 + rng.index(4);
    const std::size_t present = 2 + rng.index(c - 2);
    std::vector<int> classes;
    for (std::size_t j = 0; j < c; ++j) classes.push_back(static_cast<int>(j));
    rng.shuffle(classes);
    classes.resize(present);
    std::vector<int> labels(b);
    for (auto& y : labels) y = classes[rng.index(classes.size())];
    OpCase oc;
    oc.name = "ace";
    oc.start = random_matrix(rng, b, c);
    oc.fn = [labels, classes](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
      Graph g;
      Graph::NodeId logits = g.input(p[0], grads != nullptr);
      Graph::NodeId loss = ace_loss(g, logits, labels, classes);
      if (grads) {
        g.backward(loss);
        *grads = {g.grad(logits)};
      }
      return g.value(loss).item();
    };
    return oc;
  }));

  out.push_back(sweep_op("ssl_rotation_loss", instances, tolerance, seed, [](Rng& rng) {
    const std::size_t b = 2 + rng.index(6);
    std::vector<int> labels(b);
    for (auto& y : labels) y = static_cast<int>(rng.index(4));
    OpCase oc;
    oc.start = random_matrix(rng, b, 4);
    oc.fn = [labels](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
      Graph g;
      Graph::NodeId logits = g.input(p[0], grads != nullptr);
      Graph::NodeId loss = ssl_rotation_loss(g, logits, labels);
      if (grads) {
        g.backward(loss);
        *grads = {g.grad(logits)};
      }
      return g.value(loss).item();
    };
    return oc;
  }));

  out.push_back(sweep_op("logit_kd_loss", instances, tolerance, seed, [](Rng& rng) {
    const std::size_t b = 2 + rng.index(4), c = 2 + rng.index(4);
    const std::size_t k = 1 + rng.index(3);
    std::vector<Tensor> prev;
    for (std::size_t i = 0; i < k; ++i) prev.push_back(random_matrix(rng, b, c));
    OpCase oc;
    oc.start = random_matrix(rng, b, c);
    oc.fn = [prev](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
      Graph g;
      Graph::NodeId logits = g.input(p[0], grads != nullptr);
      Graph::NodeId loss = logit_kd_loss(g, logits, prev);
      if (grads) {
        g.backward(loss);
        *grads = {g.grad(logits)};
      }
      return g.value(loss).item();
    };
    return oc;
  }));

  out.push_back(sweep_op("feature_kd_loss", instances, tolerance, seed, [](Rng& rng) {
    const std::size_t b = 2 + rng.index(4), f = 3 + rng.index(5);
    Tensor target = random_matrix(rng, b, f);
    OpCase oc;
    oc.start = random_matrix(rng, b, f);
    oc.fn = [target](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
      Graph g;
      Graph::NodeId feats = g.input(p[0], grads != nullptr);
      Graph::NodeId loss = feature_kd_loss(g, feats, target);
      if (grads) {
        g.backward(loss);
        *grads = {g.grad(feats)};
      }
      return g.value(loss).item();
    };
    return oc;
  }));

  out.push_back(sweep_op("logit_constraint_loss", instances, tolerance, seed, [](Rng& rng) {
    const std::size_t b = 2 + rng.index(4), c = 5 + rng.index(4);
    const std::size_t n_seen = 2 + rng.index(c - 3);  // leave at least one unseen head
    std::vector<int> seen;
    for (std::size_t j = 0; j < n_seen; ++j) seen.push_back(static_cast<int>(j));
    std::vector<int> labels(b);
    for (auto& y : labels) y = seen[rng.index(seen.size())];
    // Regenerate until every hinge argument sits clear of the kink.
    Tensor logits;
    for (;;) {
      logits = random_matrix(rng, b, c);
      double closest = 1e9;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = static_cast<std::size_t>(n_seen); j < c; ++j)
          closest = std::min(closest,
                             std::fabs(logits.at(i, j) - logits.at(i, static_cast<std::size_t>(labels[i]))));
      if (closest > 1e-3) break;
    }
    OpCase oc;
    oc.start = logits;
    oc.fn = [labels, seen](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
      Graph g;
      Graph::NodeId l = g.input(p[0], grads != nullptr);
      Graph::NodeId loss = logit_constraint_loss(g, l, labels, seen, 0.0);
      if (grads) {
        g.backward(loss);
        *grads = {g.grad(l)};
      }
      return g.value(loss).item();
    };
    return oc;
  }));

  out.push_back(sweep_op("der_loss", instances, tolerance, seed, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(5), c = 2 + rng.index(5);
    Tensor stored = random_matrix(rng, n, c);
    OpCase oc;
    oc.start = random_matrix(rng, n, c);
    oc.fn = [stored](const std::vector<Tensor>& p, std::vector<Tensor>* grads) {
      Graph g;
      Graph::NodeId l = g.input(p[0], grads != nullptr);
      Graph::NodeId loss = der_loss(g, l, stored);
      if (grads) {
        g.backward(loss);
        *grads = {g.grad(l)};
      }
      return g.value(loss).item();
    };
    return oc;
  }));

  out.push_back(composite_check(seed, instances, tolerance));
  return out;
}

namespace {

// Full composite over every parameter of a toy model: labeled + unlabeled
// batches, a 2-snapshot pool, a replay batch, schedule at t=1.
CheckResult composite_check(std::uint64_t seed, std::size_t instances, double tolerance) {
  CheckResult out;
  out.name = "final_loss composite";
  double worst = 0.0;

  ModelConfig mc;
  mc.image_side = 4;
  mc.hidden = {8, 8};
  mc.num_classes = 3;

  for (std::size_t inst = 0; inst < instances; ++inst) {
    ModelParams proto;
    Tensor x_lab, x_unl, replay_feats, replay_stored, feature_targets;
    std::vector<Tensor> prev_logits;
    std::vector<int> labels, rot_labels, replay_labels, seen;
    // Propose instances until all ReLU inputs sit clear of the kink.
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng(mix_seed(seed, 0x636f6d70ull + inst, attempt));
      proto = ModelParams::init(mc, rng.next());
      const std::size_t bl = 4, bu = 5, nr = 3;
      x_lab = random_matrix(rng, bl, mc.input_dim(), 0.7);
      x_unl = random_matrix(rng, bu, mc.input_dim(), 0.7);
      labels.clear();
      seen = {0, 1};
      for (std::size_t i = 0; i < bl; ++i) labels.push_back(static_cast<int>(rng.index(2)));
      rot_labels.clear();
      for (std::size_t i = 0; i < bu; ++i) rot_labels.push_back(static_cast<int>(rng.index(4)));
      replay_labels.clear();
      for (std::size_t i = 0; i < nr; ++i) replay_labels.push_back(static_cast<int>(rng.index(2)));
      replay_feats = random_matrix(rng, nr, mc.feature_dim(), 0.8);
      replay_stored = random_matrix(rng, nr, mc.num_classes, 0.8);

      ModelPool pool(2, 0.999);
      for (int k = 0; k < 2; ++k) {
        ModelParams snap = proto;
        for (Tensor* t : snap.parameter_list())
          for (double& v : t->data) v += 0.05 * rng.normal();
        pool.push_snapshot(snap);
      }
      PoolTargets targets = pool.compute_targets(x_unl);
      feature_targets = targets.feature_targets;
      prev_logits = targets.logit_batches;

      // Kink distance probe at the base point.
      Graph g;
      BoundModel bm = bind_model(g, proto, false);
      ModelNodes lab = forward_nodes(g, bm, x_lab);
      ModelNodes unl = forward_nodes(g, bm, x_unl);
      FinalLossInputs in;
      in.labeled_logits = lab.logits;
      in.labels = labels;
      in.rotation_logits = unl.rotation_logits;
      in.rotation_labels = rot_labels;
      in.unlabeled_features = unl.features;
      in.unlabeled_logits = unl.logits;
      in.replay_logits = classifier_head_node(g, bm, g.constant(replay_feats));
      in.replay_labels = replay_labels;
      in.replay_stored_logits = replay_stored;
      in.feature_targets = feature_targets;
      in.prev_logit_batches = prev_logits;
      in.seen_classes = seen;
      LossSchedule sched;
      final_loss(g, in, sched, 1, TermToggles{});
      if (g.min_abs_relu_input() > 2e-4) break;
    }

    auto loss_fn = [&](const std::vector<Tensor>& ps, std::vector<Tensor>* grads) -> double {
      ModelParams m = proto;
      auto dst = m.parameter_list();
      for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = ps[i];
      Graph g;
      BoundModel bm = bind_model(g, m, grads != nullptr);
      ModelNodes lab = forward_nodes(g, bm, x_lab);
      ModelNodes unl = forward_nodes(g, bm, x_unl);
      FinalLossInputs in;
      in.labeled_logits = lab.logits;
      in.labels = labels;
      in.rotation_logits = unl.rotation_logits;
      in.rotation_labels = rot_labels;
      in.unlabeled_features = unl.features;
      in.unlabeled_logits = unl.logits;
      in.replay_logits = classifier_head_node(g, bm, g.constant(replay_feats));
      in.replay_labels = replay_labels;
      in.replay_stored_logits = replay_stored;
      in.feature_targets = feature_targets;
      in.prev_logit_batches = prev_logits;
      in.seen_classes = seen;
      LossSchedule sched;
      Graph::NodeId loss = final_loss(g, in, sched, 1, TermToggles{});
      if (grads) {
        g.backward(loss);
        grads->clear();
        for (Graph::NodeId id : bm.all()) grads->push_back(g.grad(id));
      }
      return g.value(loss).item();
    };

    std::vector<Tensor> start;
    for (const Tensor* t : static_cast<const ModelParams&>(proto).parameter_list()) start.push_back(*t);
    GradCheckReport rep = finite_diff_check(loss_fn, start, proto.parameter_names(), 1e-5, tolerance);
    if (!rep.deterministic) {
      out.pass = false;
      out.detail = "non-deterministic composite";
      return out;
    }
    for (const auto& b : rep.blocks) worst = std::max(worst, b.max_rel_err);
    if (!rep.pass) {
      out.pass = false;
      char buf[128];
      std::snprintf(buf, sizeof(buf), "instance %zu worst rel_err=%.3e", inst, worst);
      out.detail = buf;
      return out;
    }
  }
  out.pass = true;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%zu instances, worst rel_err=%.3e", instances, worst);
  out.detail = buf;
  return out;
}

}  // namespace

std::vector<CheckResult> run_invariant_checks(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(mix_seed(seed, 0x696e76ull));

  {
    CheckResult r{"schedule: alpha decreasing, labeled weight in [0.95,1)", true, ""};
    LossSchedule s;
    double prev = 1e9;
    for (int t = 0; t < 50 && r.pass; ++t) {
      const double a = s.alpha(t);
      const double w = 1.0 - 0.1 * a;
      if (!(a < prev) || w < 0.95 || w >= 1.0) r.pass = false;
      prev = a;
    }
    out.push_back(r);
  }
  {
    CheckResult r{"gram: symmetry on random batches", true, ""};
    for (int i = 0; i < 20 && r.pass; ++i) {
      Tensor l = random_matrix(rng, 2 + rng.index(6), 2 + rng.index(6));
      GramPair gp = gram_pair(l);
      for (std::size_t a = 0; a < gp.instance_gram.rows(); ++a)
        for (std::size_t b = 0; b < gp.instance_gram.cols(); ++b)
          if (gp.instance_gram.at(a, b) != gp.instance_gram.at(b, a)) r.pass = false;
      for (std::size_t a = 0; a < gp.class_gram.rows(); ++a)
        for (std::size_t b = 0; b < gp.class_gram.cols(); ++b)
          if (gp.class_gram.at(a, b) != gp.class_gram.at(b, a)) r.pass = false;
    }
    out.push_back(r);
  }
  {
    CheckResult r{"buffer: capacity and float budget under 1000 mixed inserts", true, ""};
    MemoryBuffer buf(50, seed);
    for (int i = 0; i < 1000; ++i) {
      Exemplar e;
      e.feature = Tensor(Shape{8}, rng.normal());
      e.logit = Tensor(Shape{4}, rng.normal());
      e.label = static_cast<int>(rng.index(10));
      buf.insert(std::move(e));
      if (buf.size() > 50 || buf.total_floats() > 50 * 1024) r.pass = false;
    }
    out.push_back(r);
  }
  {
    CheckResult r{"pool: FIFO bound and EMA fixed point", true, ""};
    ModelConfig mc;
    mc.image_side = 4;
    mc.hidden = {6};
    mc.num_classes = 3;
    ModelParams m = ModelParams::init(mc, seed);
    ModelPool pool(2, 0.9);
    for (int i = 0; i < 5; ++i) pool.push_snapshot(m);
    if (pool.size() != 2) r.pass = false;
    pool.ema_refresh_all(m);  // snapshot == current stays put
    for (std::size_t s = 0; s < pool.size(); ++s) {
      auto a = pool.snapshot(s).parameter_list();
      auto b = m.parameter_list();
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i]->data != b[i]->data) r.pass = false;
    }
    out.push_back(r);
  }
  {
    CheckResult r{"rotation: four quarter turns compose to identity", true, ""};
    Tensor img = synth_image(3, 77, 8);
    Tensor rot = img;
    for (int i = 0; i < 4; ++i) rot = rotate_image(rot, 1);
    if (rot.data != img.data) r.pass = false;
    out.push_back(r);
  }
  {
    CheckResult r{"trainer: identical seeds give identical metrics", true, ""};
    RunConfig cfg;
    cfg.stream.num_experiences = 2;
    cfg.stream.labeled_classes = 4;
    cfg.stream.total_classes = 6;
    cfg.stream.classes_per_exp = 2;
    cfg.stream.labeled_per_exp = 16;
    cfg.stream.unlabeled_per_exp = 16;
    cfg.labeled_batch = 8;
    cfg.unlabeled_batch = 8;
    cfg.model.hidden = {16, 16};
    cfg.test_per_class = 4;
    cfg.seed = seed;
    const std::string a = metrics_csv_string(run_stream(cfg));
    const std::string b = metrics_csv_string(run_stream(cfg));
    if (a != b) r.pass = false;
    out.push_back(r);
  }
  return out;
}

}  // namespace cirlab
