#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "cirlab/pool.hpp"
#include "cirlab/rng.hpp"

using namespace cirlab;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.image_side = 4;
  cfg.hidden = {6};
  cfg.num_classes = 3;
  return cfg;
}

ModelParams tagged_model(double tag) {
  ModelParams p = ModelParams::init(tiny_config(), 1);
  for (Tensor* t : p.parameter_list())
    for (double& v : t->data) v = tag;
  return p;
}

Tensor some_batch(std::uint64_t seed, std::size_t rows = 3) {
  Rng rng(seed);
  Tensor t(Shape{rows, 16});
  for (double& v : t.data) v = rng.uniform();
  return t;
}

double param_distance(const ModelParams& a, const ModelParams& b) {
  auto pa = a.parameter_list();
  auto pb = b.parameter_list();
  double s = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->data.size(); ++j) {
      const double d = pa[i]->data[j] - pb[i]->data[j];
      s += d * d;
    }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("FIFO eviction keeps the newest K snapshots") {
  ModelPool pool(3, 0.9);
  for (int i = 1; i <= 4; ++i) pool.push_snapshot(tagged_model(i));
  REQUIRE(pool.size() == 3);
  CHECK(pool.snapshot(0).encoder[0].W.data[0] == 2.0);
  CHECK(pool.snapshot(1).encoder[0].W.data[0] == 3.0);
  CHECK(pool.snapshot(2).encoder[0].W.data[0] == 4.0);

  ModelPool single(1, 0.9);
  for (int i = 1; i <= 3; ++i) single.push_snapshot(tagged_model(i));
  CHECK(single.size() == 1);
  CHECK(single.newest().encoder[0].W.data[0] == 3.0);
}

TEST_CASE("snapshots are deep copies") {
  ModelPool pool(2, 0.9);
  ModelParams live = ModelParams::init(tiny_config(), 5);
  pool.push_snapshot(live);
  const Tensor batch = some_batch(1);
  auto before = model_forward(pool.newest(), batch);
  live.encoder[0].W.data[0] += 10.0;
  auto after = model_forward(pool.newest(), batch);
  CHECK(before.logits.data == after.logits.data);
}

TEST_CASE("ema refresh: m=1 freezes, snapshot==current is a fixed point") {
  ModelParams current = ModelParams::init(tiny_config(), 6);
  ModelPool frozen(2, 1.0);
  frozen.push_snapshot(tagged_model(7.0));
  frozen.ema_refresh_all(current);
  CHECK(frozen.newest().encoder[0].W.data[0] == 7.0);

  ModelPool fixed(2, 0.37);
  fixed.push_snapshot(current);
  fixed.ema_refresh_all(current);
  CHECK(param_distance(fixed.newest(), current) == 0.0);
}

TEST_CASE("repeated refresh against a frozen current contracts geometrically") {
  ModelParams current = ModelParams::init(tiny_config(), 8);
  ModelParams start = ModelParams::init(tiny_config(), 9);
  const double m = 0.9;
  ModelPool pool(1, m);
  pool.push_snapshot(start);

  // Scalar recurrence oracle: every coordinate follows p <- m*p + (1-m)*c.
  std::vector<double> oracle;
  for (const Tensor* t : static_cast<const ModelParams&>(start).parameter_list())
    oracle.insert(oracle.end(), t->data.begin(), t->data.end());
  std::vector<double> target;
  for (const Tensor* t : static_cast<const ModelParams&>(current).parameter_list())
    target.insert(target.end(), t->data.begin(), t->data.end());

  double prev_dist = param_distance(pool.newest(), current);
  for (int it = 0; it < 200; ++it) {
    pool.ema_refresh_all(current);
    for (std::size_t i = 0; i < oracle.size(); ++i) oracle[i] = target[i] + m * (oracle[i] - target[i]);
    // bitwise identical to the per-coordinate scalar recurrence
    std::size_t k = 0;
    for (const Tensor* t : static_cast<const ModelParams&>(pool.newest()).parameter_list())
      for (double v : t->data) CHECK(v == oracle[k++]);
    const double dist = param_distance(pool.newest(), current);
    CHECK(dist == doctest::Approx(m * prev_dist).epsilon(1e-9));
    prev_dist = dist;
  }
}

TEST_CASE("compute_targets: single snapshot, tie-break, confidence mixing") {
  ModelParams a = ModelParams::init(tiny_config(), 10);
  const Tensor batch = some_batch(2, 4);

  ModelPool one(3, 0.9);
  one.push_snapshot(a);
  PoolTargets t1 = one.compute_targets(batch);
  auto fa = model_forward(a, batch);
  CHECK(t1.feature_targets.data == fa.features.data);
  REQUIRE(t1.logit_batches.size() == 1);
  CHECK(t1.logit_batches[0].data == fa.logits.data);

  // Two identical snapshots: tie broken toward the newest, targets unchanged.
  ModelPool two(3, 0.9);
  two.push_snapshot(a);
  two.push_snapshot(a);
  PoolTargets t2 = two.compute_targets(batch);
  CHECK(t2.feature_targets.data == fa.features.data);
  for (int idx : t2.selected_model_index) CHECK(idx == 1);

  // Empty pool: empty targets.
  ModelPool none(3, 0.9);
  PoolTargets t0 = none.compute_targets(batch);
  CHECK(t0.empty());
  CHECK(t0.feature_targets.numel() == 0);
}

TEST_CASE("compute_targets selects per sample by classifier confidence") {
  // Engineer two snapshots with opposite confidence on two inputs. The
  // encoder passes one pixel through; classifier weights steer confidence.
  ModelConfig cfg;
  cfg.image_side = 2;
  cfg.hidden = {2};
  cfg.num_classes = 2;
  auto mk = [&](double w0, double w1) {
    ModelParams p = ModelParams::init(cfg, 1);
    for (Tensor* t : p.parameter_list())
      for (double& v : t->data) v = 0.0;
    p.encoder[0].W.at(0, 0) = 1.0;  // feature0 = pixel0
    p.encoder[0].W.at(1, 1) = 1.0;  // feature1 = pixel1
    p.classifier.W.at(0, 0) = w0;   // class0 score from pixel0
    p.classifier.W.at(1, 1) = w1;   // class1 score from pixel1
    return p;
  };
  // Snapshot A confident when pixel0 is hot; B confident when pixel1 is hot.
  ModelParams a = mk(8.0, 0.0);
  ModelParams b = mk(0.0, 8.0);
  ModelPool pool(3, 0.9);
  pool.push_snapshot(a);
  pool.push_snapshot(b);

  Tensor batch(Shape{2, 4});
  batch.at(0, 0) = 1.0;  // sample 0: pixel0 hot -> A more confident
  batch.at(1, 1) = 1.0;  // sample 1: pixel1 hot -> B more confident
  PoolTargets t = pool.compute_targets(batch);
  REQUIRE(t.selected_model_index.size() == 2);
  CHECK(t.selected_model_index[0] == 0);
  CHECK(t.selected_model_index[1] == 1);

  auto fa = model_forward(a, batch);
  auto fb = model_forward(b, batch);
  for (std::size_t j = 0; j < t.feature_targets.cols(); ++j) {
    CHECK(t.feature_targets.at(0, j) == fa.features.at(0, j));
    CHECK(t.feature_targets.at(1, j) == fb.features.at(1, j));
  }
  // Composite logits follow the same per-sample selection.
  for (std::size_t j = 0; j < t.composite_logits.cols(); ++j) {
    CHECK(t.composite_logits.at(0, j) == fa.logits.at(0, j));
    CHECK(t.composite_logits.at(1, j) == fb.logits.at(1, j));
  }
}

TEST_CASE("ensemble prediction: empty pool and identical snapshot match single model") {
  ModelParams current = ModelParams::init(tiny_config(), 11);
  const Tensor batch = some_batch(3, 5);

  ModelPool none(2, 0.9);
  auto single = none.ensemble_predict(current, batch);

  ModelPool same(2, 0.9);
  same.push_snapshot(current);
  auto doubled = same.ensemble_predict(current, batch);
  CHECK(single == doubled);
}

TEST_CASE("ensemble averages probabilities: worked two-class example") {
  // current: p = (0.6, 0.4); snapshot: p = (0.3, 0.7) -> average (0.45, 0.55).
  ModelConfig cfg;
  cfg.image_side = 2;
  cfg.hidden = {1};
  cfg.num_classes = 2;
  auto with_bias = [&](double b0, double b1) {
    ModelParams p = ModelParams::init(cfg, 1);
    for (Tensor* t : p.parameter_list())
      for (double& v : t->data) v = 0.0;
    p.classifier.b.data[0] = b0;
    p.classifier.b.data[1] = b1;
    return p;
  };
  const double l0 = std::log(0.6), l1 = std::log(0.4);
  ModelParams current = with_bias(l0, l1);
  ModelParams prev = with_bias(std::log(0.3), std::log(0.7));
  ModelPool pool(1, 0.9);
  pool.push_snapshot(prev);

  Tensor batch(Shape{1, 4});
  auto pred = pool.ensemble_predict(current, batch);
  REQUIRE(pred.size() == 1);
  CHECK(pred[0] == 1);

  // Without the snapshot the current model would say class 0.
  ModelPool none(1, 0.9);
  CHECK(none.ensemble_predict(current, batch)[0] == 0);
}

TEST_CASE("ensemble argmax is invariant to common positive rescaling") {
  ModelParams current = ModelParams::init(tiny_config(), 12);
  ModelParams prev = ModelParams::init(tiny_config(), 13);
  ModelPool pool(1, 0.9);
  pool.push_snapshot(prev);
  const Tensor batch = some_batch(4, 6);
  auto base = pool.ensemble_predict(current, batch);
  // Adding the same constant to every logit rescales both probability
  // vectors by a common positive factor per row.
  ModelParams cur2 = current;
  for (double& v : cur2.classifier.b.data) v += 3.0;
  ModelParams prev2 = prev;
  for (double& v : prev2.classifier.b.data) v += 3.0;
  ModelPool pool2(1, 0.9);
  pool2.push_snapshot(prev2);
  CHECK(pool2.ensemble_predict(cur2, batch) == base);
}

TEST_CASE("compute_targets is deterministic") {
  ModelPool pool(2, 0.9);
  pool.push_snapshot(ModelParams::init(tiny_config(), 14));
  pool.push_snapshot(ModelParams::init(tiny_config(), 15));
  const Tensor batch = some_batch(7, 4);
  PoolTargets a = pool.compute_targets(batch);
  PoolTargets b = pool.compute_targets(batch);
  CHECK(a.feature_targets.data == b.feature_targets.data);
  CHECK(a.selected_model_index == b.selected_model_index);
}

TEST_CASE("pool checkpoint roundtrip") {
  const std::string path = "test_pool_ckpt.bin";
  ModelPool pool(3, 0.9);
  pool.push_snapshot(ModelParams::init(tiny_config(), 16));
  pool.push_snapshot(ModelParams::init(tiny_config(), 17));
  pool.save(path);

  ModelPool loaded(3, 0.9);
  loaded.load(path, tiny_config());
  REQUIRE(loaded.size() == 2);
  const Tensor batch = some_batch(9, 3);
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(model_forward(loaded.snapshot(i), batch).logits.data ==
          model_forward(pool.snapshot(i), batch).logits.data);
  std::remove(path.c_str());
}
