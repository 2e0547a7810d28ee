#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <cmath>
#include <vector>

#include "cirlab/config.hpp"
#include "cirlab/pool.hpp"
#include "cirlab/rng.hpp"
#include "cirlab/trainer.hpp"

using namespace cirlab;

namespace {

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.stream.total_classes = 8;
  cfg.stream.labeled_classes = 6;
  cfg.stream.num_experiences = 3;
  cfg.stream.classes_per_exp = 2;
  cfg.stream.labeled_per_exp = 24;
  cfg.stream.unlabeled_per_exp = 24;
  cfg.stream.repetition_probability = 0.3;
  cfg.labeled_batch = 8;
  cfg.unlabeled_batch = 8;
  cfg.replay_batch = 8;
  cfg.model.hidden = {24, 24};
  cfg.test_per_class = 6;
  cfg.seed = 5;
  return cfg;
}

std::uint64_t hash_params(const ModelParams& p) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Tensor* t : p.parameter_list()) {
    for (double v : t->data) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      h ^= bits;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace

TEST_CASE("flags-off trainer is bitwise-equal to an independent fine-tuning loop") {
  RunConfig cfg = tiny_run();
  apply_preset(cfg, "ft");
  cfg.epochs = 3;

  Trainer trainer(cfg);
  std::vector<std::uint64_t> trainer_hashes;
  trainer.step_observer = [&](std::size_t, std::size_t, const ModelParams& p) {
    trainer_hashes.push_back(hash_params(p));
  };
  const RunConfig norm = trainer.config();
  trainer.train_experience(0);
  trainer.train_experience(1);

  // Plain loop built from the same primitives, no trainer involved.
  auto stream = generate_stream(norm.stream);
  ModelParams model = ModelParams::init(norm.model, norm.seed);
  AdamState opt(norm.adam, static_cast<const ModelParams&>(model).parameter_list());
  const auto names = model.parameter_names();
  std::vector<std::uint64_t> plain_hashes;
  for (std::size_t t = 0; t < 2; ++t) {
    const Experience& exp = stream[t];
    const std::size_t spe = (exp.labeled_images.size() + norm.labeled_batch - 1) / norm.labeled_batch;
    for (std::size_t epoch = 0; epoch < norm.epochs; ++epoch) {
      const auto order = Trainer::epoch_order(norm.seed, t, epoch, exp.labeled_images.size());
      for (std::size_t s = 0; s < spe; ++s) {
        const std::size_t lo = s * norm.labeled_batch;
        const std::size_t hi = std::min(lo + norm.labeled_batch, order.size());
        std::vector<Tensor> imgs;
        std::vector<int> labels;
        for (std::size_t i = lo; i < hi; ++i) {
          imgs.push_back(exp.labeled_images[order[i]]);
          labels.push_back(exp.labels[order[i]]);
        }
        std::vector<int> classes = labels;
        std::sort(classes.begin(), classes.end());
        classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

        Graph g;
        BoundModel bm = bind_model(g, model, true);
        ModelNodes nodes = forward_nodes(g, bm, flatten_rows(imgs));
        Graph::NodeId loss = ace_loss(g, nodes.logits, labels, classes);
        g.backward(loss);
        auto params = model.parameter_list();
        std::vector<const Tensor*> grads;
        for (Graph::NodeId id : bm.all()) grads.push_back(&g.grad(id));
        opt.step(params, grads, names);
        plain_hashes.push_back(hash_params(model));
      }
    }
  }
  REQUIRE(trainer_hashes.size() == plain_hashes.size());
  CHECK(trainer_hashes == plain_hashes);
  CHECK(hash_params(trainer.model()) == hash_params(model));
}

TEST_CASE("KD terms are exactly zero through the first experience") {
  RunConfig cfg = tiny_run();
  apply_preset(cfg, "full");
  Trainer trainer(cfg);
  trainer.train_experience(0);
  const ExperienceTrace& t0 = trainer.traces()[0];
  CHECK(t0.feature_kd == 0.0);
  CHECK(t0.logit_kd == 0.0);
  CHECK(t0.ssl > 0.0);
  CHECK(t0.ace > 0.0);
}

TEST_CASE("loss traces are identical across two executions") {
  RunConfig cfg = tiny_run();
  apply_preset(cfg, "full");
  const std::string a = metrics_csv_string(run_stream(cfg));
  const std::string b = metrics_csv_string(run_stream(cfg));
  CHECK(a == b);
  CHECK(a.find("nan") == std::string::npos);
}

TEST_CASE("alpha and beta follow the 0-based experience index") {
  RunConfig cfg = tiny_run();
  apply_preset(cfg, "full");
  RunMetrics m = run_stream(cfg);
  LossSchedule s;
  for (std::size_t t = 0; t < m.experiences.size(); ++t) {
    CHECK(m.experiences[t].alpha == s.alpha(static_cast<int>(t)));
    CHECK(m.experiences[t].beta == s.beta(static_cast<int>(t)));
  }
}

TEST_CASE("evaluate: constant predictor scores 1/C on a balanced set") {
  ModelConfig mc;
  mc.image_side = 4;
  mc.hidden = {4};
  mc.num_classes = 5;
  ModelParams constant = ModelParams::init(mc, 1);
  for (Tensor* t : constant.parameter_list())
    for (double& v : t->data) v = 0.0;
  constant.classifier.b.data[0] = 1.0;  // always class 0

  const std::size_t per_class = 7;
  Tensor images(Shape{5 * per_class, 16});
  std::vector<int> labels;
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t i = 0; i < per_class; ++i) labels.push_back(static_cast<int>(c));
  CHECK(evaluate(constant, nullptr, images, labels) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("evaluate: perfect logits score 1.0; empty test set rejected") {
  // Pixel c hot <=> class c; a passthrough encoder and identity classifier
  // route each sample to its own class.
  ModelConfig mc;
  mc.image_side = 2;
  mc.hidden = {4};
  mc.num_classes = 4;
  ModelParams oracle = ModelParams::init(mc, 1);
  for (Tensor* t : oracle.parameter_list())
    for (double& v : t->data) v = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    oracle.encoder[0].W.at(j, j) = 1.0;
    oracle.classifier.W.at(j, j) = 1.0;
  }
  Tensor images(Shape{4, 4});
  std::vector<int> labels;
  for (std::size_t i = 0; i < 4; ++i) {
    images.at(i, i) = 1.0;
    labels.push_back(static_cast<int>(i));
  }
  CHECK(evaluate(oracle, nullptr, images, labels) == 1.0);

  CHECK_THROWS_AS(evaluate(oracle, nullptr, Tensor(), {}), std::invalid_argument);
}

TEST_CASE("trained run accuracy matches an independent confusion-matrix recount") {
  RunConfig cfg = tiny_run();
  apply_preset(cfg, "full");
  Trainer trainer(cfg);
  RunMetrics m = trainer.run();

  // Recount: explicit probability averaging + argmax + confusion tally.
  const Tensor& images = trainer.test_images();
  const auto& labels = trainer.test_labels();
  ForwardOutput cur = model_forward(trainer.model(), images);
  Tensor pc = softmax_rows(cur.logits);
  if (trainer.pool().size() > 0) {
    ForwardOutput prev = model_forward(trainer.pool().newest(), images);
    Tensor pp = softmax_rows(prev.logits);
    for (std::size_t i = 0; i < pc.data.size(); ++i) pc.data[i] = 0.5 * (pc.data[i] + pp.data[i]);
  }
  const std::size_t c = pc.cols();
  std::vector<std::vector<int>> confusion(c, std::vector<int>(c, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (pc.at(i, j) > pc.at(i, arg)) arg = j;
    confusion[static_cast<std::size_t>(labels[i])][arg] += 1;
  }
  int diag = 0, total = 0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      diag += i == j ? confusion[i][j] : 0;
      total += confusion[i][j];
    }
  CHECK(m.final_accuracy == doctest::Approx(static_cast<double>(diag) / total).epsilon(1e-12));
}

TEST_CASE("single-experience stream: final accuracy equals plain supervised accuracy") {
  RunConfig cfg = tiny_run();
  apply_preset(cfg, "ft");
  cfg.stream.num_experiences = 3;
  cfg.stream.classes_per_exp = 2;
  cfg.stream.labeled_classes = 6;
  cfg.stream.repetition_probability = 0.0;
  RunConfig single = cfg;
  single.stream.num_experiences = 1;
  single.stream.classes_per_exp = 6;
  single.stream.labeled_classes = 6;

  RunMetrics m = run_stream(single);
  Trainer twin(single);
  twin.train_experience(0);
  CHECK(m.final_accuracy == twin.evaluate_now());
}

TEST_CASE("buffer contract holds through a full run") {
  RunConfig cfg = tiny_run();
  apply_preset(cfg, "full");
  cfg.buffer_capacity = 20;
  Trainer trainer(cfg);
  trainer.step_observer = [&](std::size_t, std::size_t, const ModelParams&) {
    REQUIRE(trainer.buffer().size() <= 20);
    REQUIRE(trainer.buffer().total_floats() <= 20 * 1024);
  };
  trainer.run();
  CHECK(trainer.buffer().size() <= 20);
  CHECK(trainer.buffer().total_floats() <= 20 * 1024);
  // every labeled sample inserted exactly once
  CHECK(trainer.buffer().seen_count() ==
        cfg.stream.num_experiences * cfg.stream.labeled_per_exp);
  CHECK(trainer.pool().size() <= trainer.pool().max_size());
}

TEST_CASE("fine-tuning forgets: experience-0 classes decay by the end") {
  RunConfig cfg;
  cfg.stream.total_classes = 14;
  cfg.stream.labeled_classes = 12;
  cfg.stream.num_experiences = 4;
  cfg.stream.classes_per_exp = 3;
  cfg.stream.labeled_per_exp = 48;
  cfg.stream.unlabeled_per_exp = 48;
  cfg.stream.repetition_probability = 0.0;  // classic class-incremental split
  cfg.labeled_batch = 16;
  cfg.unlabeled_batch = 16;
  cfg.model.hidden = {32, 32};
  cfg.epochs = 30;
  cfg.adam.lr = 3e-3;
  cfg.test_per_class = 8;
  cfg.seed = 3;
  apply_preset(cfg, "ft");

  double learned = 0.0, drop = 0.0;
  const std::uint64_t seeds[] = {3, 4, 5};
  for (std::uint64_t seed : seeds) {
    cfg.seed = seed;
    Trainer trainer(cfg);
    trainer.train_experience(0);
    const auto exp0_classes = trainer.stream()[0].present_classes;
    const double right_after = trainer.evaluate_classes(exp0_classes);
    for (std::size_t t = 1; t < cfg.stream.num_experiences; ++t) trainer.train_experience(t);
    const double at_end = trainer.evaluate_classes(exp0_classes);
    learned += right_after / 3.0;
    drop += (right_after - at_end) / 3.0;
  }
  CHECK(learned > 0.5);  // the first experience was actually learned
  CHECK(drop > 0.05);    // and its classes decayed by the end
}

TEST_CASE("desk ablation config clears chance comfortably inside the time budget") {
  RunConfig cfg = desk_ablation_config();
  apply_preset(cfg, "full");
  const auto start = std::chrono::steady_clock::now();
  RunMetrics m = run_stream(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double chance = 1.0 / static_cast<double>(cfg.stream.labeled_classes);
  CHECK(m.final_accuracy > chance);
  CHECK(m.final_accuracy > 3.0 * chance);  // comfortably, not marginally
  CHECK(secs < 120.0);
}

TEST_CASE("confidence-composite logit KD target runs and differs from the sum") {
  RunConfig cfg = tiny_run();
  apply_preset(cfg, "full");
  cfg.pool_size = 3;
  RunConfig comp = cfg;
  comp.logit_kd_target = LogitKdTarget::ConfidenceComposite;
  const std::string a = metrics_csv_string(run_stream(cfg));
  const std::string b = metrics_csv_string(run_stream(comp));
  CHECK(a != b);
}

TEST_CASE("conv-enabled model trains deterministically end to end") {
  RunConfig cfg = tiny_run();
  apply_preset(cfg, "full");
  cfg.model.use_conv = true;
  cfg.model.conv_filters = 2;
  cfg.model.hidden = {16, 16};
  const std::string a = metrics_csv_string(run_stream(cfg));
  const std::string b = metrics_csv_string(run_stream(cfg));
  CHECK(a == b);
  CHECK(a.find("nan") == std::string::npos);
}

TEST_CASE("non-finite guard aborts with step context") {
  RunConfig cfg = tiny_run();
  apply_preset(cfg, "ft");
  cfg.adam.lr = 1e200;  // first update overflows the next forward pass
  cfg.epochs = 2;
  Trainer trainer(cfg);
  bool threw = false;
  try {
    for (std::size_t t = 0; t < cfg.stream.num_experiences; ++t) trainer.train_experience(t);
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("experience") != std::string::npos);
  }
  CHECK(threw);
}
