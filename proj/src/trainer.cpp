#include "cirlab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "cirlab/rng.hpp"

namespace cirlab {

namespace {

constexpr std::uint64_t kSaltOrder = 0x6f72646572ull;
constexpr std::uint64_t kSaltUnlabeled = 0x756c7069636bull;
constexpr std::uint64_t kSaltRotation = 0x726f74617465ull;
constexpr std::uint64_t kSaltReplay = 0x7265706c6179ull;
constexpr std::uint64_t kSaltStream = 0x73747265616dull;

std::string breakdown_str(const LossBreakdown& bd) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "ace=%.6g ssl=%.6g lc=%.6g der=%.6g fkd=%.6g lkd=%.6g total=%.6g (alpha=%.6g beta=%.6g)",
                bd.ace, bd.ssl, bd.lc, bd.der, bd.feature_kd, bd.logit_kd, bd.total, bd.alpha, bd.beta);
  return buf;
}

}  // namespace

RunConfig RunConfig::normalized() const {
  RunConfig out = *this;
  out.model.num_classes = out.stream.labeled_classes;
  out.model.image_side = out.stream.image_side;
  if (out.stream.seed == 0) out.stream.seed = mix_seed(out.seed, kSaltStream);
  if (!out.flags.use_multi_model) out.pool_size = 1;
  return out;
}

void RunConfig::validate() const {
  stream.validate();
  schedule.validate();
  if (labeled_batch == 0 || unlabeled_batch == 0)
    throw std::invalid_argument("trainer: batch sizes must be >= 1");
  if (epochs == 0) throw std::invalid_argument("trainer: epochs must be >= 1");
  if (pool_size == 0) throw std::invalid_argument("trainer: pool_size must be >= 1");
  if (test_per_class == 0) throw std::invalid_argument("trainer: test_per_class must be >= 1");
  const std::size_t cost = model.feature_dim() + stream.labeled_classes + 1;
  if (cost > buffer_float_budget)
    throw std::invalid_argument("trainer: exemplar cost " + std::to_string(cost) +
                                " exceeds the float budget " + std::to_string(buffer_float_budget));
}

double evaluate(const ModelParams& model, const ModelPool* pool, const Tensor& test_images,
                const std::vector<int>& test_labels, bool average_logits, std::size_t offset) {
  if (test_labels.empty() || test_images.numel() == 0)
    throw std::invalid_argument("evaluate: empty test set");
  std::vector<int> pred;
  if (pool) {
    pred = pool->ensemble_predict(model, test_images, average_logits, offset);
  } else {
    ModelPool none(1);
    pred = none.ensemble_predict(model, test_images, average_logits, offset);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_labels.size(); ++i)
    if (pred[i] == test_labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test_labels.size());
}

Trainer::Trainer(const RunConfig& cfg)
    : cfg_(cfg.normalized()),
      pool_(cfg_.pool_size, cfg_.ema_momentum),
      buffer_(cfg_.buffer_capacity, cfg_.seed, cfg_.buffer_float_budget, cfg_.buffer_class_balanced) {
  cfg_.validate();
  model_ = ModelParams::init(cfg_.model, cfg_.seed);
  param_names_ = model_.parameter_names();
  opt_ = AdamState(cfg_.adam, static_cast<const ModelParams&>(model_).parameter_list());
  std::unique_ptr<FileSource> file_source;
  if (!cfg_.data_path.empty()) file_source = std::make_unique<FileSource>(ingest_dataset(cfg_.data_path));
  stream_ = generate_stream(cfg_.stream, file_source.get());
  auto test = make_test_set(cfg_.stream, cfg_.test_per_class, file_source.get());
  std::vector<Tensor> imgs;
  imgs.reserve(test.size());
  test_labels_.reserve(test.size());
  for (auto& [img, label] : test) {
    imgs.push_back(std::move(img));
    test_labels_.push_back(label);
  }
  test_images_ = flatten_rows(imgs);
  traces_.reserve(stream_.size());
}

std::vector<std::size_t> Trainer::epoch_order(std::uint64_t seed, std::size_t t, std::size_t epoch,
                                              std::size_t n) {
  Rng rng(mix_seed(mix_seed(seed, kSaltOrder), t, epoch));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  return order;
}

std::vector<std::size_t> Trainer::unlabeled_pick(std::uint64_t seed, std::size_t t, std::size_t step,
                                                 std::size_t total, std::size_t n) {
  Rng rng(mix_seed(mix_seed(seed, kSaltUnlabeled), t, step));
  return rng.sample_without_replacement(total, std::min(n, total));
}

std::vector<int> Trainer::rotation_draw(std::uint64_t seed, std::size_t t, std::size_t step, std::size_t n) {
  Rng rng(mix_seed(mix_seed(seed, kSaltRotation), t, step));
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>(rng.index(4));
  return out;
}

std::uint64_t Trainer::replay_seed(std::uint64_t seed, std::size_t t, std::size_t step) {
  return mix_seed(mix_seed(seed, kSaltReplay), t, step);
}

void Trainer::train_step(std::size_t t, std::size_t epoch_step, std::size_t global_step,
                         const std::vector<std::size_t>& order, ExperienceTrace& trace) {
  const Experience& exp = stream_[t];
  const AblationFlags& flags = cfg_.flags;

  const std::size_t lo = epoch_step * cfg_.labeled_batch;
  const std::size_t hi = std::min(lo + cfg_.labeled_batch, order.size());
  std::vector<Tensor> lab_imgs;
  std::vector<int> lab_labels;
  std::vector<std::size_t> lab_indices;
  lab_imgs.reserve(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    const std::size_t idx = order[i];
    lab_imgs.push_back(exp.labeled_images[idx]);
    lab_labels.push_back(exp.labels[idx]);
    lab_indices.push_back(idx);
  }
  const Tensor x_labeled = flatten_rows(lab_imgs);

  Graph g;
  BoundModel bm = bind_model(g, model_, true);
  ModelNodes lab = forward_nodes(g, bm, x_labeled);

  FinalLossInputs in;
  in.labeled_logits = lab.logits;
  in.labels = lab_labels;
  in.seen_classes = seen_classes_;
  in.lc_margin = cfg_.lc_margin;
  in.logit_kd_normalize = cfg_.logit_kd_normalize;
  in.replay_in_ace = cfg_.replay_in_ace;

  const bool need_unlabeled =
      (flags.use_ssl || flags.use_feature_kd || flags.use_logit_kd) && exp.unlabeled_count() > 0;
  if (need_unlabeled) {
    const auto pick = unlabeled_pick(cfg_.seed, t, global_step, exp.unlabeled_count(), cfg_.unlabeled_batch);
    const auto rot = rotation_draw(cfg_.seed, t, global_step, pick.size());
    std::vector<Tensor> unl_imgs;
    unl_imgs.reserve(pick.size());
    for (std::size_t i = 0; i < pick.size(); ++i)
      unl_imgs.push_back(rotate_image(exp.unlabeled()[pick[i]], rot[i]));
    const Tensor x_unlabeled = flatten_rows(unl_imgs);
    ModelNodes unl = forward_nodes(g, bm, x_unlabeled);
    in.rotation_logits = unl.rotation_logits;
    in.rotation_labels = rot;
    in.unlabeled_features = unl.features;
    in.unlabeled_logits = unl.logits;
    if ((flags.use_feature_kd || flags.use_logit_kd) && pool_.size() > 0) {
      PoolTargets targets = pool_.compute_targets(x_unlabeled);
      in.feature_targets = std::move(targets.feature_targets);
      if (cfg_.logit_kd_target == LogitKdTarget::PerModelSum)
        in.prev_logit_batches = std::move(targets.logit_batches);
      else
        in.prev_logit_batches = {std::move(targets.composite_logits)};
    }
  }

  if (flags.use_der && buffer_.size() > 0 && cfg_.replay_batch > 0) {
    const auto replay = buffer_.sample_batch(cfg_.replay_batch, replay_seed(cfg_.seed, t, global_step));
    const std::size_t fdim = replay[0].feature.numel();
    const std::size_t c = replay[0].logit.numel();
    Tensor feats(Shape{replay.size(), fdim});
    Tensor stored(Shape{replay.size(), c});
    in.replay_labels.reserve(replay.size());
    for (std::size_t i = 0; i < replay.size(); ++i) {
      std::copy(replay[i].feature.data.begin(), replay[i].feature.data.end(),
                feats.data.begin() + static_cast<std::ptrdiff_t>(i * fdim));
      std::copy(replay[i].logit.data.begin(), replay[i].logit.data.end(),
                stored.data.begin() + static_cast<std::ptrdiff_t>(i * c));
      in.replay_labels.push_back(replay[i].label);
    }
    in.replay_logits = classifier_head_node(g, bm, g.constant(feats));
    in.replay_stored_logits = std::move(stored);
  }

  TermToggles toggles;
  toggles.ssl = flags.use_ssl && in.rotation_logits >= 0;
  toggles.lc = flags.use_lc;
  toggles.der = flags.use_der;
  toggles.feature_kd = flags.use_feature_kd;
  toggles.logit_kd = flags.use_logit_kd;
  toggles.dynamic_weighting = flags.dynamic_weighting;

  LossBreakdown bd;
  const Graph::NodeId loss = final_loss(g, in, cfg_.schedule, static_cast<int>(t), toggles, &bd);
  if (!std::isfinite(bd.total))
    throw std::runtime_error("trainer: non-finite loss at experience " + std::to_string(t) + " step " +
                             std::to_string(global_step) + ": " + breakdown_str(bd));
  g.backward(loss);

  auto params = model_.parameter_list();
  std::vector<const Tensor*> grads;
  grads.reserve(params.size());
  for (Graph::NodeId id : bm.all()) grads.push_back(&g.grad(id));
  opt_.step(params, grads, param_names_);

  if (flags.use_ema && !cfg_.ema_per_experience) pool_.ema_refresh_all(model_);

  trace.alpha = bd.alpha;
  trace.beta = bd.beta;
  trace.ace += bd.ace;
  trace.ssl += bd.ssl;
  trace.lc += bd.lc;
  trace.der += bd.der;
  trace.feature_kd += bd.feature_kd;
  trace.logit_kd += bd.logit_kd;
  trace.total += bd.total;
  trace.w_ace = bd.w_ace;
  trace.w_ssl = bd.w_ssl;
  trace.w_lc = bd.w_lc;
  trace.w_der = bd.w_der;
  trace.w_feature_kd = bd.w_feature_kd;
  trace.w_logit_kd = bd.w_logit_kd;
  trace.steps += 1;

  if (step_observer) step_observer(t, global_step, model_);
}

void Trainer::train_experience(std::size_t t) {
  if (t >= stream_.size()) throw std::out_of_range("train_experience: no experience " + std::to_string(t));
  const Experience& exp = stream_[t];
  for (int cls : exp.present_classes)
    if (std::find(seen_classes_.begin(), seen_classes_.end(), cls) == seen_classes_.end())
      seen_classes_.push_back(cls);

  ExperienceTrace trace;
  trace.experience = t;
  const std::size_t steps_per_epoch =
      (exp.labeled_images.size() + cfg_.labeled_batch - 1) / cfg_.labeled_batch;
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const auto order = epoch_order(cfg_.seed, t, epoch, exp.labeled_images.size());
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++global_step)
      train_step(t, s, global_step, order, trace);
  }

  if (trace.steps > 0) {
    const double inv = 1.0 / static_cast<double>(trace.steps);
    trace.ace *= inv;
    trace.ssl *= inv;
    trace.lc *= inv;
    trace.der *= inv;
    trace.feature_kd *= inv;
    trace.logit_kd *= inv;
    trace.total *= inv;
  }

  // Exemplars are captured once per experience from the trained model:
  // mature logits and the freshest features the stream will get.
  ForwardOutput snapshot_out = model_forward(model_, flatten_rows(exp.labeled_images));
  for (std::size_t i = 0; i < exp.labeled_images.size(); ++i) {
    Exemplar e;
    e.feature = Tensor(Shape{snapshot_out.features.cols()});
    e.logit = Tensor(Shape{snapshot_out.logits.cols()});
    for (std::size_t j = 0; j < snapshot_out.features.cols(); ++j)
      e.feature.data[j] = snapshot_out.features.at(i, j);
    for (std::size_t j = 0; j < snapshot_out.logits.cols(); ++j)
      e.logit.data[j] = snapshot_out.logits.at(i, j);
    e.label = exp.labels[i];
    e.task_of_origin = t;
    buffer_.insert(std::move(e));
  }

  if (cfg_.flags.use_ema && cfg_.ema_per_experience) pool_.ema_refresh_all(model_);
  pool_.push_snapshot(model_);
  traces_.push_back(trace);
}

double Trainer::evaluate_now() const {
  return evaluate(model_, &pool_, test_images_, test_labels_, cfg_.ensemble_average_logits,
                  cfg_.ensemble_offset);
}

double Trainer::evaluate_classes(const std::vector<int>& classes) const {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < test_labels_.size(); ++i)
    if (std::find(classes.begin(), classes.end(), test_labels_[i]) != classes.end()) keep.push_back(i);
  if (keep.empty()) throw std::invalid_argument("evaluate_classes: no test samples for requested classes");
  const std::size_t d = test_images_.cols();
  Tensor imgs(Shape{keep.size(), d});
  std::vector<int> labels;
  labels.reserve(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) imgs.at(i, j) = test_images_.at(keep[i], j);
    labels.push_back(test_labels_[keep[i]]);
  }
  return evaluate(model_, &pool_, imgs, labels, cfg_.ensemble_average_logits, cfg_.ensemble_offset);
}

RunMetrics Trainer::run() {
  RunMetrics metrics;
  for (std::size_t t = 0; t < stream_.size(); ++t) {
    const auto start = std::chrono::steady_clock::now();
    train_experience(t);
    traces_.back().accuracy = evaluate_now();
    const auto end = std::chrono::steady_clock::now();
    wall_ms_.push_back(std::chrono::duration<double, std::milli>(end - start).count());
    if (experience_observer) experience_observer(t);
  }
  metrics.experiences = traces_;
  metrics.wall_ms = wall_ms_;
  metrics.final_accuracy = traces_.empty() ? 0.0 : traces_.back().accuracy;
  return metrics;
}

RunMetrics run_stream(const RunConfig& cfg) {
  Trainer trainer(cfg);
  return trainer.run();
}

std::string metrics_csv_string(const RunMetrics& metrics) {
  std::string out =
      "experience,steps,alpha,beta,accuracy,ace,ssl,lc,der,feature_kd,logit_kd,total,"
      "w_ace,w_ssl,w_lc,w_der,w_feature_kd,w_logit_kd\n";
  char buf[512];
  for (const auto& e : metrics.experiences) {
    std::snprintf(buf, sizeof(buf),
                  "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                  "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  e.experience, e.steps, e.alpha, e.beta, e.accuracy, e.ace, e.ssl, e.lc, e.der,
                  e.feature_kd, e.logit_kd, e.total, e.w_ace, e.w_ssl, e.w_lc, e.w_der, e.w_feature_kd,
                  e.w_logit_kd);
    out += buf;
  }
  return out;
}

void write_metrics_csv(const std::string& path, const RunMetrics& metrics) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << metrics_csv_string(metrics);
  if (!f) throw std::runtime_error("metrics: write failed for " + path);
}

}  // namespace cirlab
