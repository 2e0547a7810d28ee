#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cirlab/adam.hpp"
#include "cirlab/buffer.hpp"
#include "cirlab/losses.hpp"
#include "cirlab/model.hpp"
#include "cirlab/pool.hpp"
#include "cirlab/stream.hpp"

namespace cirlab {

struct AblationFlags {
  bool use_ssl = true;
  bool use_feature_kd = true;
  bool use_logit_kd = true;
  bool use_lc = true;
  bool use_der = true;  // replay: both the logit-matching term and exemplars inside ACE
  bool use_ema = true;
  bool use_multi_model = true;   // off forces the pool down to one snapshot
  bool dynamic_weighting = true;  // off freezes alpha at c
};

enum class LogitKdTarget { PerModelSum, ConfidenceComposite };

struct RunConfig {
  StreamConfig stream;
  LossSchedule schedule;
  ModelConfig model;

  std::size_t labeled_batch = 32;
  std::size_t unlabeled_batch = 50;
  std::size_t replay_batch = 32;
  std::size_t epochs = 1;
  AdamConfig adam;

  std::size_t pool_size = 3;
  double ema_momentum = 0.999;
  bool ema_per_experience = false;  // default: refresh once per step

  std::size_t buffer_capacity = 200;
  std::size_t buffer_float_budget = 1024;
  bool buffer_class_balanced = false;

  LogitKdTarget logit_kd_target = LogitKdTarget::PerModelSum;
  bool logit_kd_normalize = false;  // Grams over unit-normalized logit rows
  bool replay_in_ace = true;        // replayed exemplars join the ACE batch
  double lc_margin = 0.0;
  bool ensemble_average_logits = false;
  std::size_t ensemble_offset = 0;
  std::size_t test_per_class = 16;

  std::uint64_t seed = 1;
  AblationFlags flags;
  std::string data_path;  // empty: synthetic images; else a CIRD dataset file

  // Classifier width and image side always follow the stream; stream.seed 0
  // derives from the run seed.
  RunConfig normalized() const;
  void validate() const;
};

struct ExperienceTrace {
  std::size_t experience = 0;
  std::size_t steps = 0;
  double alpha = 0.0, beta = 0.0;
  double ace = 0.0, ssl = 0.0, lc = 0.0, der = 0.0, feature_kd = 0.0, logit_kd = 0.0, total = 0.0;
  double w_ace = 0.0, w_ssl = 0.0, w_lc = 0.0, w_der = 0.0, w_feature_kd = 0.0, w_logit_kd = 0.0;
  double accuracy = 0.0;  // full test set, after this experience
};

struct RunMetrics {
  std::vector<ExperienceTrace> experiences;
  double final_accuracy = 0.0;
  std::vector<double> wall_ms;  // kept out of metrics.csv so reruns compare byte-equal
};

// Fraction of correct argmax predictions; ensemble when a pool is supplied.
// Empty test set is rejected.
double evaluate(const ModelParams& model, const ModelPool* pool, const Tensor& test_images,
                const std::vector<int>& test_labels, bool average_logits = false, std::size_t offset = 0);

class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);

  // One experience: per-step batch sampling, Eq-composite loss, Adam step,
  // EMA refresh, buffer population; pushes a snapshot at the end.
  void train_experience(std::size_t t);

  double evaluate_now() const;
  double evaluate_classes(const std::vector<int>& classes) const;  // diagnostics

  RunMetrics run();  // all experiences in order, evaluating after each

  const RunConfig& config() const { return cfg_; }
  const ModelParams& model() const { return model_; }
  const ModelPool& pool() const { return pool_; }
  const MemoryBuffer& buffer() const { return buffer_; }
  const std::vector<Experience>& stream() const { return stream_; }
  const std::vector<ExperienceTrace>& traces() const { return traces_; }
  const std::vector<int>& seen_classes() const { return seen_classes_; }
  const Tensor& test_images() const { return test_images_; }
  const std::vector<int>& test_labels() const { return test_labels_; }

  // Called after every optimizer step; lets tests fingerprint trajectories.
  std::function<void(std::size_t experience, std::size_t step, const ModelParams&)> step_observer;
  // Called by run() after each experience is trained and evaluated; used for
  // optional per-experience checkpoints.
  std::function<void(std::size_t experience)> experience_observer;

  // Deterministic per-step batch plans, public so an independent loop can
  // reproduce the exact same draws.
  static std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t t, std::size_t epoch,
                                              std::size_t n);
  static std::vector<std::size_t> unlabeled_pick(std::uint64_t seed, std::size_t t, std::size_t step,
                                                 std::size_t total, std::size_t n);
  static std::vector<int> rotation_draw(std::uint64_t seed, std::size_t t, std::size_t step, std::size_t n);
  static std::uint64_t replay_seed(std::uint64_t seed, std::size_t t, std::size_t step);

 private:
  RunConfig cfg_;
  std::vector<Experience> stream_;
  Tensor test_images_;
  std::vector<int> test_labels_;
  ModelParams model_;
  std::vector<std::string> param_names_;
  AdamState opt_;
  ModelPool pool_;
  MemoryBuffer buffer_;
  std::vector<int> seen_classes_;
  std::vector<ExperienceTrace> traces_;
  std::vector<double> wall_ms_;

  void train_step(std::size_t t, std::size_t epoch_step, std::size_t global_step,
                  const std::vector<std::size_t>& order, ExperienceTrace& trace);
};

RunMetrics run_stream(const RunConfig& cfg);

void write_metrics_csv(const std::string& path, const RunMetrics& metrics);
std::string metrics_csv_string(const RunMetrics& metrics);

}  // namespace cirlab
