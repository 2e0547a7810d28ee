#include "cirlab/pool.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cirlab/serialize.hpp"

namespace cirlab {

namespace {
constexpr char kPoolMagic[4] = {'C', 'L', 'P', 'L'};
}

ModelPool::ModelPool(std::size_t max_size, double ema_momentum)
    : max_size_(max_size), momentum_(ema_momentum) {
  if (max_size_ == 0) throw std::invalid_argument("pool: max_size must be positive");
  if (momentum_ < 0.0 || momentum_ > 1.0) throw std::invalid_argument("pool: ema momentum must lie in [0,1]");
}

void ModelPool::push_snapshot(const ModelParams& params) {
  snaps_.push_back(cirlab::snapshot(params));
  while (snaps_.size() > max_size_) snaps_.pop_front();
}

void ModelPool::ema_refresh_all(const ModelParams& current) {
  for (ModelParams& s : snaps_) ema_blend(s, current, momentum_);
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  const std::size_t c = logits.cols();
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double* row = &out.data[i * c];
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = row[j] > m ? row[j] : m;
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - m);
      z += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= z;
  }
  return out;
}

PoolTargets ModelPool::compute_targets(const Tensor& batch) const {
  PoolTargets out;
  if (snaps_.empty()) return out;
  const std::size_t b = batch.rows();
  std::vector<Tensor> features;
  std::vector<Tensor> probs;
  features.reserve(snaps_.size());
  for (const ModelParams& s : snaps_) {
    ForwardOutput f = model_forward(s, batch);
    probs.push_back(softmax_rows(f.logits));
    out.logit_batches.push_back(std::move(f.logits));
    features.push_back(std::move(f.features));
  }
  const std::size_t fdim = features[0].cols();
  const std::size_t c = out.logit_batches[0].cols();
  out.feature_targets = Tensor(Shape{b, fdim});
  out.composite_logits = Tensor(Shape{b, c});
  out.selected_model_index.resize(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    double best_conf = -1.0;
    for (std::size_t k = 0; k < snaps_.size(); ++k) {
      double conf = 0.0;
      for (std::size_t j = 0; j < c; ++j) conf = std::max(conf, probs[k].at(i, j));
      if (conf >= best_conf) {  // >= breaks ties toward the newest snapshot
        best_conf = conf;
        best = k;
      }
    }
    out.selected_model_index[i] = static_cast<int>(best);
    for (std::size_t j = 0; j < fdim; ++j) out.feature_targets.at(i, j) = features[best].at(i, j);
    for (std::size_t j = 0; j < c; ++j) out.composite_logits.at(i, j) = out.logit_batches[best].at(i, j);
  }
  return out;
}

std::vector<int> ModelPool::ensemble_predict(const ModelParams& current, const Tensor& batch,
                                             bool average_logits, std::size_t offset) const {
  ForwardOutput cur = model_forward(current, batch);
  const std::size_t b = batch.rows();
  const std::size_t c = cur.logits.cols();
  Tensor score;
  if (snaps_.empty() || offset >= snaps_.size()) {
    score = softmax_rows(cur.logits);
  } else {
    const ModelParams& prev = snaps_[snaps_.size() - 1 - offset];
    ForwardOutput pf = model_forward(prev, batch);
    if (average_logits) {
      score = cur.logits;
      for (std::size_t i = 0; i < score.data.size(); ++i)
        score.data[i] = 0.5 * (score.data[i] + pf.logits.data[i]);
    } else {
      const Tensor a = softmax_rows(cur.logits);
      const Tensor bp = softmax_rows(pf.logits);
      score = a;
      for (std::size_t i = 0; i < score.data.size(); ++i)
        score.data[i] = 0.5 * (score.data[i] + bp.data[i]);
    }
  }
  std::vector<int> pred(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (score.at(i, j) > score.at(i, arg)) arg = j;
    pred[i] = static_cast<int>(arg);
  }
  return pred;
}

void ModelPool::save(const std::string& path) const {
  // Index manifest (count + byte offsets) followed by concatenated
  // parameter files.
  std::vector<std::string> blobs;
  for (const ModelParams& s : snaps_) {
    std::ostringstream os(std::ios::binary);
    write_tensor_container(os, "CLPM", s.parameter_list());
    blobs.push_back(os.str());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kPoolMagic, 4);
  const std::uint32_t version = kContainerVersion;
  const std::uint32_t count = static_cast<std::uint32_t>(blobs.size());
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&count), 4);
  std::uint64_t offset = 0;
  for (const std::string& blob : blobs) {
    f.write(reinterpret_cast<const char*>(&offset), 8);
    offset += blob.size();
  }
  for (const std::string& blob : blobs) f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw std::runtime_error("pool: write failed for " + path);
}

void ModelPool::load(const std::string& path, const ModelConfig& cfg) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != std::string(kPoolMagic, 4))
    throw std::runtime_error("pool: bad magic in " + path);
  std::uint32_t version = 0, count = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&count), 4);
  if (!f || version != kContainerVersion) throw std::runtime_error("pool: unsupported file version");
  std::vector<std::uint64_t> offsets(count);
  for (auto& o : offsets) f.read(reinterpret_cast<char*>(&o), 8);
  if (!f) throw std::runtime_error("pool: truncated manifest in " + path);
  snaps_.clear();
  for (std::uint32_t i = 0; i < count; ++i) {
    ModelParams p = ModelParams::init(cfg, 0);
    std::vector<Tensor> arrays = read_tensor_container(f, "CLPM");
    auto dst = p.parameter_list();
    if (arrays.size() != dst.size()) throw std::runtime_error("pool: snapshot array count mismatch");
    for (std::size_t j = 0; j < dst.size(); ++j) {
      if (arrays[j].shape != dst[j]->shape) throw std::runtime_error("pool: snapshot shape mismatch");
      *dst[j] = std::move(arrays[j]);
    }
    snaps_.push_back(std::move(p));
  }
}

}  // namespace cirlab
