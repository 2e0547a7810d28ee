#include "cirlab/buffer.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "cirlab/rng.hpp"
#include "cirlab/serialize.hpp"

namespace cirlab {

namespace {
constexpr char kBufferMagic[4] = {'C', 'L', 'M', 'B'};
constexpr std::uint64_t kSaltSample = 0x62756673616d70ull;
}  // namespace

MemoryBuffer::MemoryBuffer(std::size_t capacity, std::uint64_t seed, std::size_t float_budget,
                           bool class_balanced)
    : capacity_(capacity), float_budget_(float_budget), class_balanced_(class_balanced),
      rng_state_(mix_seed(seed, 0x627566666572ull)) {
  if (capacity_ == 0) throw std::invalid_argument("buffer: capacity must be positive");
}

std::uint64_t MemoryBuffer::next_random() {
  std::uint64_t z = (rng_state_ += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

void MemoryBuffer::insert(Exemplar e) {
  if (e.float_cost() > float_budget_)
    throw std::invalid_argument("buffer: exemplar costs " + std::to_string(e.float_cost()) +
                                " floats, budget is " + std::to_string(float_budget_) +
                                " (check feature_dim/num_classes)");
  if (class_balanced_) {
    insert_class_balanced(std::move(e));
    return;
  }
  seen_ += 1;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(e));
    return;
  }
  // Uniform j in [0, seen_); replacing when j < capacity keeps every seen
  // item retained with probability capacity/seen.
  std::uint64_t x, j;
  do {
    x = next_random();
    j = x % seen_;
  } while (x - j > std::uint64_t(0) - seen_);
  if (j < capacity_) items_[static_cast<std::size_t>(j)] = std::move(e);
}

void MemoryBuffer::insert_class_balanced(Exemplar e) {
  seen_ += 1;
  seen_per_class_[e.label] += 1;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(e));
    return;
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < items_.size(); ++i) by_class[items_[i].label].push_back(i);
  std::size_t largest = 0;
  for (const auto& [cls, idx] : by_class) largest = std::max(largest, idx.size());
  const std::size_t own = by_class.count(e.label) ? by_class[e.label].size() : 0;
  if (own < largest) {
    // Evict from one of the largest classes, chosen uniformly.
    std::vector<std::size_t> pool;
    for (const auto& [cls, idx] : by_class)
      if (idx.size() == largest) pool.insert(pool.end(), idx.begin(), idx.end());
    items_[pool[static_cast<std::size_t>(next_random() % pool.size())]] = std::move(e);
  } else {
    // Own class is (one of) the largest: keep with probability m_c / n_c.
    const double u = static_cast<double>(next_random() >> 11) * 0x1.0p-53;
    const double keep = static_cast<double>(own) / static_cast<double>(seen_per_class_[e.label]);
    if (u < keep && own > 0) {
      const auto& idx = by_class[e.label];
      items_[idx[static_cast<std::size_t>(next_random() % idx.size())]] = std::move(e);
    }
  }
}

std::vector<Exemplar> MemoryBuffer::sample_batch(std::size_t n, std::uint64_t seed) const {
  std::vector<Exemplar> out;
  if (items_.empty() || n == 0) return out;
  Rng rng(mix_seed(seed, kSaltSample));
  if (n <= items_.size()) {
    auto idx = rng.sample_without_replacement(items_.size(), n);
    out.reserve(n);
    for (std::size_t i : idx) out.push_back(items_[i]);
  } else {
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(items_[rng.index(items_.size())]);
  }
  return out;
}

std::size_t MemoryBuffer::total_floats() const {
  std::size_t n = 0;
  for (const auto& e : items_) n += e.float_cost();
  return n;
}

void MemoryBuffer::save(const std::string& path) const {
  const std::size_t n = items_.size();
  const std::size_t f = n ? items_[0].feature.numel() : 0;
  const std::size_t c = n ? items_[0].logit.numel() : 0;
  Tensor meta = Tensor::vec({static_cast<double>(capacity_), static_cast<double>(float_budget_),
                             static_cast<double>(seen_), class_balanced_ ? 1.0 : 0.0,
                             static_cast<double>(rng_state_ >> 32),
                             static_cast<double>(rng_state_ & 0xffffffffull), static_cast<double>(n),
                             static_cast<double>(f), static_cast<double>(c)});
  Tensor features(Shape{std::max<std::size_t>(n * f, 1)});
  Tensor logits(Shape{std::max<std::size_t>(n * c, 1)});
  Tensor labels(Shape{std::max<std::size_t>(n, 1)});
  Tensor tasks(Shape{std::max<std::size_t>(n, 1)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(items_[i].feature.data.begin(), items_[i].feature.data.end(), features.data.begin() + i * f);
    std::copy(items_[i].logit.data.begin(), items_[i].logit.data.end(), logits.data.begin() + i * c);
    labels.data[i] = static_cast<double>(items_[i].label);
    tasks.data[i] = static_cast<double>(items_[i].task_of_origin);
  }
  std::map<int, std::uint64_t> seen = seen_per_class_;
  Tensor class_seen(Shape{std::max<std::size_t>(seen.size() * 2, 1)});
  std::size_t k = 0;
  for (const auto& [cls, cnt] : seen) {
    class_seen.data[k++] = static_cast<double>(cls);
    class_seen.data[k++] = static_cast<double>(cnt);
  }
  write_tensor_container_file(path, kBufferMagic, {&meta, &features, &logits, &labels, &tasks, &class_seen});
}

void MemoryBuffer::load(const std::string& path) {
  auto arrays = read_tensor_container_file(path, kBufferMagic);
  if (arrays.size() != 6) throw std::runtime_error("buffer dump: expected 6 arrays, found " +
                                                   std::to_string(arrays.size()));
  const Tensor& meta = arrays[0];
  if (meta.numel() != 9) throw std::runtime_error("buffer dump: malformed meta block");
  capacity_ = static_cast<std::size_t>(meta.data[0]);
  float_budget_ = static_cast<std::size_t>(meta.data[1]);
  seen_ = static_cast<std::uint64_t>(meta.data[2]);
  class_balanced_ = meta.data[3] != 0.0;
  rng_state_ = (static_cast<std::uint64_t>(meta.data[4]) << 32) | static_cast<std::uint64_t>(meta.data[5]);
  const std::size_t n = static_cast<std::size_t>(meta.data[6]);
  const std::size_t f = static_cast<std::size_t>(meta.data[7]);
  const std::size_t c = static_cast<std::size_t>(meta.data[8]);
  if (n > capacity_) throw std::runtime_error("buffer dump: item count exceeds capacity");
  items_.clear();
  items_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Exemplar e;
    e.feature = Tensor(Shape{std::max<std::size_t>(f, 1)});
    e.logit = Tensor(Shape{std::max<std::size_t>(c, 1)});
    if (f) std::copy(arrays[1].data.begin() + i * f, arrays[1].data.begin() + (i + 1) * f, e.feature.data.begin());
    if (c) std::copy(arrays[2].data.begin() + i * c, arrays[2].data.begin() + (i + 1) * c, e.logit.data.begin());
    e.label = static_cast<int>(arrays[3].data[i]);
    e.task_of_origin = static_cast<std::size_t>(arrays[4].data[i]);
    items_.push_back(std::move(e));
  }
  seen_per_class_.clear();
  const Tensor& cs = arrays[5];
  for (std::size_t i = 0; i + 1 < cs.numel(); i += 2)
    if (cs.data[i] != 0.0 || cs.data[i + 1] != 0.0)
      seen_per_class_[static_cast<int>(cs.data[i])] = static_cast<std::uint64_t>(cs.data[i + 1]);
}

}  // namespace cirlab
