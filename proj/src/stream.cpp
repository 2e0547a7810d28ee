#include "cirlab/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include "cirlab/rng.hpp"

namespace cirlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

constexpr std::uint64_t kSaltSchedule = 0x7363686564ull;
constexpr std::uint64_t kSaltLabeled = 0x6c6162656cull;
constexpr std::uint64_t kSaltUnlabeled = 0x756e6c6162ull;
constexpr std::uint64_t kSaltInstance = 0x696e7374ull;
constexpr std::uint64_t kSaltTest = 0x74657374ull;

struct ClassPattern {
  double angle;
  double freq;
  double phase;
  double blob_r, blob_c;  // in [0,1] image coordinates
};

// Per-class signature derived by hashing; angles use golden-ratio spacing so
// no two classes share a stripe orientation.
ClassPattern class_pattern(int class_id) {
  const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(class_id) * 0x9e3779b97f4a7c15ull + 1);
  ClassPattern p;
  const double golden = 0.61803398874989484820;
  p.angle = kPi * std::fmod(golden * static_cast<double>(class_id + 1), 1.0);
  p.freq = 2.0 + static_cast<double>((h >> 8) % 3);
  p.phase = 2.0 * kPi * static_cast<double>((h >> 16) % 1024) / 1024.0;
  p.blob_r = 0.15 + 0.7 * static_cast<double>((h >> 26) % 1024) / 1024.0;
  p.blob_c = 0.15 + 0.7 * static_cast<double>((h >> 36) % 1024) / 1024.0;
  return p;
}

}  // namespace

std::string to_string(UnlabeledScenario s) {
  switch (s) {
    case UnlabeledScenario::SameExperience: return "same-experience";
    case UnlabeledScenario::InStream: return "in-stream";
    case UnlabeledScenario::RandomAny: return "random-any";
  }
  return "?";
}

UnlabeledScenario scenario_from_string(const std::string& s) {
  if (s == "same-experience") return UnlabeledScenario::SameExperience;
  if (s == "in-stream") return UnlabeledScenario::InStream;
  if (s == "random-any") return UnlabeledScenario::RandomAny;
  throw std::invalid_argument("unknown unlabeled scenario '" + s +
                              "' (expected same-experience | in-stream | random-any)");
}

void StreamConfig::validate() const {
  if (labeled_classes > total_classes)
    throw std::invalid_argument("stream: labeled_classes exceeds total_classes");
  if (classes_per_exp > labeled_classes)
    throw std::invalid_argument("stream: classes_per_exp " + std::to_string(classes_per_exp) +
                                " exceeds labeled class count " + std::to_string(labeled_classes));
  if (classes_per_exp == 0 || num_experiences == 0 || labeled_per_exp == 0)
    throw std::invalid_argument("stream: experiences, classes_per_exp and labeled_per_exp must be positive");
  if (num_experiences * classes_per_exp < labeled_classes)
    throw std::invalid_argument("stream: T*classes_per_exp < labeled_classes, not every class can appear");
  if (repetition_probability < 0.0 || repetition_probability > 1.0)
    throw std::invalid_argument("stream: repetition_probability must lie in [0,1]");
  if (repetition_probability == 0.0 && num_experiences * classes_per_exp > labeled_classes)
    throw std::invalid_argument(
        "stream: repetition_probability=0 needs T*classes_per_exp == labeled_classes; "
        "extra class slots would force repeats");
  if (image_side < 2) throw std::invalid_argument("stream: image_side must be at least 2");
}

Tensor synth_image(int class_id, std::uint64_t instance_seed, std::size_t side) {
  const ClassPattern p = class_pattern(class_id);
  Rng rng(mix_seed(instance_seed, kSaltInstance));
  const double ca = std::cos(p.angle), sa = std::sin(p.angle);
  const double denom = static_cast<double>(side - 1);
  const double sigma = 0.14;
  Tensor img(Shape{side, side});
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const double u = static_cast<double>(c) / denom;
      const double v = static_cast<double>(r) / denom;
      const double stripe = std::sin(2.0 * kPi * p.freq * (u * ca + v * sa) + p.phase);
      const double dr = v - p.blob_r, dc = u - p.blob_c;
      const double blob = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
      const double ramp = 1.0 - v;  // top rows brighter; common orientation cue
      double val = 0.34 + 0.13 * stripe + 0.14 * blob + 0.05 * ramp + 0.18 * rng.normal();
      img.at(r, c) = std::clamp(val, 0.0, 1.0);
    }
  }
  return img;
}

Tensor rotate_image(const Tensor& image, int k) {
  if (!image.is_matrix() || image.rows() != image.cols())
    throw std::invalid_argument("rotate_image: non-square image " + shape_str(image.shape));
  if (k < 0 || k > 3) throw std::invalid_argument("rotate_image: k must be in {0,1,2,3}");
  return rot90(image, k);
}

Tensor SynthSource::image(int class_id, std::uint64_t instance) const {
  return synth_image(class_id, instance, side_);
}

FileSource::FileSource(std::size_t side, std::map<int, std::vector<Tensor>> store)
    : side_(side), store_(std::move(store)) {
  classes_ = store_.empty() ? 0 : static_cast<std::size_t>(store_.rbegin()->first) + 1;
}

Tensor FileSource::image(int class_id, std::uint64_t instance) const {
  auto it = store_.find(class_id);
  if (it == store_.end() || it->second.empty())
    throw std::out_of_range("file source has no images for class " + std::to_string(class_id));
  // Scramble so consecutive instance counters do not walk the file in order.
  const std::size_t idx = static_cast<std::size_t>(splitmix64(instance) % it->second.size());
  return it->second[idx];
}

std::size_t FileSource::count(int class_id) const {
  auto it = store_.find(class_id);
  return it == store_.end() ? 0 : it->second.size();
}

namespace {

// Class sets per experience. Per slot: with probability p pick an already
// seen class, otherwise a fresh one while any remain. Remaining slots are
// forced to fresh classes once the unseen pool is only just coverable, which
// guarantees every labeled class appears at least once.
std::vector<std::vector<int>> schedule_classes(const StreamConfig& cfg, Rng& rng) {
  std::vector<int> unseen;
  for (std::size_t c = 0; c < cfg.labeled_classes; ++c) unseen.push_back(static_cast<int>(c));
  std::vector<int> seen;
  std::vector<std::vector<int>> sets(cfg.num_experiences);

  std::size_t slots_left = cfg.num_experiences * cfg.classes_per_exp;
  for (std::size_t t = 0; t < cfg.num_experiences; ++t) {
    std::set<int> chosen;
    for (std::size_t s = 0; s < cfg.classes_per_exp; ++s, --slots_left) {
      const bool must_cover = unseen.size() >= slots_left;
      bool take_seen = !must_cover && rng.uniform() < cfg.repetition_probability;
      // Candidate pools exclude classes already chosen for this experience.
      std::vector<int> pool;
      if (take_seen || unseen.empty()) {
        for (int c : seen)
          if (!chosen.count(c)) pool.push_back(c);
      }
      if (pool.empty()) {
        for (int c : unseen)
          if (!chosen.count(c)) pool.push_back(c);
      }
      if (pool.empty()) {
        for (int c : seen)
          if (!chosen.count(c)) pool.push_back(c);
      }
      const int cls = pool[rng.index(pool.size())];
      chosen.insert(cls);
      auto it = std::find(unseen.begin(), unseen.end(), cls);
      if (it != unseen.end()) {
        unseen.erase(it);
        seen.push_back(cls);
      }
    }
    sets[t].assign(chosen.begin(), chosen.end());
  }
  return sets;
}

}  // namespace

std::vector<Experience> generate_stream(const StreamConfig& cfg, const ImageSource* source) {
  cfg.validate();
  SynthSource synth(cfg.image_side, cfg.total_classes);
  const ImageSource& src = source ? *source : synth;
  if (src.side() != cfg.image_side)
    throw std::invalid_argument("stream: image source side " + std::to_string(src.side()) +
                                " does not match config side " + std::to_string(cfg.image_side));

  Rng sched_rng(mix_seed(cfg.seed, kSaltSchedule));
  const auto class_sets = schedule_classes(cfg, sched_rng);

  // Per-class counters keep instance seeds fresh across experiences.
  std::vector<std::uint64_t> instance_counter(cfg.total_classes, 0);
  auto next_instance = [&](int cls) {
    const std::uint64_t n = instance_counter[static_cast<std::size_t>(cls)]++;
    return mix_seed(cfg.seed, static_cast<std::uint64_t>(cls), n);
  };

  std::vector<int> seen_so_far;
  std::vector<Experience> stream;
  stream.reserve(cfg.num_experiences);
  for (std::size_t t = 0; t < cfg.num_experiences; ++t) {
    Experience exp;
    exp.index = t;
    exp.present_classes = class_sets[t];

    // Labeled part: balanced split across the experience's class set, order
    // shuffled.
    Rng lab_rng(mix_seed(cfg.seed, kSaltLabeled, t));
    std::vector<int> order(cfg.labeled_per_exp);
    for (std::size_t i = 0; i < cfg.labeled_per_exp; ++i)
      order[i] = exp.present_classes[i % exp.present_classes.size()];
    lab_rng.shuffle(order);
    for (int cls : order) {
      exp.labeled_images.push_back(src.image(cls, next_instance(cls)));
      exp.labels.push_back(cls);
    }

    for (int cls : exp.present_classes)
      if (std::find(seen_so_far.begin(), seen_so_far.end(), cls) == seen_so_far.end())
        seen_so_far.push_back(cls);

    // Unlabeled part per scenario.
    Rng unl_rng(mix_seed(cfg.seed, kSaltUnlabeled, t));
    for (std::size_t i = 0; i < cfg.unlabeled_per_exp; ++i) {
      int cls = 0;
      switch (cfg.scenario) {
        case UnlabeledScenario::SameExperience:
          cls = exp.present_classes[unl_rng.index(exp.present_classes.size())];
          break;
        case UnlabeledScenario::InStream:
          cls = static_cast<int>(unl_rng.index(cfg.labeled_classes));
          break;
        case UnlabeledScenario::RandomAny:
          cls = static_cast<int>(unl_rng.index(cfg.total_classes));
          break;
      }
      exp.unlabeled_images_.push_back(src.image(cls, next_instance(cls)));
      exp.unlabeled_hidden_labels_.push_back(cls);
    }
    stream.push_back(std::move(exp));
  }
  return stream;
}

std::vector<std::pair<Tensor, int>> make_test_set(const StreamConfig& cfg, std::size_t per_class,
                                                  const ImageSource* source) {
  cfg.validate();
  SynthSource synth(cfg.image_side, cfg.total_classes);
  const ImageSource& src = source ? *source : synth;
  std::vector<std::pair<Tensor, int>> out;
  out.reserve(per_class * cfg.labeled_classes);
  for (std::size_t c = 0; c < cfg.labeled_classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      // Disjoint from training draws: a separate salt, not the per-class counters.
      const std::uint64_t inst = mix_seed(mix_seed(cfg.seed, kSaltTest), c, i);
      out.emplace_back(src.image(static_cast<int>(c), inst), static_cast<int>(c));
    }
  return out;
}

namespace {

constexpr char kDatasetMagic[4] = {'C', 'I', 'R', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, std::size_t offset, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in)
    throw std::runtime_error("dataset: truncated while reading " + std::string(what) + " at byte offset " +
                             std::to_string(offset));
  return v;
}

}  // namespace

void write_dataset(const std::string& path, const std::vector<std::pair<Tensor, int>>& records,
                   std::size_t side, std::size_t num_classes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kDatasetMagic, 4);
  put<std::uint32_t>(f, kDatasetVersion);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(records.size()));
  put<std::uint16_t>(f, static_cast<std::uint16_t>(side));
  put<std::uint16_t>(f, static_cast<std::uint16_t>(num_classes));
  for (const auto& [img, label] : records) {
    if (img.numel() != side * side)
      throw std::invalid_argument("dataset: record does not match side " + std::to_string(side));
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
      throw std::invalid_argument("dataset: label " + std::to_string(label) + " out of range");
    put<std::uint16_t>(f, static_cast<std::uint16_t>(label));
    for (double v : img.data) {
      const double clamped = std::clamp(v, 0.0, 1.0);
      put<std::uint8_t>(f, static_cast<std::uint8_t>(std::lround(clamped * 255.0)));
    }
  }
  if (!f) throw std::runtime_error("dataset: write failed for " + path);
}

FileSource ingest_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw std::runtime_error("dataset: bad magic in " + path + " (byte offset 0)");
  const auto version = get<std::uint32_t>(f, 4, "version");
  if (version != kDatasetVersion)
    throw std::runtime_error("dataset: unsupported version " + std::to_string(version));
  const auto count = get<std::uint32_t>(f, 8, "record count");
  const auto side = get<std::uint16_t>(f, 12, "image side");
  const auto num_classes = get<std::uint16_t>(f, 14, "class count");
  if (side == 0 || num_classes == 0) throw std::runtime_error("dataset: zero side or class count in header");

  const std::size_t record_bytes = 2 + static_cast<std::size_t>(side) * side;
  std::map<int, std::vector<Tensor>> store;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(side) * side);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t offset = 16 + static_cast<std::size_t>(i) * record_bytes;
    const auto label = get<std::uint16_t>(f, offset, ("label of record " + std::to_string(i)).c_str());
    if (label >= num_classes)
      throw std::runtime_error("dataset: record " + std::to_string(i) + " (byte offset " +
                               std::to_string(offset) + ") has label " + std::to_string(label) +
                               " outside [0," + std::to_string(num_classes) + ")");
    f.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!f)
      throw std::runtime_error("dataset: truncated pixel payload in record " + std::to_string(i) +
                               " (byte offset " + std::to_string(offset + 2) + ")");
    Tensor img(Shape{side, side});
    for (std::size_t j = 0; j < pixels.size(); ++j) img.data[j] = static_cast<double>(pixels[j]) / 255.0;
    store[label].push_back(std::move(img));
  }
  return FileSource(side, std::move(store));
}

}  // namespace cirlab
