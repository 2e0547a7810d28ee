#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cirlab/tensor.hpp"

namespace cirlab {

enum class UnlabeledScenario { SameExperience, InStream, RandomAny };

std::string to_string(UnlabeledScenario s);
UnlabeledScenario scenario_from_string(const std::string& s);

struct StreamConfig {
  std::size_t total_classes = 16;    // includes classes outside the labeled stream
  std::size_t labeled_classes = 12;  // C
  std::size_t num_experiences = 10;  // T
  std::size_t labeled_per_exp = 128;
  std::size_t unlabeled_per_exp = 256;
  std::size_t classes_per_exp = 4;
  double repetition_probability = 0.3;
  UnlabeledScenario scenario = UnlabeledScenario::SameExperience;
  std::size_t image_side = 16;
  std::uint64_t seed = 0;  // 0: derived from the run seed by the trainer

  void validate() const;  // throws on infeasible settings
};

struct Experience {
  std::size_t index = 0;
  std::vector<Tensor> labeled_images;
  std::vector<int> labels;
  std::vector<int> present_classes;  // sorted, distinct

  // Serving interface: training code sees images only.
  const std::vector<Tensor>& unlabeled() const { return unlabeled_images_; }
  std::size_t unlabeled_count() const { return unlabeled_images_.size(); }

  // Hidden ground truth for the unlabeled part, kept for diagnostics only.
  const std::vector<int>& diagnostic_unlabeled_labels() const { return unlabeled_hidden_labels_; }

  std::vector<Tensor> unlabeled_images_;
  std::vector<int> unlabeled_hidden_labels_;
};

// Where images come from: procedural synthesis or a file-backed store.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual Tensor image(int class_id, std::uint64_t instance) const = 0;
  virtual std::size_t side() const = 0;
  virtual std::size_t num_classes() const = 0;
};

class SynthSource final : public ImageSource {
 public:
  SynthSource(std::size_t side, std::size_t num_classes) : side_(side), classes_(num_classes) {}
  Tensor image(int class_id, std::uint64_t instance) const override;
  std::size_t side() const override { return side_; }
  std::size_t num_classes() const override { return classes_; }

 private:
  std::size_t side_;
  std::size_t classes_;
};

class FileSource final : public ImageSource {
 public:
  FileSource(std::size_t side, std::map<int, std::vector<Tensor>> store);
  Tensor image(int class_id, std::uint64_t instance) const override;
  std::size_t side() const override { return side_; }
  std::size_t num_classes() const override { return classes_; }
  std::size_t count(int class_id) const;

 private:
  std::size_t side_;
  std::size_t classes_;
  std::map<int, std::vector<Tensor>> store_;
};

// 16x16-style grayscale image in [0,1]: a class-specific oriented stripe
// pattern plus a class-specific blob, a fixed top-bright ramp that makes
// 90-degree rotations identifiable, and seeded noise.
Tensor synth_image(int class_id, std::uint64_t instance_seed, std::size_t side = 16);

// 90k-degree counter-clockwise rotation, k in {0,1,2,3}; square images only.
Tensor rotate_image(const Tensor& image, int k);

std::vector<Experience> generate_stream(const StreamConfig& cfg, const ImageSource* source = nullptr);

// Held-out evaluation set over all labeled classes; instance seeds disjoint
// from anything generate_stream hands out.
std::vector<std::pair<Tensor, int>> make_test_set(const StreamConfig& cfg, std::size_t per_class,
                                                  const ImageSource* source = nullptr);

// CIRD dataset file: magic "CIRD" + u32 version + u32 count + u16 side +
// u16 num_classes, then per record u16 label + side^2 bytes of grayscale.
FileSource ingest_dataset(const std::string& path);
void write_dataset(const std::string& path, const std::vector<std::pair<Tensor, int>>& records,
                   std::size_t side, std::size_t num_classes);

}  // namespace cirlab
