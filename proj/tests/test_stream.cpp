#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <set>
#include <vector>

#include "cirlab/rng.hpp"
#include "cirlab/stream.hpp"

using namespace cirlab;

namespace {

// Closed-form ridge least squares probe: solve (X^T X + lambda I) w = X^T y
// by Gaussian elimination with partial pivoting, classify by sign.
double linear_probe_accuracy(const std::vector<Tensor>& images, const std::vector<int>& labels) {
  const std::size_t n = images.size();
  const std::size_t d = images[0].numel() + 1;  // bias column
  std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(d, 1.0);
    for (std::size_t j = 0; j + 1 < d; ++j) x[j] = images[i].data[j];
    const double y = labels[i] == 0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) a[r][c] += x[r] * x[c];
      a[r][d] += x[r] * y;
    }
  }
  for (std::size_t r = 0; r < d; ++r) a[r][r] += 1e-6;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col || a[col][col] == 0.0) continue;
      const double factor = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= d; ++c) a[r][c] -= factor * a[col][c];
    }
  }
  std::vector<double> w(d);
  for (std::size_t r = 0; r < d; ++r) w[r] = a[r][d] / a[r][r];

  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = w[d - 1];
    for (std::size_t j = 0; j + 1 < d; ++j) s += w[j] * images[i].data[j];
    const int pred = s >= 0.0 ? 1 : 0;
    if (pred == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

StreamConfig desk_config() { return StreamConfig{}; }

}  // namespace

TEST_CASE("challenge-shaped stream has the stated sizes") {
  StreamConfig cfg;
  cfg.total_classes = 130;
  cfg.labeled_classes = 100;
  cfg.num_experiences = 50;
  cfg.labeled_per_exp = 500;
  cfg.unlabeled_per_exp = 1000;
  cfg.classes_per_exp = 10;
  cfg.repetition_probability = 0.4;
  cfg.scenario = UnlabeledScenario::RandomAny;
  auto stream = generate_stream(cfg);
  REQUIRE(stream.size() == 50);
  std::set<int> all_classes;
  for (const auto& exp : stream) {
    CHECK(exp.labeled_images.size() == 500);
    CHECK(exp.unlabeled().size() == 1000);
    CHECK(exp.present_classes.size() == 10);
    for (int y : exp.labels)
      CHECK(std::find(exp.present_classes.begin(), exp.present_classes.end(), y) != exp.present_classes.end());
    all_classes.insert(exp.present_classes.begin(), exp.present_classes.end());
  }
  CHECK(all_classes.size() == 100);  // every labeled class appears
}

TEST_CASE("repetition off with exact slot coverage gives disjoint class sets") {
  StreamConfig cfg;
  cfg.num_experiences = 6;
  cfg.classes_per_exp = 2;
  cfg.labeled_classes = 12;
  cfg.total_classes = 14;
  cfg.labeled_per_exp = 8;
  cfg.unlabeled_per_exp = 8;
  cfg.repetition_probability = 0.0;
  auto stream = generate_stream(cfg);
  std::set<int> seen;
  for (const auto& exp : stream) {
    for (int c : exp.present_classes) {
      CHECK_FALSE(seen.count(c));
      seen.insert(c);
    }
  }
  CHECK(seen.size() == 12);
}

TEST_CASE("repetition occurs iff p>0 and there are surplus class slots") {
  StreamConfig cfg = desk_config();  // p=0.3, 10*4 slots > 12 classes
  auto stream = generate_stream(cfg);
  std::set<int> seen;
  bool repeated = false;
  for (const auto& exp : stream)
    for (int c : exp.present_classes) {
      if (seen.count(c)) repeated = true;
      seen.insert(c);
    }
  CHECK(repeated);
  CHECK(seen.size() == cfg.labeled_classes);

  // p=0 with surplus slots is infeasible by construction.
  StreamConfig bad = desk_config();
  bad.repetition_probability = 0.0;
  CHECK_THROWS_AS(generate_stream(bad), std::invalid_argument);
}

TEST_CASE("streams are byte-identical for the same seed") {
  StreamConfig cfg = desk_config();
  cfg.num_experiences = 3;
  auto a = generate_stream(cfg);
  auto b = generate_stream(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].labels == b[t].labels);
    CHECK(a[t].present_classes == b[t].present_classes);
    for (std::size_t i = 0; i < a[t].labeled_images.size(); ++i)
      CHECK(a[t].labeled_images[i].data == b[t].labeled_images[i].data);
    for (std::size_t i = 0; i < a[t].unlabeled().size(); ++i)
      CHECK(a[t].unlabeled()[i].data == b[t].unlabeled()[i].data);
  }
}

TEST_CASE("synthetic images are reproducible and bounded") {
  const Tensor a = synth_image(3, 12345);
  const Tensor b = synth_image(3, 12345);
  CHECK(a.data == b.data);
  const Tensor c = synth_image(3, 12346);
  CHECK(a.data != c.data);
  double mean = 0.0;
  for (double v : a.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    mean += v;
  }
  mean /= static_cast<double>(a.numel());
  CHECK(mean >= 0.0);
  CHECK(mean <= 1.0);
}

TEST_CASE("two-class draw is separable by the least-squares probe") {
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (int cls = 0; cls < 2; ++cls)
    for (std::uint64_t i = 0; i < 100; ++i) {
      images.push_back(synth_image(cls, mix_seed(500 + cls, i)));
      labels.push_back(cls);
    }
  CHECK(linear_probe_accuracy(images, labels) >= 0.95);
}

TEST_CASE("rotate_image examples") {
  Tensor img(2, 2, {1, 2, 3, 4});
  CHECK(rotate_image(img, 0).data == img.data);
  CHECK(rotate_image(img, 1).data == std::vector<double>{2, 4, 1, 3});
  CHECK(rotate_image(rotate_image(img, 2), 2).data == img.data);
  CHECK_THROWS_AS(rotate_image(Tensor(Shape{2, 3}), 1), std::invalid_argument);
  CHECK_THROWS_AS(rotate_image(img, 4), std::invalid_argument);

  // Bijection on pixel positions: the multiset of values is preserved.
  Tensor big = synth_image(5, 99);
  Tensor rot = rotate_image(big, 1);
  auto sa = big.data, sb = rot.data;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  CHECK(sa == sb);
}

TEST_CASE("unlabeled scenarios draw from the right class pools") {
  StreamConfig cfg = desk_config();
  cfg.num_experiences = 4;
  cfg.scenario = UnlabeledScenario::SameExperience;
  for (const auto& exp : generate_stream(cfg))
    for (int hidden : exp.diagnostic_unlabeled_labels())
      CHECK(std::find(exp.present_classes.begin(), exp.present_classes.end(), hidden) !=
            exp.present_classes.end());

  cfg.scenario = UnlabeledScenario::InStream;
  for (const auto& exp : generate_stream(cfg))
    for (int hidden : exp.diagnostic_unlabeled_labels())
      CHECK(hidden < static_cast<int>(cfg.labeled_classes));

  cfg.scenario = UnlabeledScenario::RandomAny;
  bool outside = false;
  for (const auto& exp : generate_stream(cfg))
    for (int hidden : exp.diagnostic_unlabeled_labels())
      if (hidden >= static_cast<int>(cfg.labeled_classes)) outside = true;
  CHECK(outside);  // the 30-class analogue outside the labeled stream shows up
}

TEST_CASE("infeasible configurations are rejected") {
  StreamConfig cfg = desk_config();
  cfg.classes_per_exp = cfg.labeled_classes + 1;
  CHECK_THROWS_AS(generate_stream(cfg), std::invalid_argument);

  StreamConfig starved = desk_config();
  starved.num_experiences = 2;
  starved.classes_per_exp = 2;  // 4 slots < 12 classes
  CHECK_THROWS_AS(generate_stream(starved), std::invalid_argument);
}

TEST_CASE("test set draws are disjoint from the training stream") {
  StreamConfig cfg = desk_config();
  cfg.num_experiences = 3;
  auto stream = generate_stream(cfg);
  auto test = make_test_set(cfg, 4);
  CHECK(test.size() == 4 * cfg.labeled_classes);
  for (const auto& [img, label] : test) {
    CHECK(label >= 0);
    CHECK(label < static_cast<int>(cfg.labeled_classes));
    for (const auto& exp : stream)
      for (const auto& timg : exp.labeled_images) CHECK(img.data != timg.data);
  }
}

TEST_CASE("stream invariants hold across random valid configurations") {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    StreamConfig cfg;
    cfg.labeled_classes = 4 + rng.index(10);
    cfg.total_classes = cfg.labeled_classes + rng.index(5);
    cfg.classes_per_exp = 1 + rng.index(cfg.labeled_classes);
    // enough slots to cover every class
    const std::size_t min_T = (cfg.labeled_classes + cfg.classes_per_exp - 1) / cfg.classes_per_exp;
    cfg.num_experiences = min_T + rng.index(4);
    const bool surplus = cfg.num_experiences * cfg.classes_per_exp > cfg.labeled_classes;
    // With exact slot coverage any probability is fine: coverage forces
    // fresh classes everywhere, so no repetition may occur.
    cfg.repetition_probability = surplus ? 0.05 + 0.9 * rng.uniform() : (rng.index(2) ? 0.5 : 0.0);
    if (!surplus && cfg.num_experiences * cfg.classes_per_exp != cfg.labeled_classes) continue;
    cfg.labeled_per_exp = 4 + rng.index(12);
    cfg.unlabeled_per_exp = rng.index(8);
    cfg.image_side = 8;
    cfg.seed = rng.next();
    cfg.scenario = static_cast<UnlabeledScenario>(rng.index(3));

    auto stream = generate_stream(cfg);
    REQUIRE(stream.size() == cfg.num_experiences);
    std::set<int> seen;
    bool repeated = false;
    for (const auto& exp : stream) {
      CHECK(exp.labeled_images.size() == cfg.labeled_per_exp);
      CHECK(exp.unlabeled().size() == cfg.unlabeled_per_exp);
      CHECK(exp.present_classes.size() == cfg.classes_per_exp);
      for (int y : exp.labels)
        CHECK(std::find(exp.present_classes.begin(), exp.present_classes.end(), y) !=
              exp.present_classes.end());
      for (int c : exp.present_classes) {
        if (seen.count(c)) repeated = true;
        seen.insert(c);
      }
    }
    CHECK(seen.size() == cfg.labeled_classes);  // every class appears
    CHECK(repeated == (cfg.repetition_probability > 0.0 && surplus));
  }
}

TEST_CASE("CIRD dataset roundtrip and malformed-file errors") {
  const std::string path = "test_stream_data.cird";
  std::vector<std::pair<Tensor, int>> records;
  for (int cls = 0; cls < 3; ++cls)
    for (std::uint64_t i = 0; i < 5; ++i) records.emplace_back(synth_image(cls, mix_seed(7, cls, i), 8), cls);
  write_dataset(path, records, 8, 3);

  FileSource src = ingest_dataset(path);
  CHECK(src.side() == 8);
  CHECK(src.num_classes() == 3);
  CHECK(src.count(0) == 5);
  CHECK(src.count(2) == 5);
  // Pixels survive the 8-bit quantization within half a step.
  const Tensor round = src.image(1, 0);
  for (double v : round.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // Bad magic.
  {
    FILE* f = std::fopen(path.c_str(), "r+b");
    REQUIRE(f);
    std::fputs("NOPE", f);
    std::fclose(f);
    CHECK_THROWS_WITH_AS(ingest_dataset(path), doctest::Contains("magic"), std::runtime_error);
  }

  // Truncated payload reports the record position.
  write_dataset(path, records, 8, 3);
  {
    FILE* f = std::fopen(path.c_str(), "r+b");
    REQUIRE(f);
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fclose(f);
    std::string data(static_cast<std::size_t>(size), 0);
    f = std::fopen(path.c_str(), "rb");
    REQUIRE(std::fread(data.data(), 1, data.size(), f) == data.size());
    std::fclose(f);
    data.resize(data.size() - 10);
    f = std::fopen(path.c_str(), "wb");
    std::fwrite(data.data(), 1, data.size(), f);
    std::fclose(f);
    CHECK_THROWS_WITH_AS(ingest_dataset(path), doctest::Contains("record 14"), std::runtime_error);
  }

  // Label out of range reports the record and offset.
  write_dataset(path, records, 8, 3);
  {
    FILE* f = std::fopen(path.c_str(), "r+b");
    REQUIRE(f);
    std::fseek(f, 16, SEEK_SET);  // first record's label
    const std::uint16_t bad = 9;
    std::fwrite(&bad, 2, 1, f);
    std::fclose(f);
    CHECK_THROWS_WITH_AS(ingest_dataset(path), doctest::Contains("record 0"), std::runtime_error);
  }
  std::remove(path.c_str());
}

TEST_CASE("file-backed stream generation uses ingested images") {
  const std::string path = "test_stream_data2.cird";
  std::vector<std::pair<Tensor, int>> records;
  for (int cls = 0; cls < 6; ++cls)
    for (std::uint64_t i = 0; i < 20; ++i)
      records.emplace_back(synth_image(cls, mix_seed(11, cls, i), 8), cls);
  write_dataset(path, records, 8, 6);
  FileSource src = ingest_dataset(path);

  StreamConfig cfg;
  cfg.total_classes = 6;
  cfg.labeled_classes = 4;
  cfg.num_experiences = 2;
  cfg.classes_per_exp = 2;
  cfg.labeled_per_exp = 10;
  cfg.unlabeled_per_exp = 10;
  cfg.image_side = 8;
  cfg.repetition_probability = 0.0;
  auto stream = generate_stream(cfg, &src);
  CHECK(stream.size() == 2);
  CHECK(stream[0].labeled_images[0].numel() == 64);
  std::remove(path.c_str());
}
