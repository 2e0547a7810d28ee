#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "cirlab/buffer.hpp"

using namespace cirlab;

namespace {

Exemplar make_exemplar(int label, double tag, std::size_t fdim = 8, std::size_t c = 4) {
  Exemplar e;
  e.feature = Tensor(Shape{fdim}, tag);
  e.logit = Tensor(Shape{c}, tag * 0.5);
  e.label = label;
  e.task_of_origin = 0;
  return e;
}

}  // namespace

TEST_CASE("under capacity everything is retained; over capacity size stays pinned") {
  MemoryBuffer buf(200, 1);
  for (int i = 0; i < 200; ++i) buf.insert(make_exemplar(i, i));
  CHECK(buf.size() == 200);
  std::set<double> tags;
  for (std::size_t i = 0; i < buf.size(); ++i) tags.insert(buf.at(i).feature.data[0]);
  CHECK(tags.size() == 200);  // all 200 distinct items kept

  buf.insert(make_exemplar(200, 200.0));
  CHECK(buf.size() == 200);
  CHECK(buf.seen_count() == 201);
}

TEST_CASE("float budget is enforced at insert") {
  MemoryBuffer buf(10, 1, 1024);
  CHECK_THROWS_AS(buf.insert(make_exemplar(0, 0.0, 1020, 10)), std::invalid_argument);
  // exactly at the budget is fine: 1019 + 4 + 1 = 1024
  buf.insert(make_exemplar(0, 0.0, 1019, 4));
  CHECK(buf.size() == 1);
  CHECK(buf.total_floats() <= 10 * 1024);
}

TEST_CASE("reservoir retention is uniform within binomial bounds") {
  // 10*capacity inserts; retention of every item estimated over seeded trials.
  const std::size_t capacity = 50;
  const std::size_t total = 10 * capacity;
  const int trials = 400;
  std::vector<int> retained(total, 0);
  for (int trial = 0; trial < trials; ++trial) {
    MemoryBuffer buf(capacity, static_cast<std::uint64_t>(trial));
    for (std::size_t i = 0; i < total; ++i) buf.insert(make_exemplar(static_cast<int>(i), i));
    for (std::size_t s = 0; s < buf.size(); ++s)
      retained[static_cast<std::size_t>(buf.at(s).feature.data[0])] += 1;
  }
  const double p = static_cast<double>(capacity) / static_cast<double>(total);
  const double sigma = std::sqrt(trials * p * (1.0 - p));
  // Group means: early/middle/late items retain at the same rate.
  for (std::size_t g = 0; g < 10; ++g) {
    double group = 0.0;
    for (std::size_t i = g * 50; i < (g + 1) * 50; ++i) group += retained[i];
    group /= 50.0;
    CHECK(std::fabs(group - trials * p) < 3.0 * sigma / std::sqrt(50.0));
  }
  // Per-item outliers beyond 3 sigma stay at the binomial tail rate.
  int outliers = 0;
  for (std::size_t i = 0; i < total; ++i)
    if (std::fabs(retained[i] - trials * p) > 3.0 * sigma) ++outliers;
  CHECK(outliers <= static_cast<int>(0.015 * total));
}

TEST_CASE("sampling without replacement at n=size is a permutation") {
  MemoryBuffer buf(16, 3);
  for (int i = 0; i < 16; ++i) buf.insert(make_exemplar(i, i));
  auto batch = buf.sample_batch(16, 9);
  REQUIRE(batch.size() == 16);
  std::set<double> tags;
  for (const auto& e : batch) tags.insert(e.feature.data[0]);
  CHECK(tags.size() == 16);
}

TEST_CASE("sampling: empty buffer, determinism, replacement for large n") {
  MemoryBuffer empty(8, 1);
  CHECK(empty.sample_batch(4, 1).empty());

  MemoryBuffer buf(8, 1);
  for (int i = 0; i < 5; ++i) buf.insert(make_exemplar(i, i));
  auto a = buf.sample_batch(3, 42);
  auto b = buf.sample_batch(3, 42);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].feature.data[0] == b[i].feature.data[0]);

  auto big = buf.sample_batch(12, 7);
  CHECK(big.size() == 12);  // with replacement once n exceeds the size
}

TEST_CASE("capacity invariant holds through random operation sequences") {
  MemoryBuffer buf(5, 11);
  for (int i = 0; i < 300; ++i) {
    buf.insert(make_exemplar(i % 7, i));
    CHECK(buf.size() <= 5);
    CHECK(buf.total_floats() <= 5 * 1024);
    if (i % 11 == 0) {
      auto batch = buf.sample_batch(3, static_cast<std::uint64_t>(i));
      CHECK(batch.size() <= 3);
    }
  }
  CHECK(buf.seen_count() == 300);
}

TEST_CASE("dump/load roundtrip preserves contents and reservoir state") {
  const std::string path = "test_buffer_dump.bin";
  MemoryBuffer buf(6, 13);
  for (int i = 0; i < 20; ++i) buf.insert(make_exemplar(i % 3, i));
  buf.save(path);

  MemoryBuffer loaded(1, 0);
  loaded.load(path);
  CHECK(loaded.size() == buf.size());
  CHECK(loaded.capacity() == buf.capacity());
  CHECK(loaded.seen_count() == buf.seen_count());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    CHECK(loaded.at(i).feature.data == buf.at(i).feature.data);
    CHECK(loaded.at(i).logit.data == buf.at(i).logit.data);
    CHECK(loaded.at(i).label == buf.at(i).label);
  }
  // The loaded buffer continues the exact same reservoir stream.
  MemoryBuffer copy = buf;
  for (int i = 20; i < 60; ++i) {
    copy.insert(make_exemplar(i % 3, i));
    loaded.insert(make_exemplar(i % 3, i));
  }
  for (std::size_t i = 0; i < copy.size(); ++i)
    CHECK(copy.at(i).feature.data[0] == loaded.at(i).feature.data[0]);
  std::remove(path.c_str());
}

TEST_CASE("class-balanced mode keeps per-class counts near even") {
  MemoryBuffer buf(30, 5, 1024, true);
  // Class 0 floods first; classes 1..4 trickle in later.
  for (int i = 0; i < 200; ++i) buf.insert(make_exemplar(0, i));
  for (int cls = 1; cls < 5; ++cls)
    for (int i = 0; i < 12; ++i) buf.insert(make_exemplar(cls, 1000 + cls * 100 + i));
  CHECK(buf.size() <= 30);
  std::vector<int> counts(5, 0);
  for (std::size_t i = 0; i < buf.size(); ++i) counts[static_cast<std::size_t>(buf.at(i).label)] += 1;
  for (int cls = 1; cls < 5; ++cls) CHECK(counts[static_cast<std::size_t>(cls)] >= 4);
  CHECK(counts[0] <= 14);  // flooding class was evicted down toward balance
}
