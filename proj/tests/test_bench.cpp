#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "opencos/bench.h"
#include "support.h"

using namespace opencos;
using testing::TempDir;

namespace {

BenchmarkSpec small_spec() {
  BenchmarkSpec s;
  s.dim = 6;
  s.in_classes = 3;
  s.out_classes = 2;
  s.total_unlabeled = 101;
  s.out_proportion = 0.5;
  s.labels_per_class = 2;
  s.test_per_class = 5;
  s.seed = 9;
  return s;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

std::size_t count_origin(const Benchmark& b, Origin o) {
  std::size_t n = 0;
  for (const auto& s : b.unlabeled.samples) n += b.truth.at(s.id).origin == o ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("split sizes and half-up rounding") {
  const Benchmark b = generate(small_spec());
  // 0.5 * 101 = 50.5 rounds up
  CHECK(b.spec.out_count() == 51);
  CHECK(count_origin(b, Origin::kOut) == 51);
  CHECK(count_origin(b, Origin::kIn) == 50);
  CHECK(b.labeled.size() == 6);
  CHECK(b.test.size() == 15);

  BenchmarkSpec full_scale;
  full_scale.total_unlabeled = 50000;
  full_scale.out_proportion = 0.8;
  CHECK(full_scale.out_count() == 40000);
  CHECK(full_scale.in_count() == 10000);
  CHECK(BenchmarkSpec{}.labels_per_class == 4);
}

TEST_CASE("labeled and test sets hold in-class samples only, per class") {
  const Benchmark b = generate(small_spec());
  std::vector<int> per_class(3, 0);
  for (const auto& s : b.labeled.samples) {
    REQUIRE(s.label >= 0);
    REQUIRE(s.label < 3);
    ++per_class[static_cast<std::size_t>(s.label)];
    CHECK(b.truth.at(s.id).origin == Origin::kIn);
    CHECK(b.truth.at(s.id).truth == s.label);
  }
  CHECK(per_class == std::vector<int>{2, 2, 2});
  for (const auto& s : b.test.samples) CHECK(b.truth.at(s.id).truth < 3);
  for (const auto& s : b.unlabeled.samples) CHECK(s.label == kUnlabeled);
}

TEST_CASE("splits are disjoint by id") {
  const Benchmark b = generate(small_spec());
  std::set<std::uint64_t> ids;
  std::size_t total = 0;
  for (const Dataset* d : {&b.labeled, &b.unlabeled, &b.test}) {
    for (const auto& s : d->samples) ids.insert(s.id);
    total += d->size();
  }
  CHECK(ids.size() == total);
  CHECK(b.truth.size() == total);
}

TEST_CASE("zero proportion gives no out-of-class samples") {
  BenchmarkSpec s = small_spec();
  s.out_proportion = 0.0;
  CHECK(count_origin(generate(s), Origin::kOut) == 0);
  s.out_classes = 0;
  CHECK_NOTHROW(generate(s));
  s.out_proportion = 0.3;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
}

TEST_CASE("spec validation") {
  BenchmarkSpec s = small_spec();
  s.labels_per_class = 0;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
  s = small_spec();
  s.in_classes = 1;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
  s = small_spec();
  s.out_proportion = 1.5;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
}

TEST_CASE("cluster geometry") {
  BenchmarkSpec s = small_spec();
  s.sigma = 0.5;
  s.separation = 4.0;
  for (Correlation corr : {Correlation::kIndependent, Correlation::kRelated}) {
    s.correlation = corr;
    const Benchmark b = generate(s);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = i + 1; j < 3; ++j) {
        CHECK(distance(b.in_means.row_span(i), b.in_means.row_span(j)) == doctest::Approx(2.0).epsilon(1e-12));
      }
    }
    if (corr == Correlation::kRelated) {
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(distance(b.out_means.row_span(j), b.in_means.row_span(j % 3)) == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("same spec regenerates identically") {
  const Benchmark a = generate(small_spec());
  const Benchmark b = generate(small_spec());
  CHECK(a.labeled == b.labeled);
  CHECK(a.unlabeled == b.unlabeled);
  CHECK(a.test == b.test);
  CHECK(a.truth == b.truth);
  BenchmarkSpec other = small_spec();
  other.seed = 10;
  CHECK_FALSE(generate(other).labeled == a.labeled);
}

TEST_CASE("proportion sweep shares geometry") {
  const std::vector<double> ps{0.0, 0.8};
  const auto benches = sweep_proportions(small_spec(), ps);
  REQUIRE(benches.size() == 2);
  CHECK(benches[0].in_means == benches[1].in_means);
  CHECK(benches[0].labeled == benches[1].labeled);
  CHECK(benches[0].test == benches[1].test);
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t expected_out = static_cast<std::size_t>(std::floor(ps[i] * 101.0 + 0.5));
    CHECK(count_origin(benches[i], Origin::kOut) == expected_out);
    CHECK(count_origin(benches[i], Origin::kIn) == 101 - expected_out);
  }
  const std::vector<double> zero{0.0};
  const auto single = sweep_proportions(small_spec(), zero);
  REQUIRE(single.size() == 1);
  CHECK(count_origin(single[0], Origin::kOut) == 0);
}

TEST_CASE("dataset csv round trip") {
  TempDir dir("bench_roundtrip");
  const Benchmark b = generate(small_spec());
  write_dataset(dir / "u.csv", b.unlabeled, b.truth);
  const LoadedDataset back = read_dataset(dir / "u.csv");
  CHECK(back.data == b.unlabeled);
  for (const auto& s : back.data.samples) CHECK(back.truth.at(s.id) == b.truth.at(s.id));

  write_benchmark(dir / "bench", b);
  const Benchmark whole = read_benchmark(dir / "bench");
  CHECK(whole.labeled == b.labeled);
  CHECK(whole.test == b.test);
  CHECK(whole.truth == b.truth);
  CHECK(nlohmann::json(whole.spec) == nlohmann::json(b.spec));
}

TEST_CASE("empty dataset writes a header-only file") {
  TempDir dir("bench_empty");
  Dataset empty;
  empty.dim = 2;
  write_dataset(dir / "e.csv", empty, {});
  CHECK(testing::read_file(dir / "e.csv") == "id,f0,f1,label,truth,origin\n");
  const LoadedDataset back = read_dataset(dir / "e.csv");
  CHECK(back.data.empty());
  CHECK(back.data.dim == 2);
}

TEST_CASE("malformed rows are reported with their line number") {
  TempDir dir("bench_malformed");
  const std::string header = "id,f0,label,truth,origin\n";
  const std::vector<std::pair<std::string, std::string>> cases{
      {header + "0,1.5,0,0,in\n1,abc,0,0,in\n", ":3:"},
      {header + "0,1.5,0,0\n", ":2:"},
      {header + "0,1.5,0,0,sideways\n", ":2:"},
      {header + "0,1.5,0,0,in\n0,2.5,0,0,in\n", ":3:"},
      {"id,x,label,truth,origin\n", ":1:"},
  };
  for (const auto& [text, where] : cases) {
    testing::write_file(dir / "bad.csv", text);
    try {
      read_dataset(dir / "bad.csv");
      FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find(where) != std::string::npos);
    }
  }
}

TEST_CASE("golden checksum of a seeded 100-sample file") {
  TempDir dir("bench_golden");
  BenchmarkSpec s;
  s.dim = 4;
  s.in_classes = 2;
  s.out_classes = 2;
  s.total_unlabeled = 100;
  s.out_proportion = 0.5;
  s.seed = 42;
  const Benchmark b = generate(s);
  write_dataset(dir / "u.csv", b.unlabeled, b.truth);
  CHECK(testing::fnv1a(testing::read_file(dir / "u.csv")) == 0xdb4caf72925a973cULL);
}

TEST_CASE("dataset helpers") {
  const Benchmark b = generate(small_spec());
  const Dataset stripped = strip_labels(b.labeled);
  for (const auto& s : stripped.samples) CHECK(s.label == kUnlabeled);
  const Dataset both = concat(b.labeled, b.test);
  CHECK(both.size() == b.labeled.size() + b.test.size());
  const std::vector<std::uint64_t> pick{b.test.samples[3].id, b.test.samples[1].id};
  const Dataset sub = subset(b.test, pick);
  REQUIRE(sub.size() == 2);
  CHECK(sub.samples[0].id == pick[1]);  // dataset order is kept
  CHECK(sub.samples[1].id == pick[0]);
  CHECK(b.labeled.features().shape() == Shape{6, 6});
}
