#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "opencos/csv.h"
#include "opencos/tensor.h"

namespace opencos {

constexpr int kUnlabeled = -1;

enum class Origin { kIn, kOut };

/// A training or test example as the learning code sees it: no ground truth.
struct Sample {
  std::uint64_t id = 0;
  std::vector<double> features;
  int label = kUnlabeled;  // class index in [0, C) or kUnlabeled

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::size_t dim = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  Array features() const;
  Array features(std::span<const std::size_t> rows) const;
  std::vector<std::uint64_t> ids() const;
  std::vector<int> labels() const;

  bool operator==(const Dataset&) const = default;
};

/// Hidden ground truth, kept apart from Dataset so only evaluation reads it.
/// truth is a class index in [0, C + M); classes >= C are out-of-class.
struct TruthRecord {
  int truth = 0;
  Origin origin = Origin::kIn;

  bool operator==(const TruthRecord&) const = default;
};

using TruthManifest = std::map<std::uint64_t, TruthRecord>;

enum class Correlation { kIndependent, kRelated };

struct BenchmarkSpec {
  std::size_t dim = 16;
  std::size_t in_classes = 8;
  std::size_t out_classes = 8;
  double separation = 6.0;  // distance between in-class means, in units of sigma
  double sigma = 1.0;
  Correlation correlation = Correlation::kIndependent;
  std::size_t total_unlabeled = 5000;
  double out_proportion = 0.8;
  std::size_t labels_per_class = 4;
  std::size_t test_per_class = 100;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t out_count() const;  // round-half-up of p * N_u
  std::size_t in_count() const { return total_unlabeled - out_count(); }
};

void to_json(nlohmann::json& j, const BenchmarkSpec& s);
void from_json(const nlohmann::json& j, BenchmarkSpec& s);

struct Benchmark {
  BenchmarkSpec spec;
  Dataset labeled;
  Dataset unlabeled;
  Dataset test;
  TruthManifest truth;
  Array in_means;   // [C, dim]
  Array out_means;  // [M, dim], empty when M = 0
};

/// Gaussian clusters per class. Cluster geometry, the labeled split and the
/// test split depend only on the seed; the unlabeled mixture also depends on
/// the out-of-class proportion.
Benchmark generate(const BenchmarkSpec& spec);

std::vector<Benchmark> sweep_proportions(const BenchmarkSpec& spec, std::span<const double> proportions);

/// CSV columns: id, f0..f{dim-1}, label, truth, origin. Reals use 17
/// significant digits so a round trip is lossless.
void write_dataset(const std::filesystem::path& path, const Dataset& data, const TruthManifest& truth);

struct LoadedDataset {
  Dataset data;
  TruthManifest truth;
};

LoadedDataset read_dataset(const std::filesystem::path& path);

/// Writes labeled.csv, unlabeled.csv, test.csv and spec.json into `dir`.
void write_benchmark(const std::filesystem::path& dir, const Benchmark& bench);
Benchmark read_benchmark(const std::filesystem::path& dir);

Dataset strip_labels(const Dataset& data);
Dataset concat(const Dataset& a, const Dataset& b);
Dataset subset(const Dataset& data, std::span<const std::uint64_t> ids);

}  // namespace opencos
