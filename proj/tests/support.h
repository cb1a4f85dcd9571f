#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <random>
#include <vector>

#include "opencos/tensor.h"

namespace testing {

using opencos::Array;
using opencos::Graph;
using opencos::NodeId;

inline Array random_array(std::mt19937_64& rng, opencos::Shape shape, double lo = -1.0, double hi = 1.0) {
  Array a = Array::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : a.data()) v = dist(rng);
  return a;
}

// Reduces a node to a scalar with fixed random weights so no gradient
// coordinate is trivially equal across entries.
inline NodeId weighted_sum(Graph& g, NodeId x, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  return opencos::ops::sum(g, opencos::ops::mul(g, x, g.constant(random_array(rng, g.value(x).shape(), 0.5, 1.5))));
}

inline double max_abs_diff(const Array& a, const Array& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("opencos_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace testing
