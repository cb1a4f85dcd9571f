#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "opencos/bench.h"
#include "opencos/model.h"

namespace opencos {

/// Mean projection g(f_e(x)) per labeled class, with the class sizes.
struct PrototypeSet {
  Array prototypes;  // [C, d_p]
  std::vector<std::size_t> counts;

  std::size_t num_classes() const { return counts.size(); }
};

struct DetectionConfig {
  double eta = 2.0;
  std::optional<double> explicit_threshold;

  void validate() const;
};

void to_json(nlohmann::json& j, const DetectionConfig& c);
void from_json(const nlohmann::json& j, DetectionConfig& c);

struct ScoredSample {
  std::uint64_t id = 0;
  std::vector<double> sims;
  double score = 0.0;
};

struct Threshold {
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
  double eta = 0.0;
  double value = 0.0;
};

struct Split {
  std::vector<std::uint64_t> in;
  std::vector<std::uint64_t> out;
};

/// Eval-mode, main-branch projections of every sample.
Array project(const Model& model, const Dataset& data);

PrototypeSet compute_prototypes(const Dataset& labeled, const Model& model);
PrototypeSet compute_prototypes(const Array& projections, std::span<const int> labels, std::size_t num_classes);

std::vector<double> class_similarities(std::span<const double> projection, const PrototypeSet& prototypes);

/// Similarities and score for every sample in `data`.
std::vector<ScoredSample> score_samples(const Dataset& data, const PrototypeSet& prototypes, const Model& model);

/// Max over class similarities.
double detection_score(std::span<const double> sims);

/// t = mu - eta * sigma over the labeled scores, unless an explicit threshold
/// is configured.
Threshold compute_threshold(std::span<const double> labeled_scores, const DetectionConfig& config);

/// Out-of-class iff score < t; ties stay in-class.
Split split_unlabeled(std::span<const ScoredSample> scored, double threshold);

/// CSV columns: sample_id, sim_1..sim_C, score, split.
void write_scored_manifest(const std::filesystem::path& path, std::span<const ScoredSample> scored, double threshold);

struct ScoredManifest {
  std::vector<ScoredSample> samples;
  std::vector<bool> is_out;
};

ScoredManifest read_scored_manifest(const std::filesystem::path& path);

}  // namespace opencos
