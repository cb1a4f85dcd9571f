#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"

#include "opencos/bench.h"
#include "opencos/detect.h"
#include "opencos/model.h"
#include "opencos/optim.h"

namespace opencos {

struct LabelingConfig {
  double tau_sl = 0.1;
  double k_fraction = 0.1;
  std::size_t linear_eval_steps = 300;
  SgdConfig optimizer{.learning_rate = 0.5, .momentum = 0.9, .nesterov = true, .weight_decay = 0.0,
                      .cosine_decay = false};

  void validate() const;
};

void to_json(nlohmann::json& j, const LabelingConfig& c);
void from_json(const nlohmann::json& j, LabelingConfig& c);

/// Temperature softmax over class similarities.
std::vector<double> soft_label(std::span<const double> sims, double tau);

struct SoftLabeled {
  std::uint64_t id = 0;
  std::vector<double> q;
};

std::vector<SoftLabeled> soft_labels(std::span<const ScoredSample> scored, double tau);

/// Single dense layer over frozen embeddings.
struct LinearHead {
  Array weight;  // [d_e, C]
  Array bias;    // [1, C]

  Array logits(const Array& embeddings) const;
};

/// Full-batch cross-entropy training of a fresh LinearHead on the eval-mode
/// main-branch embeddings of `labeled`. The model is only read.
LinearHead train_linear_eval(const Model& model, const Dataset& labeled, const LabelingConfig& config,
                             std::uint64_t seed);

struct PseudoLabel {
  std::uint64_t id = 0;
  int label = 0;
  double confidence = 0.0;
};

struct Ranked {
  std::uint64_t id;
  std::vector<double> probs;
};

/// Top ceil(k * n) of `candidates` by max probability, descending, ties by
/// ascending id. Labels are the argmax (lowest index on ties).
std::vector<PseudoLabel> select_topk(std::vector<Ranked> candidates, double k_fraction);

std::vector<PseudoLabel> select_topk(const Dataset& in_set, const LinearHead& head, const Model& model,
                                     double k_fraction);

/// Duplicates each class round-robin until every present class has the
/// maximum class count. Original samples keep their order and come first.
Dataset oversample(const Dataset& labeled);

/// The pseudo-labeled samples as a labeled dataset, in selection order.
Dataset pseudo_labeled_set(const Dataset& unlabeled, std::span<const PseudoLabel> labels);

void write_pseudo_manifest(const std::filesystem::path& path, std::span<const PseudoLabel> labels);
std::vector<PseudoLabel> read_pseudo_manifest(const std::filesystem::path& path);

void write_soft_manifest(const std::filesystem::path& path, std::span<const SoftLabeled> labels);
std::vector<SoftLabeled> read_soft_manifest(const std::filesystem::path& path);

}  // namespace opencos
