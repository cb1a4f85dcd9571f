#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "opencos/bench.h"
#include "opencos/contrastive.h"
#include "opencos/detect.h"
#include "opencos/labeling.h"
#include "opencos/model.h"
#include "opencos/ssl.h"

namespace opencos {

struct ExperimentConfig {
  BenchmarkSpec benchmark;
  std::optional<std::filesystem::path> dataset_dir;  // read instead of generating when set
  ModelConfig model;  // input_dim and num_classes must match the data
  ContrastiveConfig contrastive;
  DetectionConfig detection;
  LabelingConfig labeling;
  SSLConfig ssl;
  bool pretrain_with_out = true;  // false drops true out-of-class samples from the pretraining pool
  std::size_t median_n = 5;
  std::optional<std::filesystem::path> output_dir;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

struct DetectionMetrics {
  double auroc = 0.0;
  double tpr = 0.0;  // out-of-class flagged, out-of-class positive
  double tnr = 0.0;  // in-class kept
};

struct Report {
  std::vector<double> accuracies;
  double median_accuracy = 0.0;
  double best_accuracy = 0.0;
  double pretrain_final_loss = 0.0;
  Threshold threshold;
  std::optional<DetectionMetrics> detection;  // absent when D_u lacks either origin
  std::size_t split_in = 0;
  std::size_t split_out = 0;
  std::size_t pseudo_count = 0;
  std::optional<double> pseudo_accuracy;
  nlohmann::json config;
  nlohmann::json timings;  // seconds per stage; excluded from reproducibility checks

  /// Report without timings, for comparisons and byte-level checks.
  nlohmann::json deterministic_json() const;
};

void to_json(nlohmann::json& j, const Report& r);
void from_json(const nlohmann::json& j, Report& r);

/// Rank-based P(in-class score > out-of-class score), ties counted half.
double auroc(std::span<const double> scores, const std::vector<bool>& is_out);

/// Out-of-class is the positive class: tpr = P(s < t | out), tnr = P(s >= t | in).
DetectionMetrics tpr_tnr(std::span<const double> scores, const std::vector<bool>& is_out, double threshold);

double median_last_n(std::span<const double> values, std::size_t n);

/// Generated (or loaded) data plus a contrastively pretrained model.
struct Pretrained {
  Benchmark bench;
  Model model;
  PretrainResult pretrain;
  double seconds = 0.0;
};

Benchmark load_data(const ExperimentConfig& config);
Pretrained pretrain_stage(const ExperimentConfig& config);

/// Detection, labeling and fine-tuning from a pretrained model.
Report finish_experiment(const ExperimentConfig& config, const Pretrained& pretrained);

Report run_experiment(const ExperimentConfig& config);

enum class SweepAxis { kProportion, kTauSl, kLambda, kKFraction, kEta };

SweepAxis parse_axis(const std::string& name);
std::string axis_name(SweepAxis axis);
ExperimentConfig with_axis_value(ExperimentConfig config, SweepAxis axis, double value);

struct SweepRow {
  double value = 0.0;
  std::optional<Report> report;
  std::string error;
};

/// One run per value with the shared master seed; failures are recorded and
/// the sweep moves on. Per-point outputs go to output_dir/<axis>_<i> when set.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, SweepAxis axis, std::span<const double> values);

void write_sweep_csv(const std::filesystem::path& path, SweepAxis axis, std::span<const SweepRow> rows);

/// Recomputes the report's metrics from the files written into a run's
/// output directory.
Report recompute_report(const std::filesystem::path& run_dir);

}  // namespace opencos
