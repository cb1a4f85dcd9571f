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
#include "opencos/model.h"
#include "opencos/optim.h"

namespace opencos {

enum class Backend { kConsistency, kHardPseudo };

struct Toggles {
  bool detect = true;
  bool aux_loss = true;
  bool aux_bn = true;
  bool topk_pl = true;

  static Toggles none() { return {false, false, false, false}; }
  bool operator==(const Toggles&) const = default;
};

struct SSLConfig {
  double beta = 1.0;
  double lambda = 0.5;
  std::size_t batch_size = 64;
  std::size_t steps = 1000;
  SgdConfig optimizer{.learning_rate = 0.03, .momentum = 0.9, .nesterov = true, .weight_decay = 0.0,
                      .cosine_decay = false};
  Backend backend = Backend::kConsistency;
  double pseudo_threshold = 0.95;  // hard-pseudo only; a sample counts when max prob > threshold
  Toggles toggles;
  AugmentConfig augment{.noise_sigma = 0.3, .scale_lo = 0.8, .scale_hi = 1.2, .mask_fraction = 0.1, .stream = 1};
  std::size_t checkpoint_interval = 0;  // in labeled samples; 0 derives it from checkpoint_count
  std::size_t checkpoint_count = 50;

  void validate() const;
  /// Samples between test evaluations.
  std::size_t interval() const;
};

void to_json(nlohmann::json& j, const Toggles& t);
void from_json(const nlohmann::json& j, Toggles& t);
void to_json(nlohmann::json& j, const SSLConfig& c);
void from_json(const nlohmann::json& j, SSLConfig& c);

/// One step's inputs. x_in and x_out may be empty (size 0), which drops the
/// corresponding term.
struct Batch {
  Array x_l;
  Array y_l;  // [B, C] one-hot or soft targets
  Array x_in;
  std::vector<std::uint64_t> in_ids;
  Array x_out;
  Array q_out;  // [B_out, C] soft labels
  Array in_target;  // [B_in, C]; when set, replaces the target built from the weak view
};

struct LossTerms {
  NodeId total = 0;
  NodeId supervised = 0;
  NodeId unsupervised = 0;  // already multiplied by beta
  std::optional<NodeId> aux;  // already multiplied by lambda
  Array in_target;  // the constant target the unlabeled term was computed against
};

/// H(y_l, f(x_l)) + beta * unlabeled term on the main branch. The consistency
/// backend uses a detached target f(t1(x)); hard-pseudo masks confident
/// weak-view predictions and trains the strong view on their argmax.
LossTerms ssl_loss(Model& model, Graph& g, const ParamBinding& params, const Batch& batch, const SSLConfig& config,
                   std::uint64_t seed, std::uint64_t step);

/// ssl_loss plus lambda * H(q, f(x_out)). The out-of-class forward runs on the
/// auxiliary BN branch when aux_bn is set.
LossTerms opencos_loss(Model& model, Graph& g, const ParamBinding& params, const Batch& batch, const SSLConfig& config,
                       std::uint64_t seed, std::uint64_t step);

/// Eval-mode main-branch top-1 accuracy against the stored labels.
double accuracy(const Model& model, const Dataset& test);

struct TrainData {
  Dataset labeled;  // D_l plus any pseudo-labels, already balanced
  Dataset in;
  Dataset out;
  Array out_q;  // one soft label per row of `out`
};

struct Checkpoint {
  std::size_t step = 0;  // optimizer steps completed
  std::size_t samples = 0;
  double accuracy = 0.0;
};

struct TraceRow {
  std::size_t step = 0;
  double total = 0.0;
  double ssl = 0.0;
  double aux = 0.0;
  std::optional<double> test_accuracy;
};

struct TrainState {
  Model model;
  Sgd optimizer;
  std::size_t step = 0;
  std::vector<Checkpoint> history;
  std::vector<TraceRow> trace;

  TrainState(Model m, const SgdConfig& opt) : model(std::move(m)), optimizer(opt) {}
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;  // model file per checkpoint when set
};

/// Runs config.steps updates of opencos_loss. Each of the three streams is
/// walked through its own seeded permutation, reshuffled on every pass.
void train(TrainState& state, const TrainData& data, const Dataset& test, const SSLConfig& config, std::uint64_t seed,
           const TrainOptions& options = {});

struct AuxOnlyResult {
  std::vector<double> loss_trace;
};

/// Minimizes H(q, f(x_out)) alone on the main branch.
AuxOnlyResult aux_only_train(Model& model, const Dataset& out, const Array& q, const SSLConfig& config,
                             std::uint64_t seed);

void write_trace(const std::filesystem::path& path, std::span<const TraceRow> trace);

/// Row-wise one-hot targets for labels in [0, classes).
Array one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace opencos
