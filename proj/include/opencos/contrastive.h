#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "opencos/bench.h"
#include "opencos/model.h"
#include "opencos/optim.h"
#include "opencos/random.h"
#include "opencos/tensor.h"

namespace opencos {

/// Stochastic view family for vector data: scale jitter, additive Gaussian
/// noise, then zeroing a fixed fraction of coordinates.
struct AugmentConfig {
  double noise_sigma = 0.3;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double mask_fraction = 0.1;
  std::uint64_t stream = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

std::vector<double> augment(std::span<const double> x, const AugmentConfig& config, Rng& rng);

/// Generator for a single view, keyed so that the view depends only on
/// (seed, epoch, sample id, view index).
Rng view_rng(std::uint64_t seed, const AugmentConfig& config, std::uint64_t epoch, std::uint64_t sample_id,
             std::uint64_t view);

/// Augments every row of `x`; row r uses view_rng(seed, ..., ids[r], view).
Array augment_batch(const Array& x, std::span<const std::uint64_t> ids, const AugmentConfig& config,
                    std::uint64_t seed, std::uint64_t epoch, std::uint64_t view);

struct ContrastiveConfig {
  double tau = 0.5;
  std::size_t batch_size = 64;
  std::size_t steps = 2000;
  SgdConfig optimizer{.learning_rate = 0.1, .momentum = 0.9, .nesterov = true, .weight_decay = 0.0,
                      .cosine_decay = false};
  AugmentConfig augment{.noise_sigma = 0.6, .scale_lo = 0.8, .scale_hi = 1.2, .mask_fraction = 0.1, .stream = 0};

  void validate() const;
};

void to_json(nlohmann::json& j, const ContrastiveConfig& c);
void from_json(const nlohmann::json& j, ContrastiveConfig& c);

/// -log(exp(h(q,+)/tau) / sum_i exp(h(q,c_i)/tau)) with h the cosine
/// similarity. Rows of `candidates` are the candidate projections.
double ntxent_query_loss(std::span<const double> query, std::span<const double> positive, const Array& candidates,
                         double tau);

/// Graph form of the batch objective on 2N stacked projections: row q is
/// paired with row (q + N) mod 2N and contrasted against every row but itself.
NodeId ntxent_batch_loss(Graph& g, NodeId projections, double tau);

struct SimclrLoss {
  NodeId loss;
  NodeId projections;  // [2N, d_p], views t1 then t2
};

/// Two augmented views per sample, one train-mode forward of all 2N views on
/// the main branch, then ntxent_batch_loss.
SimclrLoss simclr_batch_loss(Model& model, Graph& g, const ParamBinding& params, const Array& batch,
                             std::span<const std::uint64_t> ids, const ContrastiveConfig& config, std::uint64_t seed,
                             std::uint64_t epoch);

struct PretrainResult {
  std::vector<double> loss_trace;  // one entry per step
};

/// `steps` SGD updates of the contrastive loss over shuffled batches of the
/// pool (labels ignored). Throws on a non-finite loss, naming the step.
PretrainResult pretrain(Model& model, const Dataset& pool, const ContrastiveConfig& config, std::uint64_t seed);

void write_loss_trace(const std::filesystem::path& path, std::span<const double> trace);

}  // namespace opencos
