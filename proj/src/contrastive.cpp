#include "opencos/contrastive.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace opencos {

namespace {

// Added to the diagonal of the similarity logits so a query never counts
// itself as a candidate; exp() of it underflows to exactly zero.
constexpr double kSelfMask = -1e12;

}  // namespace

void AugmentConfig::validate() const {
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw std::invalid_argument("augment: bad noise sigma");
  if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi) || !std::isfinite(scale_hi)) {
    throw std::invalid_argument("augment: scale range must satisfy 0 < lo <= hi");
  }
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) throw std::invalid_argument("augment: mask fraction must be in [0,1)");
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = nlohmann::json{{"noise_sigma", c.noise_sigma},
                     {"scale_jitter_range", {c.scale_lo, c.scale_hi}},
                     {"mask_fraction", c.mask_fraction},
                     {"stream", c.stream}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  AugmentConfig d;
  c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  const auto range = j.value("scale_jitter_range", std::vector<double>{d.scale_lo, d.scale_hi});
  if (range.size() != 2) throw std::invalid_argument("augment: scale_jitter_range needs two values");
  c.scale_lo = range[0];
  c.scale_hi = range[1];
  c.mask_fraction = j.value("mask_fraction", d.mask_fraction);
  c.stream = j.value("stream", d.stream);
}

std::vector<double> augment(std::span<const double> x, const AugmentConfig& config, Rng& rng) {
  std::vector<double> y(x.begin(), x.end());
  std::uniform_real_distribution<double> scale(config.scale_lo, config.scale_hi);
  const double s = config.scale_lo == config.scale_hi ? config.scale_lo : scale(rng);
  for (double& v : y) v *= s;
  if (config.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, config.noise_sigma);
    for (double& v : y) v += noise(rng);
  }
  const auto masked = static_cast<std::size_t>(std::floor(config.mask_fraction * static_cast<double>(y.size())));
  if (masked > 0) {
    std::vector<std::size_t> idx(y.size());
    std::iota(idx.begin(), idx.end(), 0);
    // partial Fisher-Yates: first `masked` slots are a uniform draw without replacement
    for (std::size_t i = 0; i < masked; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      y[idx[i]] = 0.0;
    }
  }
  return y;
}

Rng view_rng(std::uint64_t seed, const AugmentConfig& config, std::uint64_t epoch, std::uint64_t sample_id,
             std::uint64_t view) {
  return keyed_rng(seed, {tag(Stream::kAugment), config.stream, epoch, sample_id, view});
}

Array augment_batch(const Array& x, std::span<const std::uint64_t> ids, const AugmentConfig& config,
                    std::uint64_t seed, std::uint64_t epoch, std::uint64_t view) {
  if (ids.size() != x.rows()) throw std::invalid_argument("augment_batch: one id per row required");
  Array out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Rng rng = view_rng(seed, config, epoch, ids[r], view);
    const auto y = augment(x.row_span(r), config, rng);
    std::copy(y.begin(), y.end(), out.row_span(r).begin());
  }
  return out;
}

void ContrastiveConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive: tau must be positive");
  if (batch_size < 1) throw std::invalid_argument("contrastive: batch size must be positive");
  optimizer.validate();
  augment.validate();
}

void to_json(nlohmann::json& j, const ContrastiveConfig& c) {
  j = nlohmann::json{{"tau", c.tau},
                     {"batch_size", c.batch_size},
                     {"steps", c.steps},
                     {"optimizer", c.optimizer},
                     {"augment", c.augment}};
}

void from_json(const nlohmann::json& j, ContrastiveConfig& c) {
  ContrastiveConfig d;
  c.tau = j.value("tau", d.tau);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.steps = j.value("steps", d.steps);
  c.optimizer = j.value("optimizer", d.optimizer);
  c.augment = j.value("augment", d.augment);
}

double ntxent_query_loss(std::span<const double> query, std::span<const double> positive, const Array& candidates,
                         double tau) {
  if (candidates.size() == 0 || candidates.rows() == 0) throw std::invalid_argument("ntxent: empty candidate set");
  if (!(tau > 0.0)) throw std::invalid_argument("ntxent: tau must be positive");
  std::vector<double> logits(candidates.rows());
  for (std::size_t i = 0; i < candidates.rows(); ++i) logits[i] = cosine_similarity(query, candidates.row_span(i)) / tau;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return -(cosine_similarity(query, positive) / tau - mx - std::log(z));
}

NodeId ntxent_batch_loss(Graph& g, NodeId projections, double tau) {
  const std::size_t two_n = g.value(projections).rows();
  if (two_n < 2 || two_n % 2 != 0) {
    throw ShapeError("ntxent_batch_loss: need an even number (>= 2) of view rows, got " + std::to_string(two_n));
  }
  const std::size_t n = two_n / 2;
  const NodeId unit = ops::l2_normalize_rows(g, projections);
  const NodeId sims = ops::scale(g, ops::matmul(g, unit, ops::transpose(g, unit)), 1.0 / tau);

  Array self_mask = Array::zeros({two_n, two_n});
  Array positives = Array::zeros({two_n, two_n});
  for (std::size_t q = 0; q < two_n; ++q) {
    self_mask.at(q, q) = kSelfMask;
    positives.at(q, (q + n) % two_n) = 1.0;
  }
  const NodeId log_p = ops::log_softmax_rows(g, ops::add(g, sims, g.constant(std::move(self_mask))));
  const NodeId picked = ops::sum(g, ops::mul(g, log_p, g.constant(std::move(positives))));
  return ops::scale(g, picked, -1.0 / static_cast<double>(two_n));
}

SimclrLoss simclr_batch_loss(Model& model, Graph& g, const ParamBinding& params, const Array& batch,
                             std::span<const std::uint64_t> ids, const ContrastiveConfig& config, std::uint64_t seed,
                             std::uint64_t epoch) {
  const Array v1 = augment_batch(batch, ids, config.augment, seed, epoch, 1);
  const Array v2 = augment_batch(batch, ids, config.augment, seed, epoch, 2);
  std::vector<double> stacked(v1.data().begin(), v1.data().end());
  stacked.insert(stacked.end(), v2.data().begin(), v2.data().end());
  const NodeId views = g.constant(Array::matrix(2 * batch.rows(), batch.cols(), std::move(stacked)));
  const auto out = model.forward(g, params, views, Branch::kMain, Mode::kTrain, Heads{.projection = true, .logits = false});
  return SimclrLoss{ntxent_batch_loss(g, out.projection, config.tau), out.projection};
}

PretrainResult pretrain(Model& model, const Dataset& pool, const ContrastiveConfig& config, std::uint64_t seed) {
  config.validate();
  PretrainResult result;
  if (config.steps == 0) return result;
  if (pool.size() < config.batch_size) {
    throw std::invalid_argument("pretrain: pool of " + std::to_string(pool.size()) + " is smaller than the batch size");
  }
  Sgd sgd(config.optimizer);
  std::vector<std::size_t> order(pool.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    if (cursor + config.batch_size > order.size()) {
      std::iota(order.begin(), order.end(), 0);
      Rng rng = keyed_rng(seed, {tag(Stream::kPretrainBatch), ++epoch});
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::span<const std::size_t> rows(order.data() + cursor, config.batch_size);
    cursor += config.batch_size;

    std::vector<std::uint64_t> ids;
    ids.reserve(rows.size());
    for (std::size_t r : rows) ids.push_back(pool.samples[r].id);

    Graph g;
    const ParamBinding params = model.bind(g);
    const auto loss = simclr_batch_loss(model, g, params, pool.features(rows), ids, config, seed, epoch);
    const double value = g.value(loss.loss).item();
    if (!std::isfinite(value)) throw std::runtime_error("pretrain: non-finite loss at step " + std::to_string(step));
    result.loss_trace.push_back(value);
    sgd.step(model.parameters(), params, g.backward(loss.loss), step, config.steps);
  }
  return result;
}

void write_loss_trace(const std::filesystem::path& path, std::span<const double> trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) os << i << ',' << format_real(trace[i]) << '\n';
}

}  // namespace opencos
