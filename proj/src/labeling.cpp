#include "opencos/labeling.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "opencos/csv.h"
#include "opencos/random.h"

namespace opencos {

void LabelingConfig::validate() const {
  if (!(tau_sl > 0.0) || !std::isfinite(tau_sl)) throw std::invalid_argument("labeling: tau_sl must be positive");
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw std::invalid_argument("labeling: k_fraction must be in (0, 1]");
  optimizer.validate();
}

void to_json(nlohmann::json& j, const LabelingConfig& c) {
  j = nlohmann::json{{"tau_sl", c.tau_sl},
                     {"k_fraction", c.k_fraction},
                     {"linear_eval_steps", c.linear_eval_steps},
                     {"optimizer", c.optimizer}};
}

void from_json(const nlohmann::json& j, LabelingConfig& c) {
  LabelingConfig d;
  c.tau_sl = j.value("tau_sl", d.tau_sl);
  c.k_fraction = j.value("k_fraction", d.k_fraction);
  c.linear_eval_steps = j.value("linear_eval_steps", d.linear_eval_steps);
  c.optimizer = j.value("optimizer", d.optimizer);
}

std::vector<double> soft_label(std::span<const double> sims, double tau) {
  if (sims.empty()) throw std::invalid_argument("soft_label: empty similarity vector");
  if (!(tau > 0.0)) throw std::invalid_argument("soft_label: temperature must be positive");
  const double mx = *std::max_element(sims.begin(), sims.end());
  std::vector<double> q(sims.size());
  double z = 0.0;
  for (std::size_t c = 0; c < q.size(); ++c) z += q[c] = std::exp((sims[c] - mx) / tau);
  for (double& v : q) v /= z;
  return q;
}

std::vector<SoftLabeled> soft_labels(std::span<const ScoredSample> scored, double tau) {
  std::vector<SoftLabeled> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back({s.id, soft_label(s.sims, tau)});
  return out;
}

Array LinearHead::logits(const Array& embeddings) const {
  Graph g;
  const NodeId z = ops::add(g, ops::matmul(g, g.constant(embeddings), g.constant(weight)), g.constant(bias));
  return g.value(z);
}

LinearHead train_linear_eval(const Model& model, const Dataset& labeled, const LabelingConfig& config,
                             std::uint64_t seed) {
  config.validate();
  if (labeled.empty()) throw std::invalid_argument("linear eval: empty labeled set");
  const std::size_t classes = model.config().num_classes;
  const Array emb = model.infer(labeled.features()).embedding;
  const std::size_t d = emb.cols();

  Array target = Array::zeros({labeled.size(), classes});
  for (std::size_t r = 0; r < labeled.size(); ++r) {
    const int y = labeled.samples[r].label;
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::invalid_argument("linear eval: sample " + std::to_string(labeled.samples[r].id) + " has label " +
                                  std::to_string(y));
    }
    target.at(r, static_cast<std::size_t>(y)) = 1.0;
  }

  Rng rng = keyed_rng(seed, {tag(Stream::kLinearEval)});
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Parameter> params{{"linear.weight", Array::zeros({d, classes})}, {"linear.bias", Array::zeros({1, classes})}};
  for (double& v : params[0].value.data()) v = dist(rng);

  Sgd sgd(config.optimizer);
  for (std::size_t step = 0; step < config.linear_eval_steps; ++step) {
    Graph g;
    const ParamBinding binding{g.variable(params[0].value), g.variable(params[1].value)};
    const NodeId logits = ops::add(g, ops::matmul(g, g.constant(emb), binding[0]), binding[1]);
    const NodeId loss = ops::soft_cross_entropy(g, logits, target);
    sgd.step(params, binding, g.backward(loss), step, config.linear_eval_steps);
  }
  return LinearHead{std::move(params[0].value), std::move(params[1].value)};
}

std::vector<PseudoLabel> select_topk(std::vector<Ranked> candidates, double k_fraction) {
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw std::invalid_argument("select_topk: k_fraction must be in (0, 1]");
  if (candidates.empty()) return {};
  std::vector<PseudoLabel> all;
  all.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (c.probs.empty()) throw std::invalid_argument("select_topk: empty probability vector");
    const auto best = std::max_element(c.probs.begin(), c.probs.end());  // first maximum
    all.push_back({c.id, static_cast<int>(best - c.probs.begin()), *best});
  }
  std::sort(all.begin(), all.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
    return a.confidence != b.confidence ? a.confidence > b.confidence : a.id < b.id;
  });
  const auto k = static_cast<std::size_t>(std::ceil(k_fraction * static_cast<double>(all.size())));
  all.resize(std::min(k, all.size()));
  return all;
}

std::vector<PseudoLabel> select_topk(const Dataset& in_set, const LinearHead& head, const Model& model,
                                     double k_fraction) {
  if (in_set.empty()) return {};
  const Array logits = head.logits(model.infer(in_set.features()).embedding);
  std::vector<Ranked> ranked;
  ranked.reserve(in_set.size());
  for (std::size_t r = 0; r < in_set.size(); ++r) {
    // soft_label at temperature 1 is exactly the head's softmax
    ranked.push_back({in_set.samples[r].id, soft_label(logits.row_span(r), 1.0)});
  }
  return select_topk(std::move(ranked), k_fraction);
}

Dataset oversample(const Dataset& labeled) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t r = 0; r < labeled.size(); ++r) {
    const int y = labeled.samples[r].label;
    if (y < 0) throw std::invalid_argument("oversample: sample " + std::to_string(labeled.samples[r].id) + " is unlabeled");
    by_class[y].push_back(r);
  }
  std::size_t target = 0;
  for (const auto& [c, rows] : by_class) target = std::max(target, rows.size());
  Dataset out = labeled;
  for (const auto& [c, rows] : by_class) {
    for (std::size_t i = rows.size(); i < target; ++i) out.samples.push_back(labeled.samples[rows[i % rows.size()]]);
  }
  return out;
}

Dataset pseudo_labeled_set(const Dataset& unlabeled, std::span<const PseudoLabel> labels) {
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t r = 0; r < unlabeled.size(); ++r) index.emplace(unlabeled.samples[r].id, r);
  Dataset out{unlabeled.dim, {}};
  out.samples.reserve(labels.size());
  for (const auto& pl : labels) {
    const auto it = index.find(pl.id);
    if (it == index.end()) throw std::invalid_argument("pseudo label for unknown sample " + std::to_string(pl.id));
    Sample s = unlabeled.samples[it->second];
    s.label = pl.label;
    out.samples.push_back(std::move(s));
  }
  return out;
}

void write_pseudo_manifest(const std::filesystem::path& path, std::span<const PseudoLabel> labels) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "sample_id,assigned_class,confidence\n";
  for (const auto& pl : labels) os << pl.id << ',' << pl.label << ',' << format_real(pl.confidence) << '\n';
}

std::vector<PseudoLabel> read_pseudo_manifest(const std::filesystem::path& path) {
  const CsvFile file = read_csv(path);
  if (file.header != std::vector<std::string>{"sample_id", "assigned_class", "confidence"}) {
    row_error(path, 1, "unexpected header");
  }
  std::vector<PseudoLabel> out;
  for (const auto& row : file.rows) {
    out.push_back({file.get<std::uint64_t>(row, 0), file.get<int>(row, 1), file.get<double>(row, 2)});
  }
  return out;
}

void write_soft_manifest(const std::filesystem::path& path, std::span<const SoftLabeled> labels) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::size_t c = labels.empty() ? 0 : labels.front().q.size();
  os << "sample_id";
  for (std::size_t k = 1; k <= c; ++k) os << ",q_" << k;
  os << '\n';
  for (const auto& s : labels) {
    os << s.id;
    for (double v : s.q) os << ',' << format_real(v);
    os << '\n';
  }
}

std::vector<SoftLabeled> read_soft_manifest(const std::filesystem::path& path) {
  const CsvFile file = read_csv(path);
  if (file.header.empty() || file.header.front() != "sample_id") row_error(path, 1, "unexpected header");
  std::vector<SoftLabeled> out;
  for (const auto& row : file.rows) {
    SoftLabeled s{file.get<std::uint64_t>(row, 0), {}};
    for (std::size_t k = 1; k < file.header.size(); ++k) s.q.push_back(file.get<double>(row, k));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace opencos
