#include "opencos/detect.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "opencos/csv.h"

namespace opencos {

void DetectionConfig::validate() const {
  if (!std::isfinite(eta) || eta < 0.0) throw std::invalid_argument("detection: eta must be finite and nonnegative");
}

void to_json(nlohmann::json& j, const DetectionConfig& c) {
  j = nlohmann::json{{"eta", c.eta}};
  j["explicit_threshold"] = c.explicit_threshold ? nlohmann::json(*c.explicit_threshold) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, DetectionConfig& c) {
  c.eta = j.value("eta", 2.0);
  c.explicit_threshold.reset();
  if (j.contains("explicit_threshold") && !j.at("explicit_threshold").is_null()) {
    c.explicit_threshold = j.at("explicit_threshold").get<double>();
  }
}

Array project(const Model& model, const Dataset& data) { return model.infer(data.features()).projection; }

PrototypeSet compute_prototypes(const Array& projections, std::span<const int> labels, std::size_t num_classes) {
  if (labels.size() != projections.rows()) throw std::invalid_argument("prototypes: one label per projection required");
  PrototypeSet set;
  set.prototypes = Array::zeros({num_classes, projections.cols()});
  set.counts.assign(num_classes, 0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const int c = labels[r];
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw std::invalid_argument("prototypes: label " + std::to_string(c) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
    auto dst = set.prototypes.row_span(static_cast<std::size_t>(c));
    auto src = projections.row_span(r);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    ++set.counts[static_cast<std::size_t>(c)];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (set.counts[c] == 0) throw std::invalid_argument("prototypes: class " + std::to_string(c) + " has no labeled samples");
    for (double& v : set.prototypes.row_span(c)) v /= static_cast<double>(set.counts[c]);
  }
  return set;
}

PrototypeSet compute_prototypes(const Dataset& labeled, const Model& model) {
  if (labeled.empty()) throw std::invalid_argument("prototypes: empty labeled set");
  return compute_prototypes(project(model, labeled), labeled.labels(), model.config().num_classes);
}

std::vector<double> class_similarities(std::span<const double> projection, const PrototypeSet& prototypes) {
  if (prototypes.num_classes() == 0) throw std::invalid_argument("class_similarities: no prototypes");
  std::vector<double> sims(prototypes.num_classes());
  for (std::size_t c = 0; c < sims.size(); ++c) sims[c] = cosine_similarity(projection, prototypes.prototypes.row_span(c));
  return sims;
}

std::vector<ScoredSample> score_samples(const Dataset& data, const PrototypeSet& prototypes, const Model& model) {
  std::vector<ScoredSample> out;
  if (data.empty()) return out;
  const Array proj = project(model, data);
  out.reserve(data.size());
  for (std::size_t r = 0; r < data.size(); ++r) {
    ScoredSample s;
    s.id = data.samples[r].id;
    s.sims = class_similarities(proj.row_span(r), prototypes);
    s.score = detection_score(s.sims);
    out.push_back(std::move(s));
  }
  return out;
}

double detection_score(std::span<const double> sims) {
  if (sims.empty()) throw std::invalid_argument("detection_score: empty similarity vector");
  return *std::max_element(sims.begin(), sims.end());
}

Threshold compute_threshold(std::span<const double> labeled_scores, const DetectionConfig& config) {
  config.validate();
  if (labeled_scores.empty()) throw std::invalid_argument("compute_threshold: no labeled scores");
  Threshold t;
  const double n = static_cast<double>(labeled_scores.size());
  for (double s : labeled_scores) t.mu += s;
  t.mu /= n;
  double ss = 0.0;
  for (double s : labeled_scores) ss += (s - t.mu) * (s - t.mu);
  t.sigma = std::sqrt(ss / n);
  t.eta = config.eta;
  t.value = config.explicit_threshold ? *config.explicit_threshold : t.mu - config.eta * t.sigma;
  return t;
}

Split split_unlabeled(std::span<const ScoredSample> scored, double threshold) {
  Split split;
  for (const auto& s : scored) (s.score < threshold ? split.out : split.in).push_back(s.id);
  return split;
}

void write_scored_manifest(const std::filesystem::path& path, std::span<const ScoredSample> scored, double threshold) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::size_t c = scored.empty() ? 0 : scored.front().sims.size();
  os << "sample_id";
  for (std::size_t k = 1; k <= c; ++k) os << ",sim_" << k;
  os << ",score,split\n";
  for (const auto& s : scored) {
    os << s.id;
    for (double v : s.sims) os << ',' << format_real(v);
    os << ',' << format_real(s.score) << ',' << (s.score < threshold ? "out" : "in") << '\n';
  }
}

ScoredManifest read_scored_manifest(const std::filesystem::path& path) {
  const CsvFile file = read_csv(path);
  if (file.header.size() < 4 || file.header.front() != "sample_id" || file.header.back() != "split") {
    row_error(path, 1, "unexpected header");
  }
  const std::size_t c = file.header.size() - 3;
  ScoredManifest m;
  for (const auto& row : file.rows) {
    ScoredSample s;
    s.id = file.get<std::uint64_t>(row, 0);
    s.sims.resize(c);
    for (std::size_t k = 0; k < c; ++k) s.sims[k] = file.get<double>(row, k + 1);
    s.score = file.get<double>(row, c + 1);
    const auto& split = row.fields.back();
    if (split != "in" && split != "out") row_error(path, row.line, "bad split '" + split + "'");
    m.is_out.push_back(split == "out");
    m.samples.push_back(std::move(s));
  }
  return m;
}

}  // namespace opencos
