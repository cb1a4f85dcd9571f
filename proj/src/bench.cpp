#include "opencos/bench.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "opencos/csv.h"
#include "opencos/random.h"

namespace opencos {

namespace {

// Orthonormalizes rows in place (modified Gram-Schmidt); rows beyond the
// dimension fall back to plain normalization.
void orthonormalize(Array& dirs) {
  const std::size_t n = dirs.rows(), d = dirs.cols();
  for (std::size_t i = 0; i < n; ++i) {
    auto row = dirs.row_span(i);
    if (i < d) {
      for (std::size_t j = 0; j < i; ++j) {
        auto prev = dirs.row_span(j);
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += row[k] * prev[k];
        for (std::size_t k = 0; k < d; ++k) row[k] -= dot * prev[k];
      }
    }
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : row) v /= norm;
  }
}

struct Geometry {
  Array in_means;
  Array out_means;
};

Geometry make_geometry(const BenchmarkSpec& spec) {
  const std::size_t c = spec.in_classes, m = spec.out_classes, d = spec.dim;
  Rng rng = keyed_rng(spec.seed, {tag(Stream::kGeometry)});
  std::normal_distribution<double> normal(0.0, 1.0);
  Array dirs = Array::zeros({c + m, d});
  for (double& v : dirs.data()) v = normal(rng);
  orthonormalize(dirs);

  // Orthonormal directions scaled by sep*sigma/sqrt(2) sit exactly
  // sep*sigma apart from each other.
  const double radius = spec.separation * spec.sigma / std::sqrt(2.0);
  Geometry geo;
  geo.in_means = Array::zeros({c, d});
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t k = 0; k < d; ++k) geo.in_means.at(i, k) = radius * dirs.at(i, k);
  }
  if (m > 0) {
    geo.out_means = Array::zeros({m, d});
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = 0; k < d; ++k) {
        const double dir = dirs.at(c + j, k);
        geo.out_means.at(j, k) = spec.correlation == Correlation::kRelated
                                     ? geo.in_means.at(j % c, k) + 0.5 * spec.separation * spec.sigma * dir
                                     : radius * dir;
      }
    }
  }
  return geo;
}

std::vector<double> draw_point(Rng& rng, std::span<const double> mean, double sigma) {
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> x(mean.begin(), mean.end());
  for (double& v : x) v += normal(rng);
  return x;
}

// Splits n items over k groups as evenly as possible, extras to low indices.
std::size_t share(std::size_t n, std::size_t k, std::size_t i) { return n / k + (i < n % k ? 1 : 0); }

}  // namespace

Array Dataset::features() const {
  if (samples.empty()) throw std::invalid_argument("dataset: no samples");
  std::vector<double> flat;
  flat.reserve(samples.size() * dim);
  for (const auto& s : samples) flat.insert(flat.end(), s.features.begin(), s.features.end());
  return Array::matrix(samples.size(), dim, std::move(flat));
}

Array Dataset::features(std::span<const std::size_t> rows) const {
  if (rows.empty()) throw std::invalid_argument("dataset: empty row selection");
  std::vector<double> flat;
  flat.reserve(rows.size() * dim);
  for (std::size_t r : rows) {
    const auto& f = samples.at(r).features;
    flat.insert(flat.end(), f.begin(), f.end());
  }
  return Array::matrix(rows.size(), dim, std::move(flat));
}

std::vector<std::uint64_t> Dataset::ids() const {
  std::vector<std::uint64_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.id);
  return out;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

void BenchmarkSpec::validate() const {
  if (dim == 0) throw std::invalid_argument("benchmark: dim must be positive");
  if (in_classes < 2) throw std::invalid_argument("benchmark: need at least 2 in-classes");
  if (!(separation > 0.0) || !(sigma > 0.0)) throw std::invalid_argument("benchmark: separation and sigma must be positive");
  if (!(out_proportion >= 0.0 && out_proportion <= 1.0)) {
    throw std::invalid_argument("benchmark: out_proportion must be in [0,1]");
  }
  if (labels_per_class == 0) throw std::invalid_argument("benchmark: insufficient samples per class (labels_per_class = 0)");
  if (test_per_class == 0) throw std::invalid_argument("benchmark: insufficient samples per class (test_per_class = 0)");
  if (out_count() > 0 && out_classes == 0) {
    throw std::invalid_argument("benchmark: out-of-class samples requested but out_classes = 0");
  }
}

std::size_t BenchmarkSpec::out_count() const {
  // half-up rounding
  return static_cast<std::size_t>(std::floor(out_proportion * static_cast<double>(total_unlabeled) + 0.5));
}

void to_json(nlohmann::json& j, const BenchmarkSpec& s) {
  j = nlohmann::json{{"dim", s.dim},
                     {"in_classes", s.in_classes},
                     {"out_classes", s.out_classes},
                     {"separation", s.separation},
                     {"sigma", s.sigma},
                     {"correlation", s.correlation == Correlation::kRelated ? "related" : "independent"},
                     {"total_unlabeled", s.total_unlabeled},
                     {"out_proportion", s.out_proportion},
                     {"labels_per_class", s.labels_per_class},
                     {"test_per_class", s.test_per_class},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, BenchmarkSpec& s) {
  BenchmarkSpec d;
  s.dim = j.value("dim", d.dim);
  s.in_classes = j.value("in_classes", d.in_classes);
  s.out_classes = j.value("out_classes", d.out_classes);
  s.separation = j.value("separation", d.separation);
  s.sigma = j.value("sigma", d.sigma);
  const std::string corr = j.value("correlation", std::string("independent"));
  if (corr != "independent" && corr != "related") throw std::invalid_argument("benchmark: unknown correlation " + corr);
  s.correlation = corr == "related" ? Correlation::kRelated : Correlation::kIndependent;
  s.total_unlabeled = j.value("total_unlabeled", d.total_unlabeled);
  s.out_proportion = j.value("out_proportion", d.out_proportion);
  s.labels_per_class = j.value("labels_per_class", d.labels_per_class);
  s.test_per_class = j.value("test_per_class", d.test_per_class);
  s.seed = j.value("seed", d.seed);
}

Benchmark generate(const BenchmarkSpec& spec) {
  spec.validate();
  const Geometry geo = make_geometry(spec);
  const std::size_t c = spec.in_classes;

  Benchmark b;
  b.spec = spec;
  b.in_means = geo.in_means;
  b.out_means = geo.out_means;
  b.labeled.dim = b.unlabeled.dim = b.test.dim = spec.dim;

  std::uint64_t next_id = 0;
  Rng labeled_rng = keyed_rng(spec.seed, {tag(Stream::kLabeledDraw)});
  for (std::size_t cls = 0; cls < c; ++cls) {
    for (std::size_t i = 0; i < spec.labels_per_class; ++i) {
      const std::uint64_t id = next_id++;
      b.labeled.samples.push_back({id, draw_point(labeled_rng, geo.in_means.row_span(cls), spec.sigma),
                                   static_cast<int>(cls)});
      b.truth[id] = {static_cast<int>(cls), Origin::kIn};
    }
  }

  struct Pending {
    std::vector<double> x;
    int truth;
    Origin origin;
  };
  std::vector<Pending> pool;
  Rng unlabeled_rng = keyed_rng(spec.seed, {tag(Stream::kUnlabeledDraw)});
  const std::size_t n_in = spec.in_count(), n_out = spec.out_count();
  for (std::size_t cls = 0; cls < c; ++cls) {
    for (std::size_t i = 0, n = share(n_in, c, cls); i < n; ++i) {
      pool.push_back({draw_point(unlabeled_rng, geo.in_means.row_span(cls), spec.sigma), static_cast<int>(cls),
                      Origin::kIn});
    }
  }
  for (std::size_t j = 0; j < spec.out_classes && n_out > 0; ++j) {
    for (std::size_t i = 0, n = share(n_out, spec.out_classes, j); i < n; ++i) {
      pool.push_back({draw_point(unlabeled_rng, geo.out_means.row_span(j), spec.sigma), static_cast<int>(c + j),
                      Origin::kOut});
    }
  }
  std::shuffle(pool.begin(), pool.end(), unlabeled_rng);
  for (auto& p : pool) {
    const std::uint64_t id = next_id++;
    b.unlabeled.samples.push_back({id, std::move(p.x), kUnlabeled});
    b.truth[id] = {p.truth, p.origin};
  }

  Rng test_rng = keyed_rng(spec.seed, {tag(Stream::kTestDraw)});
  for (std::size_t cls = 0; cls < c; ++cls) {
    for (std::size_t i = 0; i < spec.test_per_class; ++i) {
      const std::uint64_t id = next_id++;
      b.test.samples.push_back({id, draw_point(test_rng, geo.in_means.row_span(cls), spec.sigma),
                                static_cast<int>(cls)});
      b.truth[id] = {static_cast<int>(cls), Origin::kIn};
    }
  }
  return b;
}

std::vector<Benchmark> sweep_proportions(const BenchmarkSpec& spec, std::span<const double> proportions) {
  std::vector<Benchmark> out;
  for (double p : proportions) {
    BenchmarkSpec s = spec;
    s.out_proportion = p;
    out.push_back(generate(s));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data, const TruthManifest& truth) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "id";
  for (std::size_t k = 0; k < data.dim; ++k) os << ",f" << k;
  os << ",label,truth,origin\n";
  for (const auto& s : data.samples) {
    if (s.features.size() != data.dim) throw std::invalid_argument("write_dataset: feature length mismatch");
    const auto it = truth.find(s.id);
    if (it == truth.end()) throw std::invalid_argument("write_dataset: no truth record for id " + std::to_string(s.id));
    os << s.id;
    for (double v : s.features) os << ',' << format_real(v);
    os << ',' << s.label << ',' << it->second.truth << ',' << (it->second.origin == Origin::kIn ? "in" : "out") << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

LoadedDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) row_error(path, 1, "missing header");
  const auto header = split_csv(line);
  if (header.size() < 4 || header.front() != "id" || header[header.size() - 3] != "label" ||
      header[header.size() - 2] != "truth" || header.back() != "origin") {
    row_error(path, 1, "unexpected header");
  }
  LoadedDataset out;
  out.data.dim = header.size() - 4;
  for (std::size_t k = 0; k < out.data.dim; ++k) {
    if (header[k + 1] != "f" + std::to_string(k)) row_error(path, 1, "unexpected feature column name");
  }
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      row_error(path, line_no, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    Sample s;
    if (!parse_field(fields[0], s.id)) row_error(path, line_no, "bad id");
    s.features.resize(out.data.dim);
    for (std::size_t k = 0; k < out.data.dim; ++k) {
      if (!parse_field(fields[k + 1], s.features[k])) row_error(path, line_no, "bad feature f" + std::to_string(k));
    }
    TruthRecord t;
    if (!parse_field(fields[out.data.dim + 1], s.label)) row_error(path, line_no, "bad label");
    if (!parse_field(fields[out.data.dim + 2], t.truth)) row_error(path, line_no, "bad truth");
    const auto origin = fields.back();
    if (origin == "in") {
      t.origin = Origin::kIn;
    } else if (origin == "out") {
      t.origin = Origin::kOut;
    } else {
      row_error(path, line_no, "bad origin");
    }
    if (!out.truth.emplace(s.id, t).second) row_error(path, line_no, "duplicate id");
    out.data.samples.push_back(std::move(s));
  }
  return out;
}

void write_benchmark(const std::filesystem::path& dir, const Benchmark& bench) {
  std::filesystem::create_directories(dir);
  write_dataset(dir / "labeled.csv", bench.labeled, bench.truth);
  write_dataset(dir / "unlabeled.csv", bench.unlabeled, bench.truth);
  write_dataset(dir / "test.csv", bench.test, bench.truth);
  std::ofstream os(dir / "spec.json");
  os << nlohmann::json(bench.spec).dump(2) << '\n';
}

Benchmark read_benchmark(const std::filesystem::path& dir) {
  Benchmark b;
  std::ifstream is(dir / "spec.json");
  if (!is) throw std::runtime_error("cannot open " + (dir / "spec.json").string());
  b.spec = nlohmann::json::parse(is).get<BenchmarkSpec>();
  for (auto [name, target] : {std::pair{"labeled.csv", &b.labeled}, std::pair{"unlabeled.csv", &b.unlabeled},
                              std::pair{"test.csv", &b.test}}) {
    auto loaded = read_dataset(dir / name);
    *target = std::move(loaded.data);
    if (target->dim == 0) target->dim = b.spec.dim;
    b.truth.merge(loaded.truth);
  }
  return b;
}

Dataset strip_labels(const Dataset& data) {
  Dataset out = data;
  for (auto& s : out.samples) s.label = kUnlabeled;
  return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (!a.empty() && !b.empty() && a.dim != b.dim) throw std::invalid_argument("concat: dimension mismatch");
  Dataset out = a;
  if (out.dim == 0) out.dim = b.dim;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  return out;
}

Dataset subset(const Dataset& data, std::span<const std::uint64_t> ids) {
  std::unordered_set<std::uint64_t> keep(ids.begin(), ids.end());
  Dataset out;
  out.dim = data.dim;
  for (const auto& s : data.samples) {
    if (keep.count(s.id)) out.samples.push_back(s);
  }
  return out;
}

}  // namespace opencos
