#include "opencos/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "opencos/csv.h"

namespace opencos {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(name) + ": " + e.what());
  }
}

nlohmann::json optional_json(const std::optional<std::filesystem::path>& p) {
  return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
}

std::optional<std::filesystem::path> optional_path(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return std::filesystem::path(j.at(key).get<std::string>());
}

std::vector<bool> out_flags(std::span<const ScoredSample> scored, const TruthManifest& truth) {
  std::vector<bool> flags;
  flags.reserve(scored.size());
  for (const auto& s : scored) flags.push_back(truth.at(s.id).origin == Origin::kOut);
  return flags;
}

std::vector<double> scores_of(std::span<const ScoredSample> scored) {
  std::vector<double> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.score);
  return out;
}

std::optional<DetectionMetrics> detection_metrics(std::span<const double> scores, const std::vector<bool>& is_out,
                                                  double threshold) {
  const auto outs = static_cast<std::size_t>(std::count(is_out.begin(), is_out.end(), true));
  if (outs == 0 || outs == is_out.size()) return std::nullopt;
  DetectionMetrics m = tpr_tnr(scores, is_out, threshold);
  m.auroc = auroc(scores, is_out);
  return m;
}

std::optional<double> pseudo_accuracy(std::span<const PseudoLabel> labels, const TruthManifest& truth) {
  if (labels.empty()) return std::nullopt;
  std::size_t correct = 0;
  for (const auto& pl : labels) correct += truth.at(pl.id).truth == pl.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

void summarize_accuracies(Report& r, std::size_t median_n) {
  if (r.accuracies.empty()) return;
  r.median_accuracy = median_last_n(r.accuracies, std::min(median_n, r.accuracies.size()));
  r.best_accuracy = *std::max_element(r.accuracies.begin(), r.accuracies.end());
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!dataset_dir) {
    benchmark.validate();
    if (model.input_dim != benchmark.dim) throw std::invalid_argument("config: model.input_dim must equal benchmark.dim");
    if (model.num_classes != benchmark.in_classes) {
      throw std::invalid_argument("config: model.num_classes must equal benchmark.in_classes");
    }
  }
  model.validate();
  contrastive.validate();
  detection.validate();
  labeling.validate();
  ssl.validate();
  if (median_n == 0) throw std::invalid_argument("config: median_n must be positive");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"benchmark", c.benchmark},
                     {"dataset_dir", optional_json(c.dataset_dir)},
                     {"model", c.model},
                     {"contrastive", c.contrastive},
                     {"detection", c.detection},
                     {"labeling", c.labeling},
                     {"ssl", c.ssl},
                     {"pretrain_with_out", c.pretrain_with_out},
                     {"median_n", c.median_n},
                     {"output_dir", optional_json(c.output_dir)},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig d;
  c.benchmark = j.value("benchmark", d.benchmark);
  c.dataset_dir = optional_path(j, "dataset_dir");
  c.model = j.value("model", d.model);
  c.contrastive = j.value("contrastive", d.contrastive);
  c.detection = j.value("detection", d.detection);
  c.labeling = j.value("labeling", d.labeling);
  c.ssl = j.value("ssl", d.ssl);
  c.pretrain_with_out = j.value("pretrain_with_out", d.pretrain_with_out);
  c.median_n = j.value("median_n", d.median_n);
  c.output_dir = optional_path(j, "output_dir");
  c.seed = j.value("seed", d.seed);
}

nlohmann::json Report::deterministic_json() const {
  nlohmann::json j = *this;
  j.erase("timings");
  return j;
}

void to_json(nlohmann::json& j, const Report& r) {
  j = nlohmann::json{
      {"accuracies", r.accuracies},
      {"median_accuracy", r.median_accuracy},
      {"best_accuracy", r.best_accuracy},
      {"pretrain_final_loss", r.pretrain_final_loss},
      {"threshold", {{"value", r.threshold.value}, {"mu", r.threshold.mu}, {"sigma", r.threshold.sigma},
                     {"eta", r.threshold.eta}}},
      {"split", {{"in", r.split_in}, {"out", r.split_out}}},
      {"pseudo", {{"count", r.pseudo_count},
                  {"accuracy", r.pseudo_accuracy ? nlohmann::json(*r.pseudo_accuracy) : nlohmann::json(nullptr)}}},
      {"config", r.config},
      {"timings", r.timings}};
  if (r.detection) {
    // both conventions are spelled out: tpr/tnr treat out-of-class as positive
    j["detection"] = {{"auroc", r.detection->auroc},
                      {"tpr_out_positive", r.detection->tpr},
                      {"tnr_out_positive", r.detection->tnr}};
  } else {
    j["detection"] = nullptr;
  }
}

void from_json(const nlohmann::json& j, Report& r) {
  r.accuracies = j.at("accuracies").get<std::vector<double>>();
  r.median_accuracy = j.at("median_accuracy").get<double>();
  r.best_accuracy = j.at("best_accuracy").get<double>();
  r.pretrain_final_loss = j.at("pretrain_final_loss").get<double>();
  const auto& t = j.at("threshold");
  r.threshold = {t.at("mu").get<double>(), t.at("sigma").get<double>(), t.at("eta").get<double>(),
                 t.at("value").get<double>()};
  r.split_in = j.at("split").at("in").get<std::size_t>();
  r.split_out = j.at("split").at("out").get<std::size_t>();
  r.pseudo_count = j.at("pseudo").at("count").get<std::size_t>();
  const auto& pa = j.at("pseudo").at("accuracy");
  r.pseudo_accuracy = pa.is_null() ? std::nullopt : std::optional<double>(pa.get<double>());
  const auto& det = j.at("detection");
  if (det.is_null()) {
    r.detection.reset();
  } else {
    r.detection = DetectionMetrics{det.at("auroc").get<double>(), det.at("tpr_out_positive").get<double>(),
                                   det.at("tnr_out_positive").get<double>()};
  }
  r.config = j.at("config");
  r.timings = j.value("timings", nlohmann::json::object());
}

double auroc(std::span<const double> scores, const std::vector<bool>& is_out) {
  if (scores.size() != is_out.size()) throw std::invalid_argument("auroc: one truth flag per score required");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average ranks (1-based) over tie groups
  double in_rank_sum = 0.0;
  std::size_t n_in = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (!is_out[order[k]]) {
        in_rank_sum += rank;
        ++n_in;
      }
    }
    i = j;
  }
  const std::size_t n_out = scores.size() - n_in;
  if (n_in == 0 || n_out == 0) throw std::invalid_argument("auroc: both in-class and out-of-class scores required");
  const double u = in_rank_sum - 0.5 * static_cast<double>(n_in) * static_cast<double>(n_in + 1);
  return u / (static_cast<double>(n_in) * static_cast<double>(n_out));
}

DetectionMetrics tpr_tnr(std::span<const double> scores, const std::vector<bool>& is_out, double threshold) {
  if (scores.size() != is_out.size()) throw std::invalid_argument("tpr_tnr: one truth flag per score required");
  std::size_t out = 0, in = 0, flagged = 0, kept = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (is_out[i]) {
      ++out;
      flagged += scores[i] < threshold ? 1 : 0;
    } else {
      ++in;
      kept += scores[i] >= threshold ? 1 : 0;
    }
  }
  if (out == 0 || in == 0) throw std::invalid_argument("tpr_tnr: both in-class and out-of-class scores required");
  DetectionMetrics m;
  m.tpr = static_cast<double>(flagged) / static_cast<double>(out);
  m.tnr = static_cast<double>(kept) / static_cast<double>(in);
  return m;
}

double median_last_n(std::span<const double> values, std::size_t n) {
  if (n == 0) throw std::invalid_argument("median_last_n: n must be positive");
  if (values.size() < n) {
    throw std::invalid_argument("median_last_n: need " + std::to_string(n) + " values, got " +
                                std::to_string(values.size()));
  }
  std::vector<double> tail(values.end() - static_cast<std::ptrdiff_t>(n), values.end());
  std::sort(tail.begin(), tail.end());
  return n % 2 == 1 ? tail[n / 2] : 0.5 * (tail[n / 2 - 1] + tail[n / 2]);
}

Benchmark load_data(const ExperimentConfig& config) {
  return config.dataset_dir ? read_benchmark(*config.dataset_dir) : generate(config.benchmark);
}

Pretrained pretrain_stage(const ExperimentConfig& config) {
  config.validate();
  const auto start = Clock::now();
  Benchmark bench = stage("data", [&] { return load_data(config); });
  if (bench.labeled.dim != config.model.input_dim) throw std::invalid_argument("data: dimension does not match model");
  Model model(config.model, config.seed);

  Dataset pool = strip_labels(concat(bench.labeled, bench.unlabeled));
  if (!config.pretrain_with_out) {
    std::erase_if(pool.samples, [&](const Sample& s) { return bench.truth.at(s.id).origin == Origin::kOut; });
  }
  PretrainResult result = stage("pretrain", [&] { return pretrain(model, pool, config.contrastive, config.seed); });
  Pretrained p{std::move(bench), std::move(model), std::move(result), 0.0};
  p.seconds = seconds_since(start);
  return p;
}

Report finish_experiment(const ExperimentConfig& config, const Pretrained& pretrained) {
  config.validate();
  const Benchmark& bench = pretrained.bench;
  const Toggles& toggles = config.ssl.toggles;
  Report report;
  report.config = config;
  report.timings["pretrain"] = pretrained.seconds;
  if (!pretrained.pretrain.loss_trace.empty()) report.pretrain_final_loss = pretrained.pretrain.loss_trace.back();

  const auto& out_dir = config.output_dir;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    write_benchmark(*out_dir / "data", bench);
    write_loss_trace(*out_dir / "pretrain_loss.csv", pretrained.pretrain.loss_trace);
    save_checkpoint(pretrained.model, *out_dir / "pretrained.bin");
  }

  auto start = Clock::now();
  std::vector<ScoredSample> scored;
  std::vector<ScoredSample> labeled_scored;
  stage("detect", [&] {
    const PrototypeSet prototypes = compute_prototypes(bench.labeled, pretrained.model);
    labeled_scored = score_samples(bench.labeled, prototypes, pretrained.model);
    scored = score_samples(bench.unlabeled, prototypes, pretrained.model);
    report.threshold = compute_threshold(scores_of(labeled_scored), config.detection);
    const auto s = scores_of(scored);
    report.detection = detection_metrics(s, out_flags(scored, bench.truth), report.threshold.value);
    if (out_dir) {
      write_scored_manifest(*out_dir / "labeled_scores.csv", labeled_scored, report.threshold.value);
      write_scored_manifest(*out_dir / "scores.csv", scored, report.threshold.value);
    }
    return 0;
  });

  TrainData data;
  data.labeled = bench.labeled;
  if (toggles.detect) {
    const Split split = split_unlabeled(scored, report.threshold.value);
    data.in = subset(bench.unlabeled, split.in);
    data.out = subset(bench.unlabeled, split.out);
  } else {
    data.in = bench.unlabeled;
  }
  report.split_in = data.in.size();
  report.split_out = data.out.size();
  report.timings["detect"] = seconds_since(start);

  start = Clock::now();
  stage("label", [&] {
    if (toggles.detect) {
      std::vector<ScoredSample> out_scored;
      for (const auto& s : scored) {
        if (s.score < report.threshold.value) out_scored.push_back(s);
      }
      const auto soft = soft_labels(out_scored, config.labeling.tau_sl);
      if (!soft.empty()) {
        data.out_q = Array::zeros({soft.size(), config.model.num_classes});
        for (std::size_t r = 0; r < soft.size(); ++r) {
          std::copy(soft[r].q.begin(), soft[r].q.end(), data.out_q.row_span(r).begin());
        }
      }
      if (out_dir) write_soft_manifest(*out_dir / "soft_labels.csv", soft);
    }
    if (toggles.topk_pl) {
      const LinearHead head = train_linear_eval(pretrained.model, bench.labeled, config.labeling, config.seed);
      const auto pseudo = select_topk(data.in, head, pretrained.model, config.labeling.k_fraction);
      report.pseudo_count = pseudo.size();
      report.pseudo_accuracy = pseudo_accuracy(pseudo, bench.truth);
      data.labeled = concat(bench.labeled, pseudo_labeled_set(data.in, pseudo));
      if (out_dir) write_pseudo_manifest(*out_dir / "pseudo_labels.csv", pseudo);
    }
    data.labeled = oversample(data.labeled);
    return 0;
  });
  report.timings["label"] = seconds_since(start);

  start = Clock::now();
  TrainState state(pretrained.model, config.ssl.optimizer);
  stage("train", [&] {
    TrainOptions options;
    if (out_dir) options.checkpoint_dir = *out_dir / "checkpoints";
    train(state, data, bench.test, config.ssl, config.seed, options);
    if (out_dir) write_trace(*out_dir / "trace.csv", state.trace);
    return 0;
  });
  report.timings["train"] = seconds_since(start);

  for (const auto& cp : state.history) report.accuracies.push_back(cp.accuracy);
  summarize_accuracies(report, config.median_n);
  if (out_dir) {
    std::ofstream os(*out_dir / "report.json");
    os << nlohmann::json(report).dump(2) << '\n';
  }
  return report;
}

Report run_experiment(const ExperimentConfig& config) { return finish_experiment(config, pretrain_stage(config)); }

SweepAxis parse_axis(const std::string& name) {
  static const std::map<std::string, SweepAxis> axes{{"proportion", SweepAxis::kProportion},
                                                     {"tau_sl", SweepAxis::kTauSl},
                                                     {"lambda", SweepAxis::kLambda},
                                                     {"k_fraction", SweepAxis::kKFraction},
                                                     {"eta", SweepAxis::kEta}};
  const auto it = axes.find(name);
  if (it == axes.end()) throw std::invalid_argument("unknown sweep axis '" + name + "'");
  return it->second;
}

std::string axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kProportion: return "proportion";
    case SweepAxis::kTauSl: return "tau_sl";
    case SweepAxis::kLambda: return "lambda";
    case SweepAxis::kKFraction: return "k_fraction";
    case SweepAxis::kEta: return "eta";
  }
  throw std::invalid_argument("bad sweep axis");
}

ExperimentConfig with_axis_value(ExperimentConfig config, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kProportion: config.benchmark.out_proportion = value; break;
    case SweepAxis::kTauSl: config.labeling.tau_sl = value; break;
    case SweepAxis::kLambda: config.ssl.lambda = value; break;
    case SweepAxis::kKFraction: config.labeling.k_fraction = value; break;
    case SweepAxis::kEta: config.detection.eta = value; break;
  }
  return config;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, SweepAxis axis, std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("run_sweep: no values");
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SweepRow row{values[i], std::nullopt, {}};
    try {
      ExperimentConfig cfg = with_axis_value(base, axis, values[i]);
      if (base.output_dir) cfg.output_dir = *base.output_dir / (axis_name(axis) + "_" + std::to_string(i));
      row.report = run_experiment(cfg);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, SweepAxis axis, std::span<const SweepRow> rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << axis_name(axis)
     << ",median_accuracy,best_accuracy,auroc,tpr_out_positive,tnr_out_positive,threshold,split_in,split_out,"
        "pseudo_count,pseudo_accuracy,error\n";
  for (const auto& row : rows) {
    os << format_real(row.value);
    if (row.report) {
      const Report& r = *row.report;
      os << ',' << format_real(r.median_accuracy) << ',' << format_real(r.best_accuracy);
      if (r.detection) {
        os << ',' << format_real(r.detection->auroc) << ',' << format_real(r.detection->tpr) << ','
           << format_real(r.detection->tnr);
      } else {
        os << ",,,";
      }
      os << ',' << format_real(r.threshold.value) << ',' << r.split_in << ',' << r.split_out << ',' << r.pseudo_count
         << ',' << (r.pseudo_accuracy ? format_real(*r.pseudo_accuracy) : "") << ",\n";
    } else {
      std::string err = row.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      os << ",,,,,,,,,,," << err << '\n';
    }
  }
}

Report recompute_report(const std::filesystem::path& run_dir) {
  std::ifstream is(run_dir / "report.json");
  if (!is) throw std::runtime_error("cannot open " + (run_dir / "report.json").string());
  const Report stored = nlohmann::json::parse(is).get<Report>();
  const ExperimentConfig config = stored.config.get<ExperimentConfig>();
  const Benchmark bench = read_benchmark(run_dir / "data");

  Report r;
  r.config = stored.config;
  r.timings = stored.timings;

  const CsvFile pre = read_csv(run_dir / "pretrain_loss.csv");
  if (!pre.rows.empty()) r.pretrain_final_loss = pre.get<double>(pre.rows.back(), 1);

  const auto labeled = read_scored_manifest(run_dir / "labeled_scores.csv");
  const auto unlabeled = read_scored_manifest(run_dir / "scores.csv");
  r.threshold = compute_threshold(scores_of(labeled.samples), config.detection);
  r.detection = detection_metrics(scores_of(unlabeled.samples), out_flags(unlabeled.samples, bench.truth), r.threshold.value);
  if (config.ssl.toggles.detect) {
    r.split_out = static_cast<std::size_t>(std::count(unlabeled.is_out.begin(), unlabeled.is_out.end(), true));
    r.split_in = unlabeled.samples.size() - r.split_out;
  } else {
    r.split_in = unlabeled.samples.size();
  }
  if (config.ssl.toggles.topk_pl) {
    const auto pseudo = read_pseudo_manifest(run_dir / "pseudo_labels.csv");
    r.pseudo_count = pseudo.size();
    r.pseudo_accuracy = pseudo_accuracy(pseudo, bench.truth);
  }

  const CsvFile trace = read_csv(run_dir / "trace.csv");
  for (const auto& row : trace.rows) {
    if (!row.fields.back().empty()) r.accuracies.push_back(trace.get<double>(row, trace.header.size() - 1));
  }
  summarize_accuracies(r, config.median_n);
  return r;
}

}  // namespace opencos
