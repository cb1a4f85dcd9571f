#include <fstream>
#include <functional>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "opencos/csv.h"
#include "opencos/harness.h"

namespace fs = std::filesystem;
using namespace opencos;

namespace {

// Flags shared by every subcommand that builds an ExperimentConfig.
struct Flags {
  ExperimentConfig config;
  std::string config_file;
  std::string data_dir;
  std::string backend = "consistency";
  bool no_detect = false, no_aux_loss = false, no_aux_bn = false, no_topk = false;

  void add_to(CLI::App& app) {
    auto& c = config;
    app.add_option("--config", config_file, "JSON config; its fields override flags")->check(CLI::ExistingFile);
    app.add_option("--seed", c.seed, "Master seed for every random stream");
    app.add_option("--data", data_dir, "Read a generated dataset instead of generating one")->check(CLI::ExistingDirectory);
    app.add_option("--dim", c.benchmark.dim);
    app.add_option("--in-classes", c.benchmark.in_classes);
    app.add_option("--out-classes", c.benchmark.out_classes);
    app.add_option("--separation", c.benchmark.separation, "In-class mean spacing in units of sigma");
    app.add_option("--unlabeled", c.benchmark.total_unlabeled);
    app.add_option("--proportion", c.benchmark.out_proportion, "Out-of-class share of the unlabeled set");
    app.add_option("--labels-per-class", c.benchmark.labels_per_class);
    app.add_option("--test-per-class", c.benchmark.test_per_class);
    app.add_option("--data-seed", c.benchmark.seed);
    app.add_option("--pretrain-steps", c.contrastive.steps);
    app.add_option("--pretrain-batch", c.contrastive.batch_size);
    app.add_option("--tau", c.contrastive.tau);
    app.add_option("--eta", c.detection.eta);
    app.add_option("--threshold", c.detection.explicit_threshold, "Fixed detection threshold");
    app.add_option("--tau-sl", c.labeling.tau_sl);
    app.add_option("--k-fraction", c.labeling.k_fraction);
    app.add_option("--lambda", c.ssl.lambda);
    app.add_option("--beta", c.ssl.beta);
    app.add_option("--steps", c.ssl.steps, "Fine-tuning steps");
    app.add_option("--batch", c.ssl.batch_size, "Fine-tuning batch size");
    app.add_option("--lr", c.ssl.optimizer.learning_rate, "Fine-tuning learning rate");
    app.add_option("--checkpoints", c.ssl.checkpoint_count);
    app.add_option("--median-n", c.median_n);
    app.add_option("--backend", backend)->check(CLI::IsMember({"consistency", "hard-pseudo"}));
    app.add_flag("--no-detect", no_detect);
    app.add_flag("--no-aux-loss", no_aux_loss);
    app.add_flag("--no-aux-bn", no_aux_bn);
    app.add_flag("--no-topk", no_topk);
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config;
    c.ssl.backend = backend == "hard-pseudo" ? Backend::kHardPseudo : Backend::kConsistency;
    c.ssl.toggles = {!no_detect, !no_aux_loss, !no_aux_bn, !no_topk};
    if (!data_dir.empty()) {
      c.dataset_dir = data_dir;
      std::ifstream is(fs::path(data_dir) / "spec.json");
      if (is) c.benchmark = nlohmann::json::parse(is).get<BenchmarkSpec>();
    }
    c.model.input_dim = c.benchmark.dim;
    c.model.num_classes = c.benchmark.in_classes;
    if (!config_file.empty()) {
      std::ifstream is(config_file);
      nlohmann::json j = c;
      j.merge_patch(nlohmann::json::parse(is));
      c = j.get<ExperimentConfig>();
    }
    c.validate();
    return c;
  }
};

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(is);
}

// A run directory written by `pretrain`: config.json, data/, pretrained.bin, pretrain_loss.csv.
struct RunDir {
  ExperimentConfig config;
  Pretrained pretrained;
};

RunDir load_run(const fs::path& dir) {
  ExperimentConfig config = read_json(dir / "config.json").get<ExperimentConfig>();
  config.output_dir = dir;
  PretrainResult result;
  const CsvFile trace = read_csv(dir / "pretrain_loss.csv");
  for (const auto& row : trace.rows) result.loss_trace.push_back(trace.get<double>(row, 1));
  return {config, Pretrained{read_benchmark(dir / "data"), load_checkpoint(dir / "pretrained.bin"), result, 0.0}};
}

struct Detected {
  std::vector<ScoredSample> labeled, unlabeled;
  Threshold threshold;
};

Detected detect_stage(const RunDir& run, const fs::path& dir) {
  const Model& model = run.pretrained.model;
  const Benchmark& bench = run.pretrained.bench;
  const PrototypeSet prototypes = compute_prototypes(bench.labeled, model);
  Detected d;
  d.labeled = score_samples(bench.labeled, prototypes, model);
  d.unlabeled = score_samples(bench.unlabeled, prototypes, model);
  std::vector<double> lab_scores;
  for (const auto& s : d.labeled) lab_scores.push_back(s.score);
  d.threshold = compute_threshold(lab_scores, run.config.detection);
  write_scored_manifest(dir / "labeled_scores.csv", d.labeled, d.threshold.value);
  write_scored_manifest(dir / "scores.csv", d.unlabeled, d.threshold.value);
  return d;
}

void print_report(const Report& r) { std::cout << r.deterministic_json().dump(2) << '\n'; }

int guarded(const std::function<void()>& f) {
  try {
    f();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set semi-supervised learning experiments on synthetic benchmarks"};
  app.require_subcommand(1);
  Flags flags;
  std::string out, run_dir, axis, report_out;
  std::vector<double> values;
  std::vector<std::string> runs;

  auto* generate = app.add_subcommand("generate", "Generate a benchmark dataset");
  flags.add_to(*generate);
  generate->add_option("--out", out, "Output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pretraining into a run directory");
  flags.add_to(*pretrain);
  pretrain->add_option("--out", out, "Run directory")->required();

  auto* detect = app.add_subcommand("detect", "Score and split the unlabeled set of a pretrained run");
  detect->add_option("--run", run_dir)->required()->check(CLI::ExistingDirectory);

  auto* label = app.add_subcommand("label", "Soft labels and top-k pseudo-labels for a pretrained run");
  label->add_option("--run", run_dir)->required()->check(CLI::ExistingDirectory);

  auto* train = app.add_subcommand("train", "Fine-tune a pretrained run and write its report");
  train->add_option("--run", run_dir)->required()->check(CLI::ExistingDirectory);

  auto* run = app.add_subcommand("run", "Full pipeline: pretrain, detect, label, train");
  flags.add_to(*run);
  run->add_option("--out", out, "Run directory");

  auto* sweep = app.add_subcommand("sweep", "One run per value of an axis");
  flags.add_to(*sweep);
  sweep->add_option("--axis", axis)->required()->check(CLI::IsMember({"proportion", "tau_sl", "lambda", "k_fraction", "eta"}));
  sweep->add_option("--values", values)->required();
  sweep->add_option("--out", out, "Sweep directory")->required();

  auto* eval = app.add_subcommand("eval", "Recompute a run's metrics from its manifests");
  eval->add_option("--run", run_dir)->required()->check(CLI::ExistingDirectory);

  auto* report = app.add_subcommand("report", "Collect run reports into one CSV");
  report->add_option("--runs", runs, "Run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", report_out, "CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  return guarded([&] {
    if (generate->parsed()) {
      const ExperimentConfig c = flags.resolve();
      write_benchmark(out, load_data(c));
      std::cout << "wrote " << out << '\n';
    } else if (pretrain->parsed()) {
      ExperimentConfig c = flags.resolve();
      c.output_dir = out;
      const Pretrained p = pretrain_stage(c);
      fs::create_directories(out);
      write_benchmark(fs::path(out) / "data", p.bench);
      write_loss_trace(fs::path(out) / "pretrain_loss.csv", p.pretrain.loss_trace);
      save_checkpoint(p.model, fs::path(out) / "pretrained.bin");
      write_json(fs::path(out) / "config.json", c);
      std::cout << "final contrastive loss " << p.pretrain.loss_trace.back() << '\n';
    } else if (detect->parsed()) {
      const RunDir r = load_run(run_dir);
      const Detected d = detect_stage(r, run_dir);
      std::size_t flagged = 0;
      for (const auto& s : d.unlabeled) flagged += s.score < d.threshold.value ? 1 : 0;
      std::cout << "threshold " << d.threshold.value << " (mu " << d.threshold.mu << ", sigma " << d.threshold.sigma
                << ")\nflagged out " << flagged << " of " << d.unlabeled.size() << '\n';
    } else if (label->parsed()) {
      const RunDir r = load_run(run_dir);
      const Detected d = detect_stage(r, run_dir);
      std::vector<ScoredSample> out_scored;
      std::vector<std::uint64_t> in_ids;
      for (const auto& s : d.unlabeled) {
        if (s.score < d.threshold.value) out_scored.push_back(s);
        else in_ids.push_back(s.id);
      }
      write_soft_manifest(fs::path(run_dir) / "soft_labels.csv", soft_labels(out_scored, r.config.labeling.tau_sl));
      const Model& model = r.pretrained.model;
      const LinearHead head = train_linear_eval(model, r.pretrained.bench.labeled, r.config.labeling, r.config.seed);
      const auto pseudo = select_topk(subset(r.pretrained.bench.unlabeled, in_ids), head, model, r.config.labeling.k_fraction);
      write_pseudo_manifest(fs::path(run_dir) / "pseudo_labels.csv", pseudo);
      std::cout << "soft labels " << out_scored.size() << ", pseudo-labels " << pseudo.size() << '\n';
    } else if (train->parsed()) {
      const RunDir r = load_run(run_dir);
      print_report(finish_experiment(r.config, r.pretrained));
    } else if (run->parsed()) {
      ExperimentConfig c = flags.resolve();
      if (!out.empty()) c.output_dir = out;
      print_report(run_experiment(c));
    } else if (sweep->parsed()) {
      ExperimentConfig c = flags.resolve();
      c.output_dir = out;
      const SweepAxis a = parse_axis(axis);
      const auto rows = run_sweep(c, a, values);
      write_sweep_csv(fs::path(out) / "sweep.csv", a, rows);
      std::size_t failed = 0;
      for (const auto& row : rows) {
        if (!row.report) {
          ++failed;
          std::cerr << axis << "=" << row.value << ": " << row.error << '\n';
        }
      }
      std::cout << "wrote " << (fs::path(out) / "sweep.csv").string() << '\n';
      if (failed > 0) throw std::runtime_error(std::to_string(failed) + " sweep point(s) failed");
    } else if (eval->parsed()) {
      print_report(recompute_report(run_dir));
    } else if (report->parsed()) {
      std::ofstream os(report_out);
      if (!os) throw std::runtime_error("cannot open " + report_out + " for writing");
      os << "run,proportion,detect,aux_loss,aux_bn,topk_pl,median_accuracy,best_accuracy,auroc\n";
      for (const auto& dir : runs) {
        const Report r = read_json(fs::path(dir) / "report.json").get<Report>();
        const ExperimentConfig c = r.config.get<ExperimentConfig>();
        const Toggles& t = c.ssl.toggles;
        os << dir << ',' << format_real(c.benchmark.out_proportion) << ',' << t.detect << ',' << t.aux_loss << ','
           << t.aux_bn << ',' << t.topk_pl << ',' << format_real(r.median_accuracy) << ','
           << format_real(r.best_accuracy) << ',' << (r.detection ? format_real(r.detection->auroc) : "") << '\n';
      }
      std::cout << "wrote " << report_out << '\n';
    }
  });
}
