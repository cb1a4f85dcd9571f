#include "opencos/ssl.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "opencos/csv.h"
#include "opencos/random.h"

namespace opencos {

namespace {

Array stack_rows(std::initializer_list<const Array*> parts) {
  std::vector<double> data;
  std::size_t rows = 0, cols = 0;
  for (const Array* p : parts) {
    if (p->size() == 0) continue;
    cols = p->cols();
    rows += p->rows();
    data.insert(data.end(), p->data().begin(), p->data().end());
  }
  return Array::matrix(rows, cols, std::move(data));
}

Array row_block(const Array& a, std::size_t begin, std::size_t end) {
  const auto first = a.data().begin() + static_cast<std::ptrdiff_t>(begin * a.cols());
  return Array::matrix(end - begin, a.cols(),
                       std::vector<double>(first, first + static_cast<std::ptrdiff_t>((end - begin) * a.cols())));
}

Array softmax_values(const Array& logits) {
  Graph g;
  return g.value(ops::softmax_rows(g, g.constant(logits)));
}

// Target for the unlabeled term from the weak-view logits, used only as
// values so no gradient reaches it.
Array unlabeled_target(const Array& weak_logits, const SSLConfig& config) {
  const Array p1 = softmax_values(weak_logits);
  if (config.backend == Backend::kConsistency) return p1;
  Array target = Array::zeros(p1.shape());
  for (std::size_t r = 0; r < p1.rows(); ++r) {
    const auto row = p1.row_span(r);
    const auto best = std::max_element(row.begin(), row.end());
    if (*best > config.pseudo_threshold) target.at(r, static_cast<std::size_t>(best - row.begin())) = 1.0;
  }
  return target;
}

void check_soft_labels(const Array& q) {
  for (std::size_t r = 0; r < q.rows(); ++r) {
    double s = 0.0;
    for (double v : q.row_span(r)) s += v;
    if (!(std::abs(s - 1.0) <= 1e-9)) {
      throw std::invalid_argument("opencos_loss: soft label row " + std::to_string(r) + " sums to " + format_real(s));
    }
  }
}

// Cycles through a dataset in seeded permutations, one pass at a time.
class StreamCursor {
 public:
  StreamCursor(std::size_t n, std::uint64_t seed, std::uint64_t stream)
      : order_(n), pos_(n), seed_(seed), stream_(stream) {}

  // skip() fast-forwards so a resumed run draws the same batches as an
  // uninterrupted one.
  void skip(std::size_t count) { next(count); }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> rows;
    rows.reserve(count);
    while (rows.size() < count) {
      if (pos_ == order_.size()) reshuffle();
      rows.push_back(order_[pos_++]);
    }
    return rows;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng = keyed_rng(seed_, {tag(Stream::kTrainBatch), stream_, pass_++});
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t pos_;
  std::uint64_t pass_ = 0;
  std::uint64_t seed_;
  std::uint64_t stream_;
};

std::vector<std::uint64_t> ids_of(const Dataset& d, std::span<const std::size_t> rows) {
  std::vector<std::uint64_t> ids;
  ids.reserve(rows.size());
  for (std::size_t r : rows) ids.push_back(d.samples[r].id);
  return ids;
}

}  // namespace

void SSLConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("ssl: beta must be nonnegative");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("ssl: lambda must be nonnegative");
  if (batch_size < 2) throw std::invalid_argument("ssl: batch size must be at least 2");
  if (checkpoint_interval == 0 && checkpoint_count == 0) throw std::invalid_argument("ssl: checkpoint count must be positive");
  optimizer.validate();
  augment.validate();
}

std::size_t SSLConfig::interval() const {
  if (checkpoint_interval > 0) return checkpoint_interval;
  const std::size_t total = std::max<std::size_t>(steps * batch_size, 1);
  return std::max<std::size_t>((total + checkpoint_count - 1) / checkpoint_count, 1);
}

void to_json(nlohmann::json& j, const Toggles& t) {
  j = nlohmann::json{{"detect", t.detect}, {"aux_loss", t.aux_loss}, {"aux_bn", t.aux_bn}, {"topk_pl", t.topk_pl}};
}

void from_json(const nlohmann::json& j, Toggles& t) {
  Toggles d;
  t.detect = j.value("detect", d.detect);
  t.aux_loss = j.value("aux_loss", d.aux_loss);
  t.aux_bn = j.value("aux_bn", d.aux_bn);
  t.topk_pl = j.value("topk_pl", d.topk_pl);
}

void to_json(nlohmann::json& j, const SSLConfig& c) {
  j = nlohmann::json{{"beta", c.beta},
                     {"lambda", c.lambda},
                     {"batch_size", c.batch_size},
                     {"steps", c.steps},
                     {"optimizer", c.optimizer},
                     {"backend", c.backend == Backend::kConsistency ? "consistency" : "hard-pseudo"},
                     {"pseudo_threshold", c.pseudo_threshold},
                     {"toggles", c.toggles},
                     {"augment", c.augment},
                     {"checkpoint_interval", c.checkpoint_interval},
                     {"checkpoint_count", c.checkpoint_count}};
}

void from_json(const nlohmann::json& j, SSLConfig& c) {
  SSLConfig d;
  c.beta = j.value("beta", d.beta);
  c.lambda = j.value("lambda", d.lambda);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.steps = j.value("steps", d.steps);
  c.optimizer = j.value("optimizer", d.optimizer);
  const std::string backend = j.value("backend", std::string("consistency"));
  if (backend == "consistency") {
    c.backend = Backend::kConsistency;
  } else if (backend == "hard-pseudo") {
    c.backend = Backend::kHardPseudo;
  } else {
    throw std::invalid_argument("ssl: unknown backend '" + backend + "'");
  }
  c.pseudo_threshold = j.value("pseudo_threshold", d.pseudo_threshold);
  c.toggles = j.value("toggles", d.toggles);
  c.augment = j.value("augment", d.augment);
  c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
  c.checkpoint_count = j.value("checkpoint_count", d.checkpoint_count);
}

namespace {

// Labeled rows, both unlabeled views and (when `out_on_main`) the out-of-class
// rows share one main-branch forward, so they share batch statistics.
// Otherwise out-of-class rows get their own forward on the auxiliary branch.
LossTerms combined_loss(Model& model, Graph& g, const ParamBinding& params, const Batch& batch,
                        const SSLConfig& config, std::uint64_t seed, std::uint64_t step, bool with_out,
                        bool out_on_main) {
  if (batch.x_l.rows() == 0) throw std::invalid_argument("ssl_loss: empty labeled batch");
  if (batch.in_ids.size() != batch.x_in.rows()) throw std::invalid_argument("ssl_loss: one id per unlabeled row");
  const std::size_t nl = batch.x_l.rows(), nu = batch.x_in.rows(), no = with_out ? batch.x_out.rows() : 0;

  Array t1, t2;
  if (nu > 0) {
    AugmentConfig strong = config.augment;
    if (config.backend == Backend::kHardPseudo) strong.noise_sigma *= 2.0;
    t1 = augment_batch(batch.x_in, batch.in_ids, config.augment, seed, step, 1);
    t2 = augment_batch(batch.x_in, batch.in_ids, strong, seed, step, 2);
  }
  const Array none;
  const Array joint = stack_rows({&batch.x_l, &t1, &t2, out_on_main && no > 0 ? &batch.x_out : &none});
  const Heads logits_only{.projection = false, .logits = true};
  const NodeId logits = model.forward(g, params, g.constant(joint), Branch::kMain, Mode::kTrain, logits_only).logits;

  LossTerms terms;
  terms.supervised = ops::soft_cross_entropy(g, ops::slice_rows(g, logits, 0, nl), batch.y_l);
  if (nu == 0) {
    terms.unsupervised = g.constant(Array::scalar(0.0));
  } else {
    terms.in_target = batch.in_target.size() > 0 ? batch.in_target
                                                 : unlabeled_target(row_block(g.value(logits), nl, nl + nu), config);
    const NodeId pred = ops::slice_rows(g, logits, nl + nu, nl + 2 * nu);
    terms.unsupervised = ops::scale(g, ops::soft_cross_entropy(g, pred, terms.in_target), config.beta);
  }
  terms.total = ops::add(g, terms.supervised, terms.unsupervised);
  if (no == 0) return terms;

  const NodeId out_logits =
      out_on_main ? ops::slice_rows(g, logits, nl + 2 * nu, nl + 2 * nu + no)
                  : model.forward(g, params, g.constant(batch.x_out), Branch::kAux, Mode::kTrain, logits_only).logits;
  terms.aux = ops::scale(g, ops::soft_cross_entropy(g, out_logits, batch.q_out), config.lambda);
  terms.total = ops::add(g, terms.total, *terms.aux);
  return terms;
}

}  // namespace

LossTerms ssl_loss(Model& model, Graph& g, const ParamBinding& params, const Batch& batch, const SSLConfig& config,
                   std::uint64_t seed, std::uint64_t step) {
  return combined_loss(model, g, params, batch, config, seed, step, false, false);
}

LossTerms opencos_loss(Model& model, Graph& g, const ParamBinding& params, const Batch& batch, const SSLConfig& config,
                       std::uint64_t seed, std::uint64_t step) {
  const bool with_out = config.toggles.aux_loss && batch.x_out.size() > 0;
  if (with_out) {
    if (batch.q_out.shape() != Shape{batch.x_out.rows(), model.config().num_classes}) {
      throw ShapeError("opencos_loss: soft labels " + shape_string(batch.q_out.shape()) + " do not match " +
                       std::to_string(batch.x_out.rows()) + " out-of-class rows");
    }
    check_soft_labels(batch.q_out);
  }
  return combined_loss(model, g, params, batch, config, seed, step, with_out, !config.toggles.aux_bn);
}

double accuracy(const Model& model, const Dataset& test) {
  if (test.empty()) throw std::invalid_argument("accuracy: empty test set");
  const Array logits = model.infer(test.features()).logits;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test.size(); ++r) {
    const auto row = logits.row_span(r);
    const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
    if (pred == test.samples[r].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

Array one_hot(std::span<const int> labels, std::size_t classes) {
  Array y = Array::zeros({labels.size(), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
      throw std::invalid_argument("one_hot: label " + std::to_string(labels[r]) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
    y.at(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return y;
}

void train(TrainState& state, const TrainData& data, const Dataset& test, const SSLConfig& config, std::uint64_t seed,
           const TrainOptions& options) {
  config.validate();
  if (data.labeled.empty()) throw std::invalid_argument("train: empty labeled set");
  if (data.out_q.rows() != data.out.size() && !data.out.empty()) {
    throw std::invalid_argument("train: one soft label per out-of-class sample required");
  }
  if (config.steps == 0) return;
  const std::size_t classes = state.model.config().num_classes;
  const std::size_t b = config.batch_size;
  const std::size_t interval = config.interval();

  StreamCursor labeled(data.labeled.size(), seed, 0), in(data.in.size(), seed, 1), out(data.out.size(), seed, 2);
  for (std::size_t s = 0; s < state.step; ++s) {
    labeled.skip(b);
    if (!data.in.empty()) in.skip(b);
    if (!data.out.empty()) out.skip(b);
  }
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

  const std::size_t end = state.step + config.steps;
  for (; state.step < end; ++state.step) {
    Batch batch;
    const auto l_rows = labeled.next(b);
    batch.x_l = data.labeled.features(l_rows);
    std::vector<int> y;
    for (std::size_t r : l_rows) y.push_back(data.labeled.samples[r].label);
    batch.y_l = one_hot(y, classes);
    if (!data.in.empty()) {
      const auto rows = in.next(b);
      batch.x_in = data.in.features(rows);
      batch.in_ids = ids_of(data.in, rows);
    }
    if (!data.out.empty() && config.toggles.aux_loss) {
      const auto rows = out.next(b);
      batch.x_out = data.out.features(rows);
      batch.q_out = Array::zeros({b, classes});
      for (std::size_t i = 0; i < b; ++i) {
        const auto src = data.out_q.row_span(rows[i]);
        std::copy(src.begin(), src.end(), batch.q_out.row_span(i).begin());
      }
    } else if (!data.out.empty()) {
      out.skip(b);  // keep the stream aligned across toggle settings
    }

    Graph g;
    const ParamBinding params = state.model.bind(g);
    const LossTerms terms = opencos_loss(state.model, g, params, batch, config, seed, state.step);
    TraceRow row{state.step, g.value(terms.total).item(),
                 g.value(terms.supervised).item() + g.value(terms.unsupervised).item(),
                 terms.aux ? g.value(*terms.aux).item() : 0.0, std::nullopt};
    if (!std::isfinite(row.total)) throw std::runtime_error("train: non-finite loss at step " + std::to_string(state.step));
    state.optimizer.step(state.model.parameters(), params, g.backward(terms.total), state.step - (end - config.steps),
                         config.steps);

    const std::size_t before = state.step * b, after = (state.step + 1) * b;
    if (after / interval > before / interval) {
      Checkpoint cp{state.step + 1, after, accuracy(state.model, test)};
      row.test_accuracy = cp.accuracy;
      state.history.push_back(cp);
      if (options.checkpoint_dir) {
        save_checkpoint(state.model,
                        *options.checkpoint_dir / ("checkpoint_" + std::to_string(state.history.size()) + ".bin"));
      }
    }
    state.trace.push_back(row);
  }
}

AuxOnlyResult aux_only_train(Model& model, const Dataset& out, const Array& q, const SSLConfig& config,
                             std::uint64_t seed) {
  config.validate();
  AuxOnlyResult result;
  if (config.steps == 0) return result;
  if (out.empty()) throw std::invalid_argument("aux_only_train: no out-of-class samples");
  if (q.rows() != out.size()) throw std::invalid_argument("aux_only_train: one soft label per sample required");
  check_soft_labels(q);
  Sgd sgd(config.optimizer);
  StreamCursor cursor(out.size(), seed, 2);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto rows = cursor.next(config.batch_size);
    Array target = Array::zeros({rows.size(), q.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto src = q.row_span(rows[i]);
      std::copy(src.begin(), src.end(), target.row_span(i).begin());
    }
    Graph g;
    const ParamBinding params = model.bind(g);
    const auto fwd = model.forward(g, params, g.constant(out.features(rows)), Branch::kMain, Mode::kTrain,
                                   Heads{.projection = false, .logits = true});
    const NodeId loss = ops::soft_cross_entropy(g, fwd.logits, target);
    const double value = g.value(loss).item();
    if (!std::isfinite(value)) throw std::runtime_error("aux_only_train: non-finite loss at step " + std::to_string(step));
    result.loss_trace.push_back(value);
    sgd.step(model.parameters(), params, g.backward(loss), step, config.steps);
  }
  return result;
}

void write_trace(const std::filesystem::path& path, std::span<const TraceRow> trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "step,total_loss,ssl_loss,aux_loss,test_accuracy\n";
  for (const auto& r : trace) {
    os << r.step << ',' << format_real(r.total) << ',' << format_real(r.ssl) << ',' << format_real(r.aux) << ',';
    if (r.test_accuracy) os << format_real(*r.test_accuracy);
    os << '\n';
  }
}

}  // namespace opencos
