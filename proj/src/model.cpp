#include "opencos/model.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "opencos/random.h"

namespace opencos {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr char kCheckpointMagic[] = "opencos-checkpoint";

Array uniform_init(Rng& rng, std::size_t fan_in, Shape shape) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Array a = Array::zeros(std::move(shape));
  for (double& v : a.data()) v = dist(rng);
  return a;
}

void column_moments(const Array& x, std::vector<double>& mean, std::vector<double>& var) {
  const std::size_t n = x.rows(), c = x.cols();
  mean.assign(c, 0.0);
  var.assign(c, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) mean[j] += x.at(r, j);
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x.at(r, j) - mean[j];
      var[j] += d * d;
    }
  }
  for (double& v : var) v /= static_cast<double>(n);
}

void write_le(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_le(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("checkpoint: truncated tensor data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

// Every persisted tensor in manifest order: parameters, then per batch norm
// the main and auxiliary running statistics.
std::vector<std::pair<std::string, Array*>> tensor_table(Model& model) {
  std::vector<std::pair<std::string, Array*>> table;
  for (auto& p : model.parameters()) table.emplace_back(p.name, &p.value);
  auto& bns = model.batch_norms();
  for (std::size_t i = 0; i < bns.size(); ++i) {
    const std::string prefix = "encoder." + std::to_string(i) + ".bn.";
    table.emplace_back(prefix + "main.running_mean", &bns[i].main.mean);
    table.emplace_back(prefix + "main.running_var", &bns[i].main.var);
    table.emplace_back(prefix + "aux.running_mean", &bns[i].aux.mean);
    table.emplace_back(prefix + "aux.running_var", &bns[i].aux.var);
  }
  return table;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("model config: input_dim must be positive");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw std::invalid_argument("model config: hidden dims must be positive");
  }
  if (embed_dim == 0) throw std::invalid_argument("model config: embed_dim must be positive");
  if (proj_dim == 0) throw std::invalid_argument("model config: proj_dim must be positive");
  if (num_classes < 2) throw std::invalid_argument("model config: need at least 2 classes");
  if (!(bn_epsilon > 0.0)) throw std::invalid_argument("model config: bn_epsilon must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw std::invalid_argument("model config: bn_momentum must be in (0,1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_dim", c.input_dim},   {"hidden_dims", c.hidden_dims}, {"embed_dim", c.embed_dim},
                     {"proj_dim", c.proj_dim},     {"num_classes", c.num_classes}, {"bn_epsilon", c.bn_epsilon},
                     {"bn_momentum", c.bn_momentum}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.input_dim = j.value("input_dim", d.input_dim);
  c.hidden_dims = j.value("hidden_dims", d.hidden_dims);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.proj_dim = j.value("proj_dim", d.proj_dim);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.bn_epsilon = j.value("bn_epsilon", d.bn_epsilon);
  c.bn_momentum = j.value("bn_momentum", d.bn_momentum);
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng = keyed_rng(seed, {tag(Stream::kInit)});

  std::size_t in = config_.input_dim;
  std::vector<std::size_t> widths = config_.hidden_dims;
  widths.push_back(config_.embed_dim);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::size_t out = widths[i];
    const std::string prefix = "encoder." + std::to_string(i);
    Dense layer;
    layer.weight = add_param(prefix + ".weight", uniform_init(rng, in, {in, out}));
    encoder_.push_back(layer);

    DualBatchNorm bn;
    bn.scale = add_param(prefix + ".bn.scale", Array::filled({1, out}, 1.0));
    bn.shift = add_param(prefix + ".bn.shift", Array::zeros({1, out}));
    bn.main = RunningStats{Array::zeros({1, out}), Array::filled({1, out}, 1.0)};
    bn.aux = bn.main;
    bns_.push_back(std::move(bn));
    in = out;
  }

  const std::size_t de = config_.embed_dim;
  proj_hidden_.weight = add_param("projection.0.weight", uniform_init(rng, de, {de, de}));
  proj_hidden_.bias = static_cast<std::ptrdiff_t>(add_param("projection.0.bias", uniform_init(rng, de, {1, de})));
  proj_out_.weight = add_param("projection.1.weight", uniform_init(rng, de, {de, config_.proj_dim}));
  proj_out_.bias =
      static_cast<std::ptrdiff_t>(add_param("projection.1.bias", uniform_init(rng, de, {1, config_.proj_dim})));
  classifier_.weight = add_param("classifier.weight", uniform_init(rng, de, {de, config_.num_classes}));
  classifier_.bias =
      static_cast<std::ptrdiff_t>(add_param("classifier.bias", uniform_init(rng, de, {1, config_.num_classes})));
}

std::size_t Model::add_param(std::string name, Array value) {
  params_.push_back(Parameter{std::move(name), std::move(value)});
  return params_.size() - 1;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<std::size_t> Model::encoder_parameter_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    idx.push_back(encoder_[i].weight);
    idx.push_back(bns_[i].scale);
    idx.push_back(bns_[i].shift);
  }
  return idx;
}

ParamBinding Model::bind(Graph& g, bool trainable) const {
  ParamBinding binding;
  binding.reserve(params_.size());
  for (const auto& p : params_) binding.push_back(trainable ? g.variable(p.value) : g.constant(p.value));
  return binding;
}

NodeId Model::dense(Graph& g, const ParamBinding& params, const Dense& layer, NodeId x) const {
  NodeId y = ops::matmul(g, x, params.at(layer.weight));
  if (layer.bias >= 0) y = ops::add(g, y, params.at(static_cast<std::size_t>(layer.bias)));
  return y;
}

BatchNormNodes Model::batch_norm(Graph& g, const ParamBinding& params, std::size_t layer, NodeId x, Branch branch,
                                 Mode mode) {
  DualBatchNorm& bn = bns_.at(layer);
  NodeId normalized;
  if (mode == Mode::kTrain) {
    if (g.value(x).rows() < 2) throw std::invalid_argument("batch norm: train mode needs at least 2 rows");
    std::vector<double> mean, var;
    column_moments(g.value(x), mean, var);
    RunningStats& rs = bn.stats(branch);
    const double m = config_.bn_momentum;
    for (std::size_t j = 0; j < mean.size(); ++j) {
      rs.mean[j] = (1.0 - m) * rs.mean[j] + m * mean[j];
      rs.var[j] = (1.0 - m) * rs.var[j] + m * var[j];
    }
    normalized = ops::standardize_columns(g, x, config_.bn_epsilon);
  } else {
    normalized = eval_normalize(g, layer, x, branch);
  }
  const NodeId out = ops::add(g, ops::mul(g, normalized, params.at(bn.scale)), params.at(bn.shift));
  return {normalized, out};
}

NodeId Model::eval_normalize(Graph& g, std::size_t layer, NodeId x, Branch branch) const {
  const RunningStats& rs = bns_.at(layer).stats(branch);
  Array neg_mean = rs.mean;
  for (double& v : neg_mean.data()) v = -v;
  Array inv_std = rs.var;
  for (double& v : inv_std.data()) v = 1.0 / std::sqrt(v + config_.bn_epsilon);
  return ops::mul(g, ops::add(g, x, g.constant(std::move(neg_mean))), g.constant(std::move(inv_std)));
}

NodeId Model::eval_batch_norm(Graph& g, const ParamBinding& params, std::size_t layer, NodeId x, Branch branch) const {
  const DualBatchNorm& bn = bns_.at(layer);
  const NodeId normalized = eval_normalize(g, layer, x, branch);
  return ops::add(g, ops::mul(g, normalized, params.at(bn.scale)), params.at(bn.shift));
}

ForwardNodes Model::forward(Graph& g, const ParamBinding& params, NodeId batch, Branch branch, Mode mode,
                            Heads heads) {
  if (mode == Mode::kEval) return forward_eval(g, params, batch, branch, heads);
  check_batch(g.value(batch));
  if (g.value(batch).rows() < 2) throw std::invalid_argument("forward: train mode needs at least 2 rows");
  NodeId h = batch;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    h = dense(g, params, encoder_[i], h);
    h = ops::relu(g, batch_norm(g, params, i, h, branch, mode).output);
  }
  return add_heads(g, params, h, heads);
}

ForwardNodes Model::forward_eval(Graph& g, const ParamBinding& params, NodeId batch, Branch branch,
                                 Heads heads) const {
  check_batch(g.value(batch));
  NodeId h = batch;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    h = dense(g, params, encoder_[i], h);
    h = ops::relu(g, eval_batch_norm(g, params, i, h, branch));
  }
  return add_heads(g, params, h, heads);
}

void Model::check_batch(const Array& x) const {
  if (x.rank() != 2 || x.cols() != config_.input_dim) {
    throw ShapeError("forward: batch shape " + shape_string(x.shape()) + " does not match input_dim " +
                     std::to_string(config_.input_dim));
  }
}

ForwardNodes Model::add_heads(Graph& g, const ParamBinding& params, NodeId embedding, Heads heads) const {
  ForwardNodes out;
  out.embedding = out.projection = out.logits = embedding;
  if (heads.projection) {
    out.projection = dense(g, params, proj_out_, ops::relu(g, dense(g, params, proj_hidden_, embedding)));
  }
  if (heads.logits) out.logits = dense(g, params, classifier_, embedding);
  return out;
}

ForwardValues Model::infer(const Array& batch, Branch branch) const {
  Graph g;
  const ParamBinding params = bind(g, false);
  const auto nodes = forward_eval(g, params, g.constant(batch), branch, {});
  return ForwardValues{g.value(nodes.embedding), g.value(nodes.projection), g.value(nodes.logits)};
}

bool Model::operator==(const Model& other) const {
  if (!(config_ == other.config_) || params_.size() != other.params_.size() || bns_.size() != other.bns_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name || !(params_[i].value == other.params_[i].value)) return false;
  }
  for (std::size_t i = 0; i < bns_.size(); ++i) {
    if (!(bns_[i].main.mean == other.bns_[i].main.mean) || !(bns_[i].main.var == other.bns_[i].main.var) ||
        !(bns_[i].aux.mean == other.bns_[i].aux.mean) || !(bns_[i].aux.var == other.bns_[i].aux.var)) {
      return false;
    }
  }
  return true;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) { return Model(config, seed); }

std::size_t expected_parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  std::size_t in = config.input_dim;
  std::vector<std::size_t> widths = config.hidden_dims;
  widths.push_back(config.embed_dim);
  for (std::size_t out : widths) {
    n += in * out + 2 * out;
    in = out;
  }
  const std::size_t de = config.embed_dim;
  n += de * de + de + de * config.proj_dim + config.proj_dim;
  n += de * config.num_classes + config.num_classes;
  return n;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ShapeError("cosine_similarity: dimensions " + std::to_string(u.size()) + " and " + std::to_string(v.size()) +
                     " differ");
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu < 1e-12 || nv < 1e-12) return 0.0;
  return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  auto table = tensor_table(const_cast<Model&>(model));
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = model.config();
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, arr] : table) manifest["tensors"].push_back({{"name", name}, {"shape", arr->shape()}});
  const std::string header = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os << kCheckpointMagic << '\n' << header.size() << '\n' << header;
  for (const auto& entry : table) {
    for (double v : entry.second->data()) write_le(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::string magic;
  std::getline(is, magic);
  if (magic != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic in " + path.string());
  std::string len_line;
  std::getline(is, len_line);
  const std::size_t len = std::stoul(len_line);
  std::string header(len, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("checkpoint: truncated manifest");
  const auto manifest = nlohmann::json::parse(header);
  if (manifest.at("format_version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format version");
  }
  Model model(manifest.at("config").get<ModelConfig>(), 0);
  auto table = tensor_table(model);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != table.size()) throw std::runtime_error("checkpoint: tensor count does not match config");
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& entry = tensors[i];
    if (entry.at("name").get<std::string>() != table[i].first ||
        entry.at("shape").get<Shape>() != table[i].second->shape()) {
      throw std::runtime_error("checkpoint: unexpected tensor " + entry.at("name").get<std::string>());
    }
    for (double& v : table[i].second->data()) v = read_le(is);
  }
  return model;
}

}  // namespace opencos
