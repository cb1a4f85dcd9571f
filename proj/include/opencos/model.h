#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "opencos/tensor.h"

namespace opencos {

enum class Branch { kMain, kAux };
enum class Mode { kTrain, kEval };

struct ModelConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims = {64};
  std::size_t embed_dim = 32;  // d_e
  std::size_t proj_dim = 16;   // d_p
  std::size_t num_classes = 8;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Parameter {
  std::string name;
  Array value;
};

struct RunningStats {
  Array mean;
  Array var;
};

/// Batch normalization with shared affine parameters and one set of running
/// statistics per branch. A forward only ever touches its own branch's stats.
struct DualBatchNorm {
  std::size_t scale = 0;  // registry index
  std::size_t shift = 0;
  RunningStats main;
  RunningStats aux;

  RunningStats& stats(Branch b) { return b == Branch::kMain ? main : aux; }
  const RunningStats& stats(Branch b) const { return b == Branch::kMain ? main : aux; }
};

struct Dense {
  std::size_t weight = 0;     // [in, out]
  std::ptrdiff_t bias = -1;   // [1, out], -1 when the layer feeds a batch norm
};

/// Parameters as bound into one graph, indexed like the model's registry.
using ParamBinding = std::vector<NodeId>;

/// Which heads a forward pass should build on top of the embedding.
struct Heads {
  bool projection = true;
  bool logits = true;
};

struct ForwardNodes {
  NodeId embedding = 0;
  NodeId projection = 0;
  NodeId logits = 0;
};

struct ForwardValues {
  Array embedding;
  Array projection;
  Array logits;
};

struct BatchNormNodes {
  NodeId normalized;  // before scale and shift
  NodeId output;
};

/// MLP encoder f_e (dense, batch norm, relu per layer), two-layer projection
/// header g over the embedding, and a linear classifier over the embedding.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  std::vector<DualBatchNorm>& batch_norms() { return bns_; }
  const std::vector<DualBatchNorm>& batch_norms() const { return bns_; }

  /// Registry indices of the encoder's parameters (dense weights and batch
  /// norm affine terms).
  std::vector<std::size_t> encoder_parameter_indices() const;

  ParamBinding bind(Graph& g, bool trainable = true) const;

  /// Builds the forward pass into `g`. Train mode normalizes with batch
  /// statistics and folds them into the selected branch's running stats.
  ForwardNodes forward(Graph& g, const ParamBinding& params, NodeId batch, Branch branch, Mode mode,
                       Heads heads = {});

  /// Eval-mode forward on plain arrays. Leaves the model untouched.
  ForwardValues infer(const Array& batch, Branch branch = Branch::kMain) const;

  BatchNormNodes batch_norm(Graph& g, const ParamBinding& params, std::size_t layer, NodeId x, Branch branch,
                            Mode mode);

  bool operator==(const Model& other) const;

 private:
  std::size_t add_param(std::string name, Array value);
  ForwardNodes forward_eval(Graph& g, const ParamBinding& params, NodeId batch, Branch branch, Heads heads) const;
  ForwardNodes add_heads(Graph& g, const ParamBinding& params, NodeId embedding, Heads heads) const;
  void check_batch(const Array& x) const;
  NodeId eval_normalize(Graph& g, std::size_t layer, NodeId x, Branch branch) const;
  NodeId dense(Graph& g, const ParamBinding& params, const Dense& layer, NodeId x) const;
  NodeId eval_batch_norm(Graph& g, const ParamBinding& params, std::size_t layer, NodeId x, Branch branch) const;

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::vector<Dense> encoder_;
  std::vector<DualBatchNorm> bns_;
  Dense proj_hidden_;
  Dense proj_out_;
  Dense classifier_;
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

/// Closed-form parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

/// u.v / (|u| |v|), or 0 when either norm is below 1e-12.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace opencos
