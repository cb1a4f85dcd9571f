#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

#include "opencos/model.h"
#include "opencos/tensor.h"

namespace opencos {

struct SgdConfig {
  double learning_rate = 0.03;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 0.0;
  bool cosine_decay = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const SgdConfig& c);
void from_json(const nlohmann::json& j, SgdConfig& c);

/// SGD with (Nesterov) momentum over a model's parameter registry.
class Sgd {
 public:
  explicit Sgd(SgdConfig config) : config_(config) { config_.validate(); }

  /// Applies one update. `binding` maps registry slots to graph nodes;
  /// `trainable` restricts the update to a subset (empty means all).
  void step(std::vector<Parameter>& params, const ParamBinding& binding, const Gradients& grads,
            std::size_t step_index, std::size_t total_steps, std::span<const std::size_t> trainable = {});

  double learning_rate(std::size_t step_index, std::size_t total_steps) const;

  const std::vector<Array>& velocity() const { return velocity_; }

 private:
  void update_one(Parameter& p, std::size_t slot, const Array& grad, double lr);

  SgdConfig config_;
  std::vector<Array> velocity_;
};

}  // namespace opencos
