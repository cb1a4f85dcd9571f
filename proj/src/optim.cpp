#include "opencos/optim.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace opencos {

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("sgd: learning rate must be finite and nonnegative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("sgd: weight decay must be nonnegative");
}

void to_json(nlohmann::json& j, const SgdConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"momentum", c.momentum},
                     {"nesterov", c.nesterov},
                     {"weight_decay", c.weight_decay},
                     {"cosine_decay", c.cosine_decay}};
}

void from_json(const nlohmann::json& j, SgdConfig& c) {
  SgdConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.momentum = j.value("momentum", d.momentum);
  c.nesterov = j.value("nesterov", d.nesterov);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.cosine_decay = j.value("cosine_decay", d.cosine_decay);
}

double Sgd::learning_rate(std::size_t step_index, std::size_t total_steps) const {
  if (!config_.cosine_decay || total_steps == 0) return config_.learning_rate;
  const double progress = static_cast<double>(step_index) / static_cast<double>(total_steps);
  return config_.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void Sgd::step(std::vector<Parameter>& params, const ParamBinding& binding, const Gradients& grads,
               std::size_t step_index, std::size_t total_steps, std::span<const std::size_t> trainable) {
  if (binding.size() != params.size()) throw std::invalid_argument("sgd: binding does not cover the registry");
  if (velocity_.empty()) {
    for (const auto& p : params) velocity_.push_back(Array::zeros(p.value.shape()));
  }
  const double lr = learning_rate(step_index, total_steps);
  if (trainable.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) update_one(params[i], i, grads[binding[i]], lr);
  } else {
    for (std::size_t i : trainable) update_one(params.at(i), i, grads[binding.at(i)], lr);
  }
}

void Sgd::update_one(Parameter& p, std::size_t slot, const Array& grad, double lr) {
  auto w = p.value.data();
  auto v = velocity_[slot].data();
  const double mu = config_.momentum;
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double g = grad[k] + config_.weight_decay * w[k];
    v[k] = mu * v[k] + g;
    const double d = config_.nesterov ? g + mu * v[k] : v[k];
    w[k] -= lr * d;
  }
}

}  // namespace opencos
