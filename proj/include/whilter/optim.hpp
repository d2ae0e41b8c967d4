#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "whilter/error.hpp"
#include "whilter/tensor.hpp"

namespace whilter {

template <std::floating_point T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

/// Exponential decay: lr(epoch) = eta0 * gamma^epoch.
struct LrSchedule {
  double eta0 = 1e-5;
  double gamma = 1.0;

  double lr_at(int epoch) const {
    if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
    return eta0 * std::pow(gamma, epoch);
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Off by default; neither is part of the reference recipe.
  double weight_decay = 0.0;
  double clip_norm = 0.0;
};

template <std::floating_point T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction over a fixed, ordered parameter list.
template <std::floating_point T>
class Adam {
 public:
  explicit Adam(std::vector<NamedParam<T>> params, AdamConfig config = {})
      : params_(std::move(params)), config_(config) {
    state_.beta1 = config.beta1;
    state_.beta2 = config.beta2;
    state_.epsilon = config.epsilon;
    for (const auto& p : params_) {
      state_.m.emplace_back(p.tensor.numel(), T{0});
      state_.v.emplace_back(p.tensor.numel(), T{0});
    }
  }

  const AdamState<T>& state() const { return state_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }

  void load_state(AdamState<T> state) {
    if (state.m.size() != params_.size() || state.v.size() != params_.size()) {
      throw DataError("optimizer state has " + std::to_string(state.m.size()) + " slots, model has " +
                      std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (state.m[i].size() != params_[i].tensor.numel() || state.v[i].size() != params_[i].tensor.numel()) {
        throw DataError("optimizer state shape mismatch for " + params_[i].name);
      }
    }
    config_.beta1 = state.beta1;
    config_.beta2 = state.beta2;
    config_.epsilon = state.epsilon;
    state_ = std::move(state);
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// One update from the gradients currently held by the parameters.
  void step(double lr) {
    for (const auto& p : params_) {
      if (!p.tensor.has_grad()) continue;
      for (T g : p.tensor.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
    }
    double clip = 1.0;
    if (config_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (T g : p.tensor.grad()) sq += static_cast<double>(g) * g;
      }
      const double norm = std::sqrt(sq);
      if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
    }

    ++state_.step;
    const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.epsilon;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& tensor = params_[i].tensor;
      auto values = tensor.data();
      const bool has = tensor.has_grad();
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      for (std::size_t j = 0; j < values.size(); ++j) {
        double g = has ? static_cast<double>(tensor.grad()[j]) * clip : 0.0;
        if (config_.weight_decay > 0.0) g += config_.weight_decay * values[j];
        const double mj = b1 * m[j] + (1.0 - b1) * g;
        const double vj = b2 * v[j] + (1.0 - b2) * g * g;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = lr * (mj / corr1) / (std::sqrt(vj / corr2) + eps);
        values[j] = static_cast<T>(values[j] - update);
      }
    }
  }

 private:
  std::vector<NamedParam<T>> params_;
  AdamConfig config_;
  AdamState<T> state_;
};

}  // namespace whilter
