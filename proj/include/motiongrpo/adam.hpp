#pragma once

#include "motiongrpo/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string>

namespace mgrpo {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are created lazily on the first step.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig config) : config_(config) {}

  const AdamConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) noexcept { config_.learning_rate = lr; }
  std::uint64_t step_count() const noexcept { return step_; }
  const Gradients& first_moment() const noexcept { return m_; }
  const Gradients& second_moment() const noexcept { return v_; }

  /// Reinstates saved moments, e.g. when resuming a run.
  void restore(std::uint64_t step, Gradients m, Gradients v) {
    if (m.size() != v.size()) throw DimensionError("adam: moment lists differ in length");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i].shape() != v[i].shape()) throw DimensionError("adam: moment shapes differ");
    }
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  /// Descends along `grads`. Rejects the whole update if any gradient entry is non-finite.
  void step(const ParamRefs& params, const Gradients& grads) {
    if (params.size() != grads.size()) {
      throw DimensionError("adam: " + std::to_string(params.size()) + " parameters but " +
                           std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->shape() != grads[i].shape()) {
        throw DimensionError("adam: gradient " + std::to_string(i) + " has shape " +
                             shape_string(grads[i].shape()) + ", parameter has " +
                             shape_string(params[i]->shape()));
      }
      if (!grads[i].all_finite()) {
        std::size_t bad = 0;
        for (double g : grads[i].data()) bad += std::isfinite(g) ? 0 : 1;
        throw NumericError("adam: rejected update, gradient " + std::to_string(i) + " has " +
                           std::to_string(bad) + " non-finite entries");
      }
    }
    if (m_.empty()) {
      m_ = zero_gradients(params);
      v_ = zero_gradients(params);
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto m = m_[i].flat();
      auto v = v_[i].flat();
      const auto g = grads[i].flat();
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
      params[i]->flat().array() -=
          config_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.epsilon);
    }
  }

 private:
  AdamConfig config_;
  Gradients m_;
  Gradients v_;
  std::uint64_t step_ = 0;
};

}  // namespace mgrpo
