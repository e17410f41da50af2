#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"

namespace raki {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// A trainable block: contiguous values and a gradient of the same length.
struct ParamView {
  double *value;
  double const *grad;
  Eigen::Index size;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<Eigen::VectorXd> m;
  std::vector<Eigen::VectorXd> v;
};

/// One bias-corrected Adam update. Weight decay is the L2 form (added to the
/// gradient). Moment buffers are sized on the first call and must keep the
/// same block layout afterwards.
inline void adam_step(std::span<ParamView const> params, AdamState &state) {
  if (state.m.empty()) {
    for (auto const &p : params) {
      state.m.push_back(Eigen::VectorXd::Zero(p.size));
      state.v.push_back(Eigen::VectorXd::Zero(p.size));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: parameter block count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size) throw ShapeError("adam_step: parameter block size changed");
  }

  auto const &c = state.config;
  ++state.step;
  double const bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  double const bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::Map<Eigen::VectorXd> w(params[i].value, params[i].size);
    Eigen::Map<Eigen::VectorXd const> g0(params[i].grad, params[i].size);
    Eigen::VectorXd const g = c.weight_decay != 0.0 ? (g0 + c.weight_decay * w).eval() : g0.eval();
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g.cwiseAbs2();
    w.array() -= c.learning_rate * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + c.epsilon);
  }
}

} // namespace raki
