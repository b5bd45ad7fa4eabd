#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>

#include "deeptruck/error.hpp"

namespace deeptruck {

struct AdagradConfig {
  double learning_rate = 0.05;
  double epsilon = 1e-8;
  std::optional<double> clip_norm = 5.0;  // global L2 norm, applied before accumulation
};

struct AdagradState {
  Eigen::VectorXd accum;  // running sum of squared gradients

  explicit AdagradState(Eigen::Index n = 0) : accum(Eigen::VectorXd::Zero(n)) {}
};

/// One descent step. A non-finite gradient throws before anything is modified.
/// Returns the norm of the gradient before clipping.
inline double adagrad_update(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdagradState& state,
                             const AdagradConfig& cfg) {
  if (grad.size() != params.size() || state.accum.size() != params.size())
    throw Error(ErrorKind::Shape, "adagrad: parameter, gradient and accumulator sizes differ");
  if (!grad.allFinite()) throw Error(ErrorKind::InvalidInput, "adagrad: non-finite gradient");
  const double norm = grad.norm();
  double scale = 1.0;
  if (cfg.clip_norm && norm > *cfg.clip_norm) scale = *cfg.clip_norm / norm;
  const Eigen::ArrayXd g = grad.array() * scale;
  state.accum.array() += g.square();
  params.array() -= cfg.learning_rate * g / (state.accum.array() + cfg.epsilon).sqrt();
  return norm;
}

}  // namespace deeptruck
