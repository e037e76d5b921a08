#include "geocount/optim.hpp"

#include <cmath>

#include "geocount/errors.hpp"

namespace geocount {

namespace {

void check_hyper(const NadamHyper& hyper) {
  if (!(hyper.learning_rate > 0.0))
    throw ConfigError("learning_rate must be positive");
  if (!(hyper.beta1 > 0.0 && hyper.beta1 < 1.0))
    throw ConfigError("beta1 must be in (0,1)");
  if (!(hyper.beta2 > 0.0 && hyper.beta2 < 1.0))
    throw ConfigError("beta2 must be in (0,1)");
  if (!(hyper.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (hyper.clip_norm < 0.0)
    throw ConfigError("clip_norm must be non-negative");
}

}  // namespace

NadamState init_state(std::size_t parameter_count, const NadamHyper& hyper) {
  check_hyper(hyper);
  NadamState state;
  state.hyper = hyper;
  state.m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count));
  state.v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count));
  state.t = 0;
  return state;
}

NadamState init_state(const ModelWeights& weights, const NadamHyper& hyper) {
  return init_state(trainable_size(weights), hyper);
}

void nadam_step(NadamState& state, Eigen::VectorXd& weights,
                const Eigen::VectorXd& grads) {
  if (weights.size() != state.m.size() || grads.size() != state.m.size())
    throw ShapeError("nadam_step: weights/grads do not match the state size");
  const NadamHyper& h = state.hyper;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  state.m = h.beta1 * state.m + (1.0 - h.beta1) * grads;
  state.v =
      (h.beta2 * state.v.array() + (1.0 - h.beta2) * grads.array().square())
          .matrix();
  const double m_corr = 1.0 - std::pow(h.beta1, t + 1.0);
  const double g_corr = 1.0 - std::pow(h.beta1, t);
  const double v_corr = 1.0 - std::pow(h.beta2, t);
  const Eigen::ArrayXd m_tilde =
      h.beta1 * state.m.array() / m_corr + (1.0 - h.beta1) * grads.array() / g_corr;
  const Eigen::ArrayXd v_hat = state.v.array() / v_corr;
  weights.array() -= h.learning_rate * m_tilde / (v_hat.sqrt() + h.epsilon);
}

void nadam_step(NadamState& state, ModelWeights& weights,
                const ModelWeights& grads) {
  for (const auto& view : tensor_views(grads)) {
    if (!view.trainable) continue;
    for (std::size_t i = 0; i < view.size; ++i)
      if (!std::isfinite(view.data[i]))
        throw NumericError("non-finite gradient in tensor '" + view.name + "'");
  }
  Eigen::VectorXd flat_w = flatten_trainable(weights);
  Eigen::VectorXd flat_g = flatten_trainable(grads);
  if (state.hyper.clip_norm > 0.0) {
    const double norm = flat_g.norm();
    if (norm > state.hyper.clip_norm)
      flat_g *= state.hyper.clip_norm / norm;
  }
  nadam_step(state, flat_w, flat_g);
  set_trainable(weights, flat_w);
}

}  // namespace geocount
