#pragma once

#include <Eigen/Dense>
#include <cstddef>

#include "geocount/net.hpp"

namespace geocount {

struct NadamHyper {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global-norm gradient clipping threshold; 0 disables clipping.
  double clip_norm = 0.0;
};

/// Nesterov-Adam moments over the flat trainable parameter vector.
struct NadamState {
  NadamHyper hyper;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;
};

NadamState init_state(std::size_t parameter_count, const NadamHyper& hyper = {});
NadamState init_state(const ModelWeights& weights, const NadamHyper& hyper = {});

/// One Nadam update. With t the post-increment timestep:
///   m <- b1 m + (1-b1) g
///   v <- b2 v + (1-b2) g^2
///   m_hat  = m / (1 - b1^(t+1))
///   m_tilde = b1 m_hat + (1-b1) g / (1 - b1^t)
///   v_hat  = v / (1 - b2^t)
///   w <- w - lr * m_tilde / (sqrt(v_hat) + eps)
void nadam_step(NadamState& state, Eigen::VectorXd& weights,
                const Eigen::VectorXd& grads);

/// Named-tensor wrapper: checks every gradient tensor for non-finite
/// entries (NumericError naming the tensor), applies optional clipping,
/// and updates the trainable tensors of weights in place.
void nadam_step(NadamState& state, ModelWeights& weights,
                const ModelWeights& grads);

}  // namespace geocount
