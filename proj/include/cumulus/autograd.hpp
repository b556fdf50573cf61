#pragma once

#include "cumulus/runtime.hpp"

namespace cumulus {

/// Mean binary cross-entropy, -[y ln p + (1-y) ln(1-p)] with p clamped to
/// [1e-7, 1 - 1e-7]. Throws ArgumentError on empty or mismatched batches.
double bce_loss(const Tensor& pred, const Tensor& target);

/// d(bce_loss)/d(pred), same dtype/shape as pred.
Tensor bce_grad(const Tensor& pred, const Tensor& target);

/// Reverse-mode gradients for every kernel and bias, including the L2 term
/// 2*lambda*w. The cache must come from a training-mode forward on the same
/// graph (StateError otherwise). When the cache was built with fake-quant
/// simulation, pass the same config: quantized tensors get straight-through
/// gradients, passed inside the representable range and zeroed outside.
WeightMap backward(const Graph& g, const WeightMap& weights, const ActivationCache& cache,
                   const Tensor& output_grad, const QuantConfig* fake_quant = nullptr,
                   bool parallel = true);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  WeightMap m;  // first moments, allocated on first step
  WeightMap v;  // second moments
  int64_t step = 0;
};

/// Standard bias-corrected Adam update, in place.
void adam_step(WeightMap& params, const WeightMap& grads, AdamState& state,
               const AdamConfig& cfg);

}  // namespace cumulus
