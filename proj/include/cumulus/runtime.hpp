#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cumulus/graph.hpp"
#include "cumulus/model_io.hpp"
#include "cumulus/quant_params.hpp"
#include "cumulus/tensor.hpp"

namespace cumulus {

enum class ExecMode : uint8_t { Inference, Training };

struct ForwardOptions {
  ExecMode mode = ExecMode::Inference;
  Rng* rng = nullptr;  // required iff mode is Training and the graph has dropout
  /// When set, weights/biases and every node output are pushed onto their
  /// int8 grids during the forward pass (QAT simulation and the int8
  /// bit-exactness reference). Terminal sigmoid stays in float.
  const QuantConfig* fake_quant = nullptr;
  bool parallel = true;
};

/// Everything backward needs: per-node outputs (post fake-quant when
/// enabled), pre-quantization values for straight-through masks, dropout keep
/// masks and pooling argmax. Dropout masks exist only in training mode;
/// inference dropout is the identity.
struct ActivationCache {
  ExecMode mode = ExecMode::Inference;
  bool fake_quant = false;
  std::vector<std::string> node_ids;  // identity of the graph this came from
  std::map<std::string, Tensor> outputs;
  std::map<std::string, Tensor> pre_quant;
  std::map<std::string, std::vector<uint8_t>> dropout_keep;
  std::map<std::string, std::vector<int64_t>> pool_argmax;
};

struct ForwardResult {
  Tensor output;
  ActivationCache cache;
};

/// Forward execution of a graph. Input dtype selects the arithmetic (f32 for
/// production, f64 for gradient checking and the quantization reference);
/// weights must match. Deterministic in inference mode and bitwise
/// independent of worker count.
ForwardResult forward(const Graph& g, const WeightMap& weights, const Tensor& input,
                      const ForwardOptions& opts = {});

WeightMap weights_to_f64(const WeightMap& w);
WeightMap weights_to_f32(const WeightMap& w);

/// Elementwise helpers shared with training.
Tensor apply_sigmoid(const Tensor& x);

}  // namespace cumulus
