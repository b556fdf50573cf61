#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cumulus/graph.hpp"
#include "cumulus/model_io.hpp"
#include "cumulus/quant_params.hpp"
#include "cumulus/runtime.hpp"

namespace cumulus {

/// Largest exponent f with max_abs representable: floor(log2(127 / max_abs)).
/// All-zero tensors fall back to f = 7.
int exponent_for_max_abs(double max_abs);

/// Max-abs calibration over >= 1 float forward passes: one QuantParams per
/// node output (per-tensor granularity) and per kernel.
QuantConfig calibrate(const Graph& g, const WeightMap& weights,
                      const std::vector<Tensor>& calib_inputs, bool parallel = true);

struct QuantNodeInfo {
  Tensor kernel_i8;
  Tensor bias_i32;
  int weight_exp = 0;
  int bias_exp = 0;  // weight_exp + input_exp
  int out_exp = 0;
  int shift = 0;  // bias_exp - out_exp, the requantization right-shift
  int64_t acc_bound = 0;  // worst-case |int32 accumulator| including bias
};

/// Same topology as the float graph; int8 kernels, int32 biases, shift-only
/// requantization.
struct QuantizedModel {
  Graph graph;
  int input_exp = 0;
  std::map<std::string, int> out_exp;  // every node output
  std::map<std::string, QuantNodeInfo> nodes;  // parameterized nodes
};

/// int8 weights = clamp(round(w / 2^-f_w)); int32 bias on the 2^-(f_w+f_in)
/// grid. QuantError if a bias leaves int32 or a worst-case accumulator leaves
/// int32.
QuantizedModel quantize_graph(const Graph& g, const WeightMap& weights,
                              const QuantConfig& cfg);

Tensor quantize_input(const Tensor& x, QuantParams qp);
Tensor dequantize(const Tensor& q);

/// Integer tensors per node, captured for the bit-exactness oracle.
using Int8Trace = std::map<std::string, Tensor>;

/// int8 execution: int8 operands, int32 accumulators, bias add in int32,
/// rounding arithmetic shift requantization (half away from zero), integer
/// ReLU; the terminal sigmoid runs in float on the dequantized logit. Input
/// must carry the model's input QuantParams (QuantError otherwise).
Tensor forward_int8(const QuantizedModel& qm, const Tensor& input_i8,
                    bool parallel = true, Int8Trace* trace = nullptr);

/// Quantized package: model.json with exponents/shifts, weights_i8.cfw,
/// biases_i32.cfw.
void save_quantized(const std::string& dir, const QuantizedModel& qm);
QuantizedModel load_quantized(const std::string& dir);
bool is_quantized_package(const std::string& dir);

}  // namespace cumulus
