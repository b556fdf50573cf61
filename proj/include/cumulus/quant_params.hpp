#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cumulus/tensor.hpp"

namespace cumulus {

/// Calibrated per-tensor exponents: one QuantParams per node output (node id,
/// including the Input node) and one per kernel of a parameterized node.
/// Bias grids are derived (f_bias = f_weight + f_input) and int32-ranged.
struct QuantConfig {
  std::map<std::string, QuantParams> node_out;
  std::map<std::string, QuantParams> weight;
};

/// round half away from zero, the single rounding rule used everywhere.
double round_half_away(double v);

/// quantize-then-dequantize on an arbitrary grid.
double fake_quant_value(double x, double scale, int64_t qmin, int64_t qmax);

/// int8 fake quantization: clamp(round(x / s), -128, 127) * s, elementwise.
/// f32 and f64 tensors keep their dtype.
Tensor fake_quant(const Tensor& x, QuantParams qp);

/// Same grid push for int32-ranged tensors (bias simulation).
Tensor fake_quant_i32_grid(const Tensor& x, double scale);

}  // namespace cumulus
