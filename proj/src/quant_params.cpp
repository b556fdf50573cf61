#include "cumulus/quant_params.hpp"

#include <cmath>

#include "cumulus/errors.hpp"

namespace cumulus {

double round_half_away(double v) {
  return v >= 0.0 ? std::floor(v + 0.5) : std::ceil(v - 0.5);
}

double fake_quant_value(double x, double scale, int64_t qmin, int64_t qmax) {
  double q = round_half_away(x / scale);
  if (q < static_cast<double>(qmin)) q = static_cast<double>(qmin);
  if (q > static_cast<double>(qmax)) q = static_cast<double>(qmax);
  return q * scale;
}

Tensor fake_quant(const Tensor& x, QuantParams qp) {
  double s = qp.scale();
  if (x.dtype() == DType::F32) {
    std::vector<float> out(static_cast<size_t>(x.numel()));
    auto src = x.f();
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<float>(
          fake_quant_value(static_cast<double>(src[i]), s, QuantParams::kQMin,
                           QuantParams::kQMax));
    }
    return Tensor::from_f32(x.shape(), std::move(out));
  }
  if (x.dtype() == DType::F64) {
    std::vector<double> out(static_cast<size_t>(x.numel()));
    auto src = x.d();
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = fake_quant_value(src[i], s, QuantParams::kQMin, QuantParams::kQMax);
    }
    return Tensor::from_f64(x.shape(), std::move(out));
  }
  throw ShapeError("fake_quant needs an f32 or f64 tensor");
}

Tensor fake_quant_i32_grid(const Tensor& x, double scale) {
  constexpr int64_t kMin = INT32_MIN;
  constexpr int64_t kMax = INT32_MAX;
  if (x.dtype() == DType::F32) {
    std::vector<float> out(static_cast<size_t>(x.numel()));
    auto src = x.f();
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<float>(
          fake_quant_value(static_cast<double>(src[i]), scale, kMin, kMax));
    }
    return Tensor::from_f32(x.shape(), std::move(out));
  }
  if (x.dtype() == DType::F64) {
    std::vector<double> out(static_cast<size_t>(x.numel()));
    auto src = x.d();
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = fake_quant_value(src[i], scale, kMin, kMax);
    }
    return Tensor::from_f64(x.shape(), std::move(out));
  }
  throw ShapeError("fake_quant_i32_grid needs an f32 or f64 tensor");
}

}  // namespace cumulus
