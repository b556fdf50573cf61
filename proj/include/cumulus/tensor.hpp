#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cumulus/errors.hpp"

namespace cumulus {

enum class DType : uint8_t { F32 = 0, F64 = 1, I8 = 2, I32 = 3 };

const char* dtype_name(DType d);

/// Per-tensor symmetric int8 parameters: scale = 2^-exponent, zero point 0.
/// Representable range is [-128 * scale, 127 * scale].
struct QuantParams {
  int exponent = 0;

  double scale() const { return std::ldexp(1.0, -exponent); }
  bool operator==(const QuantParams&) const = default;

  static constexpr int kQMin = -128;
  static constexpr int kQMax = 127;
};

/// Extents, NHWC order for rank-4 tensors (batch, rows, cols, channels).
using Shape = std::vector<int64_t>;

/// Element count; throws ShapeError on non-positive or overflowing extents.
int64_t shape_numel(const Shape& shape);

bool shape_equal(const Shape& a, const Shape& b);
std::string shape_str(const Shape& shape);

/// Dense contiguous tensor. Immutable by convention once built (kernels write
/// only into tensors they own); safe to share across threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor full(Shape shape, float value);
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0f); }
  static Tensor full_f64(Shape shape, double value);
  static Tensor zeros_f64(Shape shape) { return full_f64(std::move(shape), 0.0); }
  static Tensor from_f32(Shape shape, std::vector<float> data);
  static Tensor from_f64(Shape shape, std::vector<double> data);
  static Tensor from_i8(Shape shape, std::vector<int8_t> data, QuantParams qp);
  static Tensor from_i32(Shape shape, std::vector<int32_t> data);

  DType dtype() const { return dtype_; }
  const Shape& shape() const { return shape_; }
  int64_t numel() const;
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  bool empty() const { return shape_.empty(); }

  std::span<float> f();
  std::span<const float> f() const;
  std::span<double> d();
  std::span<const double> d() const;
  std::span<int8_t> q();
  std::span<const int8_t> q() const;
  std::span<int32_t> i();
  std::span<const int32_t> i() const;

  const std::optional<QuantParams>& quant() const { return quant_; }
  /// Copy with replaced quant params; only valid for i8 tensors.
  Tensor with_quant(QuantParams qp) const;

  /// Same data, new extents; products must match.
  Tensor reshaped(Shape shape) const;

  Tensor to_f64() const;
  Tensor to_f32() const;

  /// Flat offset for NHWC rank-4 indexing.
  int64_t idx4(int64_t n, int64_t h, int64_t w, int64_t c) const {
    return ((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
  }

 private:
  Shape shape_;
  DType dtype_ = DType::F32;
  std::variant<std::vector<float>, std::vector<double>, std::vector<int8_t>,
               std::vector<int32_t>>
      data_;
  std::optional<QuantParams> quant_;
};

/// Counter-based deterministic generator. draw_at(i) is a pure function of
/// (seed, i), so parallel consumers can draw by index and any platform
/// reproduces the same stream.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {}

  uint64_t draw_at(uint64_t index) const;
  double unit_at(uint64_t index) const;  // [0, 1)

  uint64_t next_u64() { return draw_at(counter_++); }
  double next_unit() { return unit_at(counter_++); }
  /// Uniform integer in [0, n) via widening multiply; n must be > 0.
  uint64_t next_below(uint64_t n);

  /// Independent substream for a named purpose (augmentation, dropout, ...).
  Rng fork(uint64_t stream) const;

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t counter_ = 0;
};

enum class InitScheme { GlorotUniform, Zeros };

/// Weight initialization. Glorot draws U(-a, a), a = sqrt(6/(fan_in+fan_out));
/// fans follow the [kh, kw, in, out] kernel and [in, out] matrix layouts.
Tensor init_weights(const Shape& shape, Rng& rng, InitScheme scheme);

}  // namespace cumulus
