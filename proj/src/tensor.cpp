#include "cumulus/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace cumulus {

const char* dtype_name(DType d) {
  switch (d) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::I8: return "i8";
    case DType::I32: return "i32";
  }
  return "?";
}

int64_t shape_numel(const Shape& shape) {
  if (shape.empty()) throw ShapeError("empty shape");
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 1) {
      throw ShapeError("non-positive extent " + std::to_string(e) + " in shape " +
                       shape_str(shape));
    }
    if (n > std::numeric_limits<int64_t>::max() / e) {
      throw ShapeError("extent overflow in shape " + shape_str(shape));
    }
    n *= e;
  }
  return n;
}

bool shape_equal(const Shape& a, const Shape& b) { return a == b; }

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor Tensor::full(Shape shape, float value) {
  int64_t n = shape_numel(shape);
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::F32;
  t.data_ = std::vector<float>(static_cast<size_t>(n), value);
  return t;
}

Tensor Tensor::full_f64(Shape shape, double value) {
  int64_t n = shape_numel(shape);
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::F64;
  t.data_ = std::vector<double>(static_cast<size_t>(n), value);
  return t;
}

namespace {
template <typename V>
void check_size(const Shape& shape, const V& data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
}
}  // namespace

Tensor Tensor::from_f32(Shape shape, std::vector<float> data) {
  check_size(shape, data);
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::F32;
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::from_f64(Shape shape, std::vector<double> data) {
  check_size(shape, data);
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::F64;
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::from_i8(Shape shape, std::vector<int8_t> data, QuantParams qp) {
  check_size(shape, data);
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::I8;
  t.data_ = std::move(data);
  t.quant_ = qp;
  return t;
}

Tensor Tensor::from_i32(Shape shape, std::vector<int32_t> data) {
  check_size(shape, data);
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::I32;
  t.data_ = std::move(data);
  return t;
}

int64_t Tensor::numel() const {
  return std::visit([](const auto& v) { return static_cast<int64_t>(v.size()); }, data_);
}

namespace {
[[noreturn]] void dtype_mismatch(DType want, DType got) {
  throw ShapeError(std::string("tensor dtype is ") + dtype_name(got) + ", expected " +
                   dtype_name(want));
}
}  // namespace

std::span<float> Tensor::f() {
  if (dtype_ != DType::F32) dtype_mismatch(DType::F32, dtype_);
  return std::get<std::vector<float>>(data_);
}
std::span<const float> Tensor::f() const {
  if (dtype_ != DType::F32) dtype_mismatch(DType::F32, dtype_);
  return std::get<std::vector<float>>(data_);
}
std::span<double> Tensor::d() {
  if (dtype_ != DType::F64) dtype_mismatch(DType::F64, dtype_);
  return std::get<std::vector<double>>(data_);
}
std::span<const double> Tensor::d() const {
  if (dtype_ != DType::F64) dtype_mismatch(DType::F64, dtype_);
  return std::get<std::vector<double>>(data_);
}
std::span<int8_t> Tensor::q() {
  if (dtype_ != DType::I8) dtype_mismatch(DType::I8, dtype_);
  return std::get<std::vector<int8_t>>(data_);
}
std::span<const int8_t> Tensor::q() const {
  if (dtype_ != DType::I8) dtype_mismatch(DType::I8, dtype_);
  return std::get<std::vector<int8_t>>(data_);
}
std::span<int32_t> Tensor::i() {
  if (dtype_ != DType::I32) dtype_mismatch(DType::I32, dtype_);
  return std::get<std::vector<int32_t>>(data_);
}
std::span<const int32_t> Tensor::i() const {
  if (dtype_ != DType::I32) dtype_mismatch(DType::I32, dtype_);
  return std::get<std::vector<int32_t>>(data_);
}

Tensor Tensor::with_quant(QuantParams qp) const {
  if (dtype_ != DType::I8) throw ShapeError("quant params only apply to i8 tensors");
  Tensor t = *this;
  t.quant_ = qp;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::to_f64() const {
  if (dtype_ == DType::F64) return *this;
  auto src = f();
  std::vector<double> out(src.begin(), src.end());
  return Tensor::from_f64(shape_, std::move(out));
}

Tensor Tensor::to_f32() const {
  if (dtype_ == DType::F32) return *this;
  auto src = d();
  std::vector<float> out(src.size());
  for (size_t i = 0; i < src.size(); ++i) out[i] = static_cast<float>(src[i]);
  return Tensor::from_f32(shape_, std::move(out));
}

namespace {
// splitmix64 finalizer
uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;
}  // namespace

uint64_t Rng::draw_at(uint64_t index) const {
  return mix64(seed_ + (index + 1) * kGolden);
}

double Rng::unit_at(uint64_t index) const {
  return static_cast<double>(draw_at(index) >> 11) * 0x1.0p-53;
}

uint64_t Rng::next_below(uint64_t n) {
  // Lemire widening multiply; bias is negligible for dataset-sized n.
  unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<uint64_t>(wide >> 64);
}

Rng Rng::fork(uint64_t stream) const {
  return Rng(mix64(seed_ ^ mix64(stream + kGolden)));
}

Tensor init_weights(const Shape& shape, Rng& rng, InitScheme scheme) {
  int64_t n = shape_numel(shape);
  std::vector<float> data(static_cast<size_t>(n), 0.0f);
  if (scheme == InitScheme::GlorotUniform) {
    double fan_in = 0, fan_out = 0;
    if (shape.size() == 4) {  // [kh, kw, in, out]
      double rf = static_cast<double>(shape[0] * shape[1]);
      fan_in = rf * static_cast<double>(shape[2]);
      fan_out = rf * static_cast<double>(shape[3]);
    } else if (shape.size() == 2) {  // [in, out]
      fan_in = static_cast<double>(shape[0]);
      fan_out = static_cast<double>(shape[1]);
    } else {
      fan_in = fan_out = static_cast<double>(n);
    }
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (size_t i = 0; i < data.size(); ++i) {
      data[i] = static_cast<float>((2.0 * rng.next_unit() - 1.0) * a);
    }
  }
  return Tensor::from_f32(shape, std::move(data));
}

}  // namespace cumulus
