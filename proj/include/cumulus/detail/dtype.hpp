#pragma once

#include <span>
#include <vector>

#include "cumulus/tensor.hpp"

namespace cumulus::detail {

template <typename T>
std::span<const T> data_of(const Tensor& t);
template <>
inline std::span<const float> data_of<float>(const Tensor& t) {
  return t.f();
}
template <>
inline std::span<const double> data_of<double>(const Tensor& t) {
  return t.d();
}

template <typename T>
std::span<T> data_of_mut(Tensor& t);
template <>
inline std::span<float> data_of_mut<float>(Tensor& t) {
  return t.f();
}
template <>
inline std::span<double> data_of_mut<double>(Tensor& t) {
  return t.d();
}

template <typename T>
Tensor make_tensor(Shape shape, std::vector<T> data);
template <>
inline Tensor make_tensor<float>(Shape shape, std::vector<float> data) {
  return Tensor::from_f32(std::move(shape), std::move(data));
}
template <>
inline Tensor make_tensor<double>(Shape shape, std::vector<double> data) {
  return Tensor::from_f64(std::move(shape), std::move(data));
}

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::F32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::F64;
}

}  // namespace cumulus::detail
