#include "cumulus/runtime.hpp"

#include <cmath>

#include "cumulus/errors.hpp"
#include "cumulus/kernels.hpp"

namespace cumulus {

namespace {

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename T>
std::span<const T> data_of(const Tensor& t);
template <>
std::span<const float> data_of<float>(const Tensor& t) {
  return t.f();
}
template <>
std::span<const double> data_of<double>(const Tensor& t) {
  return t.d();
}

template <typename T>
Tensor make_tensor(Shape shape, std::vector<T> data);
template <>
Tensor make_tensor<float>(Shape shape, std::vector<float> data) {
  return Tensor::from_f32(std::move(shape), std::move(data));
}
template <>
Tensor make_tensor<double>(Shape shape, std::vector<double> data) {
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

template <typename T>
struct Executor {
  const Graph& g;
  const WeightMap& weights;
  const ForwardOptions& opts;
  std::map<std::string, Shape> shapes;
  ActivationCache cache;

  const LayerWeights& layer_weights(const std::string& id) {
    auto it = weights.find(id);
    if (it == weights.end()) throw ModelIOError("missing weights for node " + id);
    if (it->second.kernel.dtype() != dtype_of<T>()) {
      throw ShapeError("weight dtype does not match input dtype for node " + id);
    }
    return it->second;
  }

  QuantParams out_qp(const std::string& id) const {
    auto it = opts.fake_quant->node_out.find(id);
    if (it == opts.fake_quant->node_out.end())
      throw QuantError("missing output quant params for node " + id);
    return it->second;
  }

  QuantParams weight_qp(const std::string& id) const {
    auto it = opts.fake_quant->weight.find(id);
    if (it == opts.fake_quant->weight.end())
      throw QuantError("missing weight quant params for node " + id);
    return it->second;
  }

  // Kernel and bias as the arithmetic sees them: pushed onto their int8/int32
  // grids when fake-quant simulation is on.
  std::pair<Tensor, Tensor> effective_weights(const NodeSpec& n) {
    const LayerWeights& lw = layer_weights(n.id);
    if (!opts.fake_quant) return {lw.kernel, lw.bias};
    QuantParams wq = weight_qp(n.id);
    int f_in = out_qp(n.inputs[0]).exponent;
    double bias_scale = std::ldexp(1.0, -(wq.exponent + f_in));
    return {fake_quant(lw.kernel, wq), fake_quant_i32_grid(lw.bias, bias_scale)};
  }

  Tensor run_conv(const NodeSpec& n, const Tensor& x) {
    const auto& p = n.conv();
    const Shape& is = shapes.at(n.inputs[0]);
    auto geom = kernels::make_conv_geom(is[1], is[2], is[3], p.out_channels, p.kernel_h,
                                        p.kernel_w, p.stride, p.padding);
    auto [kernel, bias] = effective_weights(n);
    if (kernel.dim(2) != geom.in_c) {
      throw ShapeError("node " + n.id + " kernel expects " +
                       std::to_string(kernel.dim(2)) + " input channels, got " +
                       std::to_string(geom.in_c));
    }
    const Shape& os = shapes.at(n.id);
    std::vector<T> y(static_cast<size_t>(shape_numel(os)));
    if (opts.parallel) {
      kernels::par::conv2d<T>(geom, data_of<T>(x).data(), data_of<T>(kernel).data(),
                              data_of<T>(bias).data(), y.data());
    } else {
      kernels::ref::conv2d<T>(geom, data_of<T>(x).data(), data_of<T>(kernel).data(),
                              data_of<T>(bias).data(), y.data());
    }
    return make_tensor<T>(os, std::move(y));
  }

  Tensor run_tconv(const NodeSpec& n, const Tensor& x) {
    const auto& p = n.tconv();
    const Shape& is = shapes.at(n.inputs[0]);
    auto geom = kernels::make_tconv_geom(is[1], is[2], is[3], p.out_channels, p.kernel_h,
                                         p.kernel_w, p.stride);
    auto [kernel, bias] = effective_weights(n);
    if (kernel.dim(2) != geom.in_c) {
      throw ShapeError("node " + n.id + " kernel/input channel mismatch");
    }
    const Shape& os = shapes.at(n.id);
    std::vector<T> y(static_cast<size_t>(shape_numel(os)));
    if (opts.parallel) {
      kernels::par::tconv2d<T>(geom, data_of<T>(x).data(), data_of<T>(kernel).data(),
                               data_of<T>(bias).data(), y.data());
    } else {
      kernels::ref::tconv2d<T>(geom, data_of<T>(x).data(), data_of<T>(kernel).data(),
                               data_of<T>(bias).data(), y.data());
    }
    return make_tensor<T>(os, std::move(y));
  }

  Tensor run_dense(const NodeSpec& n, const Tensor& x) {
    auto [kernel, bias] = effective_weights(n);
    int64_t in = x.numel();
    int64_t units = n.dense().units;
    if (kernel.dim(0) != in) {
      throw ShapeError("node " + n.id + " dense expects " + std::to_string(kernel.dim(0)) +
                       " inputs, got " + std::to_string(in));
    }
    std::vector<T> y(static_cast<size_t>(units));
    if (opts.parallel) {
      kernels::par::dense<T>(in, units, data_of<T>(x).data(), data_of<T>(kernel).data(),
                             data_of<T>(bias).data(), y.data());
    } else {
      kernels::ref::dense<T>(in, units, data_of<T>(x).data(), data_of<T>(kernel).data(),
                             data_of<T>(bias).data(), y.data());
    }
    return make_tensor<T>(Shape{1, units}, std::move(y));
  }

  Tensor run_pool(const NodeSpec& n, const Tensor& x) {
    const auto& p = n.pool();
    const Shape& is = shapes.at(n.inputs[0]);
    auto geom = kernels::make_pool_geom(is[1], is[2], is[3], p.pool_h, p.pool_w,
                                        p.stride_h, p.stride_w, p.padding);
    const Shape& os = shapes.at(n.id);
    std::vector<T> y(static_cast<size_t>(shape_numel(os)));
    int64_t* argmax_ptr = nullptr;
    std::vector<int64_t> argmax;
    if (opts.mode == ExecMode::Training) {
      argmax.resize(y.size());
      argmax_ptr = argmax.data();
    }
    if (opts.parallel) {
      kernels::par::maxpool2d<T>(geom, data_of<T>(x).data(), y.data(), argmax_ptr);
    } else {
      kernels::ref::maxpool2d<T>(geom, data_of<T>(x).data(), y.data(), argmax_ptr);
    }
    if (argmax_ptr) cache.pool_argmax[n.id] = std::move(argmax);
    return make_tensor<T>(os, std::move(y));
  }

  Tensor run_concat(const NodeSpec& n) {
    const Shape& os = shapes.at(n.id);
    std::vector<T> y(static_cast<size_t>(shape_numel(os)));
    int64_t hw = os[1] * os[2];
    int64_t out_c = os[3];
    int64_t offset = 0;
    for (const auto& in_id : n.inputs) {
      const Tensor& x = cache.outputs.at(in_id);
      int64_t c = x.shape()[3];
      auto src = data_of<T>(x);
      for (int64_t p = 0; p < hw; ++p) {
        for (int64_t k = 0; k < c; ++k) y[p * out_c + offset + k] = src[p * c + k];
      }
      offset += c;
    }
    return make_tensor<T>(os, std::move(y));
  }

  Tensor run_dropout(const NodeSpec& n, const Tensor& x) {
    double rate = n.dropout().rate;
    if (rate < 0.0 || rate >= 1.0)
      throw ArgumentError("dropout rate must be in [0,1) at node " + n.id);
    if (opts.mode == ExecMode::Inference) return x;  // identity
    if (!opts.rng)
      throw ArgumentError("training-mode forward through dropout needs an rng");
    auto src = data_of<T>(x);
    std::vector<T> y(src.size());
    std::vector<uint8_t> keep(src.size());
    // Inverted dropout: kept units are scaled by 1/(1-rate) so inference is
    // the identity.
    T inv = static_cast<T>(1.0 / (1.0 - rate));
    for (size_t i = 0; i < src.size(); ++i) {
      keep[i] = opts.rng->next_unit() >= rate ? 1 : 0;
      y[i] = keep[i] ? src[i] * inv : T(0);
    }
    cache.dropout_keep[n.id] = std::move(keep);
    return make_tensor<T>(x.shape(), std::move(y));
  }

  Tensor run_activation(const NodeSpec& n, const Tensor& x) {
    auto src = data_of<T>(x);
    std::vector<T> y(src.size());
    if (n.activation().kind == ActKind::Relu) {
      for (size_t i = 0; i < src.size(); ++i) y[i] = src[i] > T(0) ? src[i] : T(0);
    } else {
      // Sigmoid evaluated in double regardless of T so the int8 executor's
      // float post-processing sees identical probabilities.
      for (size_t i = 0; i < src.size(); ++i) {
        y[i] = static_cast<T>(sigmoid_d(static_cast<double>(src[i])));
      }
    }
    return make_tensor<T>(x.shape(), std::move(y));
  }

  ForwardResult run(const Tensor& input) {
    cache.mode = opts.mode;
    cache.fake_quant = opts.fake_quant != nullptr;
    cache.node_ids = g.topo_order();
    for (const auto& id : cache.node_ids) {
      const NodeSpec& n = g.node(id);
      Tensor out;
      switch (n.kind) {
        case NodeKind::Input:
          out = input;
          break;
        case NodeKind::Conv2D:
          out = run_conv(n, cache.outputs.at(n.inputs[0]));
          break;
        case NodeKind::TransposedConv2D:
          out = run_tconv(n, cache.outputs.at(n.inputs[0]));
          break;
        case NodeKind::MaxPool2D:
          out = run_pool(n, cache.outputs.at(n.inputs[0]));
          break;
        case NodeKind::Dense:
          out = run_dense(n, cache.outputs.at(n.inputs[0]));
          break;
        case NodeKind::Flatten:
          out = cache.outputs.at(n.inputs[0]).reshaped(shapes.at(id));
          break;
        case NodeKind::Concat:
          out = run_concat(n);
          break;
        case NodeKind::Dropout:
          out = run_dropout(n, cache.outputs.at(n.inputs[0]));
          break;
        case NodeKind::Activation:
          out = run_activation(n, cache.outputs.at(n.inputs[0]));
          break;
      }
      bool is_sigmoid =
          n.kind == NodeKind::Activation && n.activation().kind == ActKind::Sigmoid;
      if (opts.fake_quant && !is_sigmoid) {
        if (opts.mode == ExecMode::Training) cache.pre_quant[id] = out;
        out = fake_quant(out, out_qp(id));
      }
      cache.outputs[id] = std::move(out);
    }
    Tensor output = cache.outputs.at(g.output_id());
    return {std::move(output), std::move(cache)};
  }
};

}  // namespace

ForwardResult forward(const Graph& g, const WeightMap& weights, const Tensor& input,
                      const ForwardOptions& opts) {
  if (input.rank() != 4 || input.dim(0) != 1) {
    throw ShapeError("forward input must be rank 4 with batch 1, got " +
                     shape_str(input.shape()));
  }
  if (input.dim(3) != g.input_shape[3]) {
    throw ShapeError("input has " + std::to_string(input.dim(3)) + " channels, graph " +
                     g.arch_name + " expects " + std::to_string(g.input_shape[3]));
  }
  if (input.dtype() == DType::F32) {
    Executor<float> ex{g, weights, opts, infer_shapes(g, input.shape()), {}};
    return ex.run(input);
  }
  if (input.dtype() == DType::F64) {
    Executor<double> ex{g, weights, opts, infer_shapes(g, input.shape()), {}};
    return ex.run(input);
  }
  throw ShapeError("forward input must be f32 or f64");
}

WeightMap weights_to_f64(const WeightMap& w) {
  WeightMap out;
  for (const auto& [id, lw] : w) {
    out.emplace(id, LayerWeights{lw.kernel.to_f64(), lw.bias.to_f64()});
  }
  return out;
}

WeightMap weights_to_f32(const WeightMap& w) {
  WeightMap out;
  for (const auto& [id, lw] : w) {
    out.emplace(id, LayerWeights{lw.kernel.to_f32(), lw.bias.to_f32()});
  }
  return out;
}

Tensor apply_sigmoid(const Tensor& x) {
  if (x.dtype() == DType::F64) {
    std::vector<double> y(static_cast<size_t>(x.numel()));
    auto src = x.d();
    for (size_t i = 0; i < y.size(); ++i) y[i] = sigmoid_d(src[i]);
    return Tensor::from_f64(x.shape(), std::move(y));
  }
  std::vector<float> y(static_cast<size_t>(x.numel()));
  auto src = x.f();
  for (size_t i = 0; i < y.size(); ++i) {
    y[i] = static_cast<float>(sigmoid_d(static_cast<double>(src[i])));
  }
  return Tensor::from_f32(x.shape(), std::move(y));
}

}  // namespace cumulus
