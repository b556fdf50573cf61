#include "cumulus/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cumulus/blob.hpp"
#include "cumulus/errors.hpp"
#include "cumulus/kernels.hpp"

#include <json.hpp>

namespace cumulus {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

int exponent_for_max_abs(double max_abs) {
  if (!(max_abs > 0.0)) return 7;  // documented all-zero fallback
  int f = static_cast<int>(std::floor(std::log2(127.0 / max_abs)));
  while (std::ldexp(max_abs, f) > 127.0) --f;
  while (std::ldexp(max_abs, f + 1) <= 127.0) ++f;
  return std::clamp(f, -62, 62);
}

namespace {

double max_abs_of(const Tensor& t) {
  double m = 0.0;
  if (t.dtype() == DType::F32) {
    for (float v : t.f()) m = std::max(m, std::abs(static_cast<double>(v)));
  } else {
    for (double v : t.d()) m = std::max(m, std::abs(v));
  }
  return m;
}

}  // namespace

QuantConfig calibrate(const Graph& g, const WeightMap& weights,
                      const std::vector<Tensor>& calib_inputs, bool parallel) {
  if (calib_inputs.empty()) throw ArgumentError("calibrate needs >= 1 input");
  QuantConfig cfg;
  for (const auto& [id, lw] : weights) {
    cfg.weight[id] = QuantParams{exponent_for_max_abs(max_abs_of(lw.kernel))};
  }
  std::map<std::string, double> out_max;
  for (const Tensor& input : calib_inputs) {
    ForwardOptions opts;
    opts.mode = ExecMode::Inference;
    opts.parallel = parallel;
    auto res = forward(g, weights, input, opts);
    for (const auto& [id, t] : res.cache.outputs) {
      double m = max_abs_of(t);
      auto it = out_max.find(id);
      if (it == out_max.end()) {
        out_max[id] = m;
      } else {
        it->second = std::max(it->second, m);
      }
    }
  }
  for (const auto& [id, m] : out_max) {
    cfg.node_out[id] = QuantParams{exponent_for_max_abs(m)};
  }
  return cfg;
}

namespace {

int8_t quant_i8(double x, double scale) {
  double q = round_half_away(x / scale);
  q = std::clamp(q, -128.0, 127.0);
  return static_cast<int8_t>(q);
}

int out_exp_of(const QuantConfig& cfg, const std::string& id) {
  auto it = cfg.node_out.find(id);
  if (it == cfg.node_out.end()) throw QuantError("missing quant params for node " + id);
  return it->second.exponent;
}

}  // namespace

QuantizedModel quantize_graph(const Graph& g, const WeightMap& weights,
                              const QuantConfig& cfg) {
  QuantizedModel qm;
  qm.graph = g;
  qm.input_exp = out_exp_of(cfg, g.input_id());
  for (const auto& id : g.topo_order()) qm.out_exp[id] = out_exp_of(cfg, id);

  auto shapes = infer_shapes(g, g.input_shape);
  for (const auto& id : g.topo_order()) {
    const NodeSpec& n = g.node(id);
    if (!is_parameterized(n.kind)) continue;
    auto wit = weights.find(id);
    if (wit == weights.end()) throw ModelIOError("missing weights for node " + id);
    auto wqit = cfg.weight.find(id);
    if (wqit == cfg.weight.end())
      throw QuantError("missing weight quant params for node " + id);

    QuantNodeInfo info;
    info.weight_exp = wqit->second.exponent;
    info.out_exp = qm.out_exp.at(id);
    int in_exp = qm.out_exp.at(n.inputs[0]);
    info.bias_exp = info.weight_exp + in_exp;
    info.shift = info.bias_exp - info.out_exp;

    const Tensor& k = wit->second.kernel;
    double ws = std::ldexp(1.0, -info.weight_exp);
    std::vector<int8_t> ki(static_cast<size_t>(k.numel()));
    auto kf = k.f();
    for (size_t i = 0; i < ki.size(); ++i) {
      ki[i] = quant_i8(static_cast<double>(kf[i]), ws);
    }
    info.kernel_i8 =
        Tensor::from_i8(k.shape(), std::move(ki), QuantParams{info.weight_exp});

    const Tensor& b = wit->second.bias;
    double bs = std::ldexp(1.0, -info.bias_exp);
    std::vector<int32_t> bi(static_cast<size_t>(b.numel()));
    auto bf = b.f();
    for (size_t i = 0; i < bi.size(); ++i) {
      double q = round_half_away(static_cast<double>(bf[i]) / bs);
      if (q < static_cast<double>(INT32_MIN) || q > static_cast<double>(INT32_MAX)) {
        throw QuantError("bias overflows int32 at node " + id);
      }
      bi[i] = static_cast<int32_t>(q);
    }
    info.bias_i32 = Tensor::from_i32(b.shape(), std::move(bi));

    // Static worst-case accumulator: 127 * sum(|w|) + |b| per output channel.
    auto ks = info.kernel_i8.q();
    auto bsint = info.bias_i32.i();
    int64_t out_c = k.shape().back();
    int64_t taps = k.numel() / out_c;
    int64_t worst = 0;
    for (int64_t oc = 0; oc < out_c; ++oc) {
      int64_t sum = 0;
      for (int64_t t = 0; t < taps; ++t) {
        sum += std::abs(static_cast<int64_t>(ks[static_cast<size_t>(t * out_c + oc)]));
      }
      int64_t bound =
          127 * sum + std::abs(static_cast<int64_t>(bsint[static_cast<size_t>(oc)]));
      worst = std::max(worst, bound);
    }
    info.acc_bound = worst;
    if (worst > INT32_MAX) {
      throw QuantError("worst-case accumulator exceeds int32 at node " + id);
    }
    qm.nodes.emplace(id, std::move(info));
  }
  (void)shapes;
  return qm;
}

Tensor quantize_input(const Tensor& x, QuantParams qp) {
  double s = qp.scale();
  std::vector<int8_t> q(static_cast<size_t>(x.numel()));
  if (x.dtype() == DType::F32) {
    auto src = x.f();
    for (size_t i = 0; i < q.size(); ++i) q[i] = quant_i8(src[i], s);
  } else {
    auto src = x.d();
    for (size_t i = 0; i < q.size(); ++i) q[i] = quant_i8(src[i], s);
  }
  return Tensor::from_i8(x.shape(), std::move(q), qp);
}

Tensor dequantize(const Tensor& q) {
  if (q.dtype() != DType::I8 || !q.quant()) {
    throw QuantError("dequantize needs an i8 tensor with quant params");
  }
  double s = q.quant()->scale();
  std::vector<float> out(static_cast<size_t>(q.numel()));
  auto src = q.q();
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(src[i]) * s);
  }
  return Tensor::from_f32(q.shape(), std::move(out));
}

namespace {

// Multiply by 2^-shift with round half away from zero; negative shifts are
// exact left shifts. Large magnitudes saturate without undefined behavior.
int64_t requant_value(int64_t v, int shift) {
  if (shift == 0) return v;
  if (shift < 0) {
    if (shift < -40) return v == 0 ? 0 : (v > 0 ? INT64_MAX / 2 : INT64_MIN / 2);
    return v << (-shift);
  }
  if (shift > 62) return 0;
  int64_t half = int64_t(1) << (shift - 1);
  return v >= 0 ? (v + half) >> shift : -(((-v) + half) >> shift);
}

int8_t clamp_i8(int64_t v) {
  return static_cast<int8_t>(std::clamp<int64_t>(v, -128, 127));
}

Tensor requant_i8(const Tensor& t, int from_exp, int to_exp) {
  int shift = from_exp - to_exp;
  auto src = t.q();
  std::vector<int8_t> out(src.size());
  for (size_t i = 0; i < src.size(); ++i) {
    out[i] = clamp_i8(requant_value(src[i], shift));
  }
  return Tensor::from_i8(t.shape(), std::move(out), QuantParams{to_exp});
}

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor forward_int8(const QuantizedModel& qm, const Tensor& input, bool parallel,
                    Int8Trace* trace) {
  if (input.dtype() != DType::I8 || !input.quant()) {
    throw QuantError("forward_int8 input must be an i8 tensor with quant params");
  }
  if (input.quant()->exponent != qm.input_exp) {
    throw QuantError("input exponent " + std::to_string(input.quant()->exponent) +
                     " does not match model input exponent " +
                     std::to_string(qm.input_exp));
  }
  if (input.rank() != 4 || input.dim(0) != 1 ||
      input.dim(3) != qm.graph.input_shape[3]) {
    throw ShapeError("forward_int8 input shape mismatch");
  }
  const Graph& g = qm.graph;
  auto shapes = infer_shapes(g, input.shape());
  std::map<std::string, Tensor> outs;
  Tensor final_out;

  for (const auto& id : g.topo_order()) {
    const NodeSpec& n = g.node(id);
    int out_exp = qm.out_exp.at(id);
    Tensor out;
    switch (n.kind) {
      case NodeKind::Input:
        out = requant_i8(input, qm.input_exp, out_exp);  // shift 0 by construction
        break;
      case NodeKind::Conv2D: {
        const QuantNodeInfo& info = qm.nodes.at(id);
        const Tensor& x = outs.at(n.inputs[0]);
        const Shape& is = x.shape();
        const auto& p = n.conv();
        auto geom = kernels::make_conv_geom(is[1], is[2], is[3], p.out_channels,
                                            p.kernel_h, p.kernel_w, p.stride, p.padding);
        const Shape& os = shapes.at(id);
        std::vector<int32_t> acc(static_cast<size_t>(shape_numel(os)));
        if (parallel) {
          kernels::par::conv2d_i8(geom, x.q().data(), info.kernel_i8.q().data(),
                                  info.bias_i32.i().data(), acc.data());
        } else {
          kernels::ref::conv2d_i8(geom, x.q().data(), info.kernel_i8.q().data(),
                                  info.bias_i32.i().data(), acc.data());
        }
        std::vector<int8_t> q(acc.size());
        for (size_t i = 0; i < acc.size(); ++i) {
          q[i] = clamp_i8(requant_value(acc[i], info.shift));
        }
        out = Tensor::from_i8(os, std::move(q), QuantParams{out_exp});
        break;
      }
      case NodeKind::TransposedConv2D: {
        const QuantNodeInfo& info = qm.nodes.at(id);
        const Tensor& x = outs.at(n.inputs[0]);
        const Shape& is = x.shape();
        const auto& p = n.tconv();
        auto geom = kernels::make_tconv_geom(is[1], is[2], is[3], p.out_channels,
                                             p.kernel_h, p.kernel_w, p.stride);
        const Shape& os = shapes.at(id);
        std::vector<int32_t> acc(static_cast<size_t>(shape_numel(os)));
        if (parallel) {
          kernels::par::tconv2d_i8(geom, x.q().data(), info.kernel_i8.q().data(),
                                   info.bias_i32.i().data(), acc.data());
        } else {
          kernels::ref::tconv2d_i8(geom, x.q().data(), info.kernel_i8.q().data(),
                                   info.bias_i32.i().data(), acc.data());
        }
        std::vector<int8_t> q(acc.size());
        for (size_t i = 0; i < acc.size(); ++i) {
          q[i] = clamp_i8(requant_value(acc[i], info.shift));
        }
        out = Tensor::from_i8(os, std::move(q), QuantParams{out_exp});
        break;
      }
      case NodeKind::Dense: {
        const QuantNodeInfo& info = qm.nodes.at(id);
        const Tensor& x = outs.at(n.inputs[0]);
        int64_t in = x.numel();
        int64_t units = n.dense().units;
        if (info.kernel_i8.dim(0) != in) {
          throw ShapeError("dense " + id + " input length mismatch");
        }
        std::vector<int32_t> acc(static_cast<size_t>(units));
        if (parallel) {
          kernels::par::dense_i8(in, units, x.q().data(), info.kernel_i8.q().data(),
                                 info.bias_i32.i().data(), acc.data());
        } else {
          kernels::ref::dense_i8(in, units, x.q().data(), info.kernel_i8.q().data(),
                                 info.bias_i32.i().data(), acc.data());
        }
        std::vector<int8_t> q(acc.size());
        for (size_t i = 0; i < acc.size(); ++i) {
          q[i] = clamp_i8(requant_value(acc[i], info.shift));
        }
        out = Tensor::from_i8(Shape{1, units}, std::move(q), QuantParams{out_exp});
        break;
      }
      case NodeKind::MaxPool2D: {
        const Tensor& x = outs.at(n.inputs[0]);
        const Shape& is = x.shape();
        const auto& p = n.pool();
        auto geom = kernels::make_pool_geom(is[1], is[2], is[3], p.pool_h, p.pool_w,
                                            p.stride_h, p.stride_w, p.padding);
        const Shape& os = shapes.at(id);
        std::vector<int8_t> y(static_cast<size_t>(shape_numel(os)));
        if (parallel) {
          kernels::par::maxpool2d_i8(geom, x.q().data(), y.data());
        } else {
          kernels::ref::maxpool2d_i8(geom, x.q().data(), y.data());
        }
        Tensor pooled =
            Tensor::from_i8(os, std::move(y), QuantParams{x.quant()->exponent});
        out = requant_i8(pooled, x.quant()->exponent, out_exp);
        break;
      }
      case NodeKind::Flatten: {
        const Tensor& x = outs.at(n.inputs[0]);
        out = requant_i8(x.reshaped(shapes.at(id)), x.quant()->exponent, out_exp);
        break;
      }
      case NodeKind::Dropout: {  // identity at inference
        const Tensor& x = outs.at(n.inputs[0]);
        out = requant_i8(x, x.quant()->exponent, out_exp);
        break;
      }
      case NodeKind::Concat: {
        const Shape& os = shapes.at(id);
        std::vector<int8_t> y(static_cast<size_t>(shape_numel(os)));
        int64_t hw = os[1] * os[2];
        int64_t out_c = os[3];
        int64_t offset = 0;
        for (const auto& in_id : n.inputs) {
          Tensor part = requant_i8(outs.at(in_id), outs.at(in_id).quant()->exponent,
                                   out_exp);
          auto src = part.q();
          int64_t c = part.shape()[3];
          for (int64_t p = 0; p < hw; ++p) {
            for (int64_t k = 0; k < c; ++k) {
              y[static_cast<size_t>(p * out_c + offset + k)] =
                  src[static_cast<size_t>(p * c + k)];
            }
          }
          offset += c;
        }
        out = Tensor::from_i8(os, std::move(y), QuantParams{out_exp});
        break;
      }
      case NodeKind::Activation: {
        const Tensor& x = outs.at(n.inputs[0]);
        if (n.activation().kind == ActKind::Relu) {
          std::vector<int8_t> y(static_cast<size_t>(x.numel()));
          auto src = x.q();
          for (size_t i = 0; i < y.size(); ++i) y[i] = src[i] > 0 ? src[i] : 0;
          Tensor relu =
              Tensor::from_i8(x.shape(), std::move(y), QuantParams{x.quant()->exponent});
          out = requant_i8(relu, x.quant()->exponent, out_exp);
        } else {
          // CPU post-processing: dequantize the logit, sigmoid in float.
          if (id != g.output_id()) {
            throw QuantError("int8 executor supports sigmoid only as the output node");
          }
          double s = std::ldexp(1.0, -x.quant()->exponent);
          auto src = x.q();
          std::vector<float> y(src.size());
          for (size_t i = 0; i < y.size(); ++i) {
            y[i] = static_cast<float>(sigmoid_d(static_cast<double>(src[i]) * s));
          }
          final_out = Tensor::from_f32(x.shape(), std::move(y));
          if (trace) (*trace)[id] = final_out;
          outs.emplace(id, x);  // keep the integer logit reachable
          continue;
        }
        break;
      }
    }
    if (trace) (*trace)[id] = out;
    outs.emplace(id, std::move(out));
  }

  if (final_out.shape().empty()) {
    final_out = dequantize(outs.at(g.output_id()));
  }
  return final_out;
}

void save_quantized(const std::string& dir, const QuantizedModel& qm) {
  fs::create_directories(dir);
  ordered_json j = graph_to_json(qm.graph);
  ordered_json quant;
  quant["input_exp"] = qm.input_exp;
  ordered_json oe = ordered_json::array();
  for (const auto& id : qm.graph.topo_order()) {
    oe.push_back(ordered_json::array({id, qm.out_exp.at(id)}));
  }
  quant["out_exp"] = std::move(oe);
  ordered_json nodes = ordered_json::array();
  std::vector<Tensor> kernels_blob, biases_blob;
  for (const auto& [id, info] : qm.nodes) {  // std::map: sorted by id
    ordered_json nj;
    nj["id"] = id;
    nj["weight_exp"] = info.weight_exp;
    nj["bias_exp"] = info.bias_exp;
    nj["out_exp"] = info.out_exp;
    nj["shift"] = info.shift;
    nj["acc_bound"] = info.acc_bound;
    nodes.push_back(std::move(nj));
    kernels_blob.push_back(info.kernel_i8);
    biases_blob.push_back(info.bias_i32);
  }
  quant["nodes"] = std::move(nodes);
  j["quant"] = std::move(quant);
  std::ofstream mf(fs::path(dir) / "model.json", std::ios::trunc);
  if (!mf) throw ModelIOError("cannot write model.json under " + dir);
  mf << j.dump(2) << "\n";
  save_tensors((fs::path(dir) / "weights_i8.cfw").string(), kernels_blob);
  save_tensors((fs::path(dir) / "biases_i32.cfw").string(), biases_blob);
}

QuantizedModel load_quantized(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "model.json");
  if (!mf) throw ModelIOError("cannot open model.json under " + dir);
  ordered_json j;
  try {
    j = ordered_json::parse(mf);
  } catch (const ordered_json::exception& e) {
    throw ModelIOError(std::string("model.json parse error: ") + e.what());
  }
  QuantizedModel qm;
  qm.graph = graph_from_json(j);
  try {
    const auto& quant = j.at("quant");
    qm.input_exp = quant.at("input_exp").get<int>();
    for (const auto& pair : quant.at("out_exp")) {
      qm.out_exp[pair.at(0).get<std::string>()] = pair.at(1).get<int>();
    }
    auto kernels_blob = load_tensors((fs::path(dir) / "weights_i8.cfw").string());
    auto biases_blob = load_tensors((fs::path(dir) / "biases_i32.cfw").string());
    const auto& nodes = quant.at("nodes");
    if (kernels_blob.size() != nodes.size() || biases_blob.size() != nodes.size()) {
      throw ModelIOError("quantized blob entry count mismatch");
    }
    size_t i = 0;
    for (const auto& nj : nodes) {
      QuantNodeInfo info;
      std::string id = nj.at("id").get<std::string>();
      info.weight_exp = nj.at("weight_exp").get<int>();
      info.bias_exp = nj.at("bias_exp").get<int>();
      info.out_exp = nj.at("out_exp").get<int>();
      info.shift = nj.at("shift").get<int>();
      info.acc_bound = nj.at("acc_bound").get<int64_t>();
      info.kernel_i8 = kernels_blob[i].with_quant(QuantParams{info.weight_exp});
      info.bias_i32 = biases_blob[i];
      ++i;
      qm.nodes.emplace(std::move(id), std::move(info));
    }
  } catch (const ordered_json::exception& e) {
    throw ModelIOError(std::string("bad quantized manifest: ") + e.what());
  }
  return qm;
}

bool is_quantized_package(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "model.json");
  if (!mf) return false;
  try {
    auto j = ordered_json::parse(mf);
    return j.contains("quant");
  } catch (...) {
    return false;
  }
}

}  // namespace cumulus
