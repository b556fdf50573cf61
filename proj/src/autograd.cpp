#include "cumulus/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "cumulus/detail/dtype.hpp"
#include "cumulus/errors.hpp"
#include "cumulus/kernels.hpp"

namespace cumulus {

namespace {

constexpr double kBceClamp = 1e-7;

double clamp_prob(double p) {
  return std::min(1.0 - kBceClamp, std::max(kBceClamp, p));
}

template <typename T>
double bce_loss_t(const Tensor& pred, const Tensor& target) {
  auto p = detail::data_of<T>(pred);
  auto y = detail::data_of<T>(target);
  double sum = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    double pc = clamp_prob(static_cast<double>(p[i]));
    double yv = static_cast<double>(y[i]);
    sum += -(yv * std::log(pc) + (1.0 - yv) * std::log(1.0 - pc));
  }
  return sum / static_cast<double>(p.size());
}

template <typename T>
Tensor bce_grad_t(const Tensor& pred, const Tensor& target) {
  auto p = detail::data_of<T>(pred);
  auto y = detail::data_of<T>(target);
  std::vector<T> g(p.size());
  double inv_n = 1.0 / static_cast<double>(p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    double pc = clamp_prob(static_cast<double>(p[i]));
    double yv = static_cast<double>(y[i]);
    g[i] = static_cast<T>((-yv / pc + (1.0 - yv) / (1.0 - pc)) * inv_n);
  }
  return detail::make_tensor<T>(pred.shape(), std::move(g));
}

template <typename T>
class BackwardPass {
 public:
  BackwardPass(const Graph& g, const WeightMap& weights, const ActivationCache& cache,
               const QuantConfig* fq, bool parallel)
      : g_(g), weights_(weights), cache_(cache), fq_(fq), parallel_(parallel) {}

  WeightMap run(const Tensor& output_grad) {
    const std::string& out_id = g_.output_id();
    const Tensor& out = cache_.outputs.at(out_id);
    if (output_grad.numel() != out.numel()) {
      throw ArgumentError("output_grad has " + std::to_string(output_grad.numel()) +
                          " elements, output has " + std::to_string(out.numel()));
    }
    auto og = detail::data_of<T>(output_grad);
    ograds_[out_id].assign(og.begin(), og.end());

    for (auto it = cache_.node_ids.rbegin(); it != cache_.node_ids.rend(); ++it) {
      const NodeSpec& n = g_.node(*it);
      auto found = ograds_.find(n.id);
      if (found == ograds_.end()) continue;
      std::vector<T> gout = std::move(found->second);
      ograds_.erase(found);
      bool is_sigmoid =
          n.kind == NodeKind::Activation && n.activation().kind == ActKind::Sigmoid;
      if (cache_.fake_quant && !is_sigmoid && n.kind != NodeKind::Input) {
        apply_output_ste(n.id, gout);
      }
      step(n, gout);
    }
    // Pure-regularization gradients for any parameterized node that did not
    // receive a data gradient (cannot happen in a single-terminal graph, but
    // keeps the L2 contract total).
    for (const auto& [id, lw] : weights_) {
      if (grads_.count(id)) continue;
      if (!g_.has(id) || !is_parameterized(g_.node(id).kind)) continue;
      grads_.emplace(id, l2_only(g_.node(id), lw));
    }
    return std::move(grads_);
  }

 private:
  const Graph& g_;
  const WeightMap& weights_;
  const ActivationCache& cache_;
  const QuantConfig* fq_;
  bool parallel_;
  std::map<std::string, std::vector<T>> ograds_;
  WeightMap grads_;

  const Tensor& out_of(const std::string& id) const { return cache_.outputs.at(id); }

  void add_grad(const std::string& id, std::vector<T>&& contribution) {
    auto it = ograds_.find(id);
    if (it == ograds_.end()) {
      ograds_.emplace(id, std::move(contribution));
      return;
    }
    std::vector<T>& dst = it->second;
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += contribution[i];
  }

  void apply_output_ste(const std::string& id, std::vector<T>& gout) {
    const Tensor& pre = cache_.pre_quant.at(id);
    QuantParams qp = fq_ ? fq_->node_out.at(id) : QuantParams{};
    double lo = QuantParams::kQMin * qp.scale();
    double hi = QuantParams::kQMax * qp.scale();
    auto pv = detail::data_of<T>(pre);
    for (size_t i = 0; i < gout.size(); ++i) {
      double x = static_cast<double>(pv[i]);
      if (x < lo || x > hi) gout[i] = T(0);
    }
  }

  double node_lambda(const NodeSpec& n) const {
    switch (n.kind) {
      case NodeKind::Conv2D: return n.conv().l2_lambda;
      case NodeKind::TransposedConv2D: return n.tconv().l2_lambda;
      case NodeKind::Dense: return n.dense().l2_lambda;
      default: return 0.0;
    }
  }

  LayerWeights l2_only(const NodeSpec& n, const LayerWeights& lw) const {
    double lambda = node_lambda(n);
    auto w = detail::data_of<T>(lw.kernel);
    std::vector<T> dk(w.size());
    for (size_t i = 0; i < w.size(); ++i) dk[i] = static_cast<T>(2.0 * lambda) * w[i];
    std::vector<T> db(static_cast<size_t>(lw.bias.numel()), T(0));
    return {detail::make_tensor<T>(lw.kernel.shape(), std::move(dk)),
            detail::make_tensor<T>(lw.bias.shape(), std::move(db))};
  }

  // Kernel as the forward pass used it (fake-quantized when simulating).
  Tensor effective_kernel(const NodeSpec& n, const LayerWeights& lw) const {
    if (!cache_.fake_quant) return lw.kernel;
    return fake_quant(lw.kernel, fq_->weight.at(n.id));
  }

  void finish_weight_grads(const NodeSpec& n, const LayerWeights& lw, std::vector<T>& dk,
                           std::vector<T>&& db) {
    auto w = detail::data_of<T>(lw.kernel);
    if (cache_.fake_quant) {
      QuantParams wq = fq_->weight.at(n.id);
      double lo = QuantParams::kQMin * wq.scale();
      double hi = QuantParams::kQMax * wq.scale();
      for (size_t i = 0; i < dk.size(); ++i) {
        double x = static_cast<double>(w[i]);
        if (x < lo || x > hi) dk[i] = T(0);
      }
    }
    double lambda = node_lambda(n);
    if (lambda != 0.0) {
      T two_lambda = static_cast<T>(2.0 * lambda);
      for (size_t i = 0; i < dk.size(); ++i) dk[i] += two_lambda * w[i];
    }
    grads_.emplace(n.id, LayerWeights{detail::make_tensor<T>(lw.kernel.shape(), std::move(dk)),
                                      detail::make_tensor<T>(lw.bias.shape(), std::move(db))});
  }

  void step(const NodeSpec& n, std::vector<T>& gout) {
    switch (n.kind) {
      case NodeKind::Input:
        break;
      case NodeKind::Conv2D:
        conv_backward(n, gout);
        break;
      case NodeKind::TransposedConv2D:
        tconv_backward(n, gout);
        break;
      case NodeKind::Dense:
        dense_backward(n, gout);
        break;
      case NodeKind::MaxPool2D:
        pool_backward(n, gout);
        break;
      case NodeKind::Flatten:
        add_grad(n.inputs[0], std::move(gout));
        break;
      case NodeKind::Concat:
        concat_backward(n, gout);
        break;
      case NodeKind::Dropout:
        dropout_backward(n, gout);
        break;
      case NodeKind::Activation:
        activation_backward(n, gout);
        break;
    }
  }

  void activation_backward(const NodeSpec& n, const std::vector<T>& gout) {
    std::vector<T> gin(gout.size());
    if (n.activation().kind == ActKind::Relu) {
      auto x = detail::data_of<T>(out_of(n.inputs[0]));
      for (size_t i = 0; i < gin.size(); ++i) gin[i] = x[i] > T(0) ? gout[i] : T(0);
    } else {
      auto y = detail::data_of<T>(out_of(n.id));
      for (size_t i = 0; i < gin.size(); ++i) gin[i] = gout[i] * y[i] * (T(1) - y[i]);
    }
    add_grad(n.inputs[0], std::move(gin));
  }

  void dropout_backward(const NodeSpec& n, const std::vector<T>& gout) {
    auto it = cache_.dropout_keep.find(n.id);
    if (it == cache_.dropout_keep.end()) {
      throw StateError("cache has no dropout mask for node " + n.id);
    }
    const auto& keep = it->second;
    T inv = static_cast<T>(1.0 / (1.0 - n.dropout().rate));
    std::vector<T> gin(gout.size());
    for (size_t i = 0; i < gin.size(); ++i) gin[i] = keep[i] ? gout[i] * inv : T(0);
    add_grad(n.inputs[0], std::move(gin));
  }

  void pool_backward(const NodeSpec& n, const std::vector<T>& gout) {
    auto it = cache_.pool_argmax.find(n.id);
    if (it == cache_.pool_argmax.end()) {
      throw StateError("cache has no pooling argmax for node " + n.id);
    }
    const auto& argmax = it->second;
    std::vector<T> gin(static_cast<size_t>(out_of(n.inputs[0]).numel()), T(0));
    // Overlapping windows can hit the same input element; scatter serially in
    // output scan order so the sum order is fixed.
    for (size_t k = 0; k < gout.size(); ++k) {
      if (argmax[k] >= 0) gin[static_cast<size_t>(argmax[k])] += gout[k];
    }
    add_grad(n.inputs[0], std::move(gin));
  }

  void concat_backward(const NodeSpec& n, const std::vector<T>& gout) {
    const Shape& os = out_of(n.id).shape();
    int64_t hw = os[1] * os[2];
    int64_t out_c = os[3];
    int64_t offset = 0;
    for (const auto& in_id : n.inputs) {
      int64_t c = out_of(in_id).shape()[3];
      std::vector<T> gin(static_cast<size_t>(hw * c));
      for (int64_t p = 0; p < hw; ++p) {
        for (int64_t k = 0; k < c; ++k) {
          gin[static_cast<size_t>(p * c + k)] =
              gout[static_cast<size_t>(p * out_c + offset + k)];
        }
      }
      add_grad(in_id, std::move(gin));
      offset += c;
    }
  }

  void dense_backward(const NodeSpec& n, const std::vector<T>& gout) {
    const LayerWeights& lw = weights_.at(n.id);
    Tensor kernel = effective_kernel(n, lw);
    auto w = detail::data_of<T>(kernel);
    auto x = detail::data_of<T>(out_of(n.inputs[0]));
    int64_t in = static_cast<int64_t>(x.size());
    int64_t units = n.dense().units;

    std::vector<T> dk(static_cast<size_t>(in * units));
    std::vector<T> gin(static_cast<size_t>(in));
#ifdef _OPENMP
#pragma omp parallel for if (parallel_)
#endif
    for (int64_t i = 0; i < in; ++i) {
      T xi = x[static_cast<size_t>(i)];
      T acc = T(0);
      const T* wrow = w.data() + i * units;
      T* dkrow = dk.data() + i * units;
      for (int64_t u = 0; u < units; ++u) {
        dkrow[u] = xi * gout[static_cast<size_t>(u)];
        acc += wrow[u] * gout[static_cast<size_t>(u)];
      }
      gin[static_cast<size_t>(i)] = acc;
    }
    std::vector<T> db(gout.begin(), gout.end());
    finish_weight_grads(n, lw, dk, std::move(db));
    add_grad(n.inputs[0], std::move(gin));
  }

  void conv_backward(const NodeSpec& n, const std::vector<T>& gout) {
    const auto& p = n.conv();
    const Shape& is = out_of(n.inputs[0]).shape();
    auto geom = kernels::make_conv_geom(is[1], is[2], is[3], p.out_channels, p.kernel_h,
                                        p.kernel_w, p.stride, p.padding);
    const LayerWeights& lw = weights_.at(n.id);
    Tensor kernel = effective_kernel(n, lw);
    auto w = detail::data_of<T>(kernel);
    auto x = detail::data_of<T>(out_of(n.inputs[0]));

    std::vector<T> dk(w.size(), T(0));
    std::vector<T> db(static_cast<size_t>(geom.out_c), T(0));
    std::vector<T> gin(x.size());

    const T* gy = gout.data();
#ifdef _OPENMP
#pragma omp parallel for if (parallel_)
#endif
    for (int64_t oc = 0; oc < geom.out_c; ++oc) {
      T bacc = T(0);
      for (int64_t oh = 0; oh < geom.out_h; ++oh) {
        for (int64_t ow = 0; ow < geom.out_w; ++ow) {
          T gv = gy[(oh * geom.out_w + ow) * geom.out_c + oc];
          bacc += gv;
          for (int ki = 0; ki < geom.kh; ++ki) {
            int64_t ih = oh * geom.stride - geom.pad_top + ki;
            if (ih < 0 || ih >= geom.in_h) continue;
            for (int kj = 0; kj < geom.kw; ++kj) {
              int64_t iw = ow * geom.stride - geom.pad_left + kj;
              if (iw < 0 || iw >= geom.in_w) continue;
              const T* xp = x.data() + (ih * geom.in_w + iw) * geom.in_c;
              T* dkp = dk.data() +
                       ((static_cast<int64_t>(ki) * geom.kw + kj) * geom.in_c) * geom.out_c +
                       oc;
              for (int64_t ic = 0; ic < geom.in_c; ++ic) {
                dkp[ic * geom.out_c] += xp[ic] * gv;
              }
            }
          }
        }
      }
      db[static_cast<size_t>(oc)] = bacc;
    }

#ifdef _OPENMP
#pragma omp parallel for if (parallel_)
#endif
    for (int64_t ih = 0; ih < geom.in_h; ++ih) {
      for (int64_t iw = 0; iw < geom.in_w; ++iw) {
        for (int64_t ic = 0; ic < geom.in_c; ++ic) {
          T acc = T(0);
          for (int ki = 0; ki < geom.kh; ++ki) {
            int64_t num_h = ih + geom.pad_top - ki;
            if (num_h < 0 || num_h % geom.stride) continue;
            int64_t oh = num_h / geom.stride;
            if (oh >= geom.out_h) continue;
            for (int kj = 0; kj < geom.kw; ++kj) {
              int64_t num_w = iw + geom.pad_left - kj;
              if (num_w < 0 || num_w % geom.stride) continue;
              int64_t ow = num_w / geom.stride;
              if (ow >= geom.out_w) continue;
              const T* wp =
                  w.data() +
                  ((static_cast<int64_t>(ki) * geom.kw + kj) * geom.in_c + ic) * geom.out_c;
              const T* gp = gy + (oh * geom.out_w + ow) * geom.out_c;
              for (int64_t oc = 0; oc < geom.out_c; ++oc) acc += wp[oc] * gp[oc];
            }
          }
          gin[static_cast<size_t>((ih * geom.in_w + iw) * geom.in_c + ic)] = acc;
        }
      }
    }

    finish_weight_grads(n, lw, dk, std::move(db));
    add_grad(n.inputs[0], std::move(gin));
  }

  void tconv_backward(const NodeSpec& n, const std::vector<T>& gout) {
    const auto& p = n.tconv();
    const Shape& is = out_of(n.inputs[0]).shape();
    auto geom = kernels::make_tconv_geom(is[1], is[2], is[3], p.out_channels, p.kernel_h,
                                         p.kernel_w, p.stride);
    const LayerWeights& lw = weights_.at(n.id);
    Tensor kernel = effective_kernel(n, lw);
    auto w = detail::data_of<T>(kernel);
    auto x = detail::data_of<T>(out_of(n.inputs[0]));

    std::vector<T> dk(w.size(), T(0));
    std::vector<T> db(static_cast<size_t>(geom.out_c), T(0));
    std::vector<T> gin(x.size());
    const T* gy = gout.data();

#ifdef _OPENMP
#pragma omp parallel for if (parallel_)
#endif
    for (int64_t oc = 0; oc < geom.out_c; ++oc) {
      T bacc = T(0);
      for (int64_t oh = 0; oh < geom.out_h; ++oh) {
        for (int64_t ow = 0; ow < geom.out_w; ++ow) {
          bacc += gy[(oh * geom.out_w + ow) * geom.out_c + oc];
        }
      }
      db[static_cast<size_t>(oc)] = bacc;
      for (int64_t ih = 0; ih < geom.in_h; ++ih) {
        for (int64_t iw = 0; iw < geom.in_w; ++iw) {
          const T* xp = x.data() + (ih * geom.in_w + iw) * geom.in_c;
          for (int ki = 0; ki < geom.kh; ++ki) {
            int64_t oh = ih * geom.stride + ki;
            for (int kj = 0; kj < geom.kw; ++kj) {
              int64_t ow = iw * geom.stride + kj;
              T gv = gy[(oh * geom.out_w + ow) * geom.out_c + oc];
              T* dkp = dk.data() +
                       ((static_cast<int64_t>(ki) * geom.kw + kj) * geom.in_c) * geom.out_c +
                       oc;
              for (int64_t ic = 0; ic < geom.in_c; ++ic) {
                dkp[ic * geom.out_c] += xp[ic] * gv;
              }
            }
          }
        }
      }
    }

#ifdef _OPENMP
#pragma omp parallel for if (parallel_)
#endif
    for (int64_t ih = 0; ih < geom.in_h; ++ih) {
      for (int64_t iw = 0; iw < geom.in_w; ++iw) {
        for (int64_t ic = 0; ic < geom.in_c; ++ic) {
          T acc = T(0);
          for (int ki = 0; ki < geom.kh; ++ki) {
            int64_t oh = ih * geom.stride + ki;
            for (int kj = 0; kj < geom.kw; ++kj) {
              int64_t ow = iw * geom.stride + kj;
              const T* wp =
                  w.data() +
                  ((static_cast<int64_t>(ki) * geom.kw + kj) * geom.in_c + ic) * geom.out_c;
              const T* gp = gy + (oh * geom.out_w + ow) * geom.out_c;
              for (int64_t oc = 0; oc < geom.out_c; ++oc) acc += wp[oc] * gp[oc];
            }
          }
          gin[static_cast<size_t>((ih * geom.in_w + iw) * geom.in_c + ic)] = acc;
        }
      }
    }

    finish_weight_grads(n, lw, dk, std::move(db));
    add_grad(n.inputs[0], std::move(gin));
  }
};

}  // namespace

double bce_loss(const Tensor& pred, const Tensor& target) {
  if (pred.numel() == 0 || pred.numel() != target.numel()) {
    throw ArgumentError("bce_loss needs equal, non-empty pred/target");
  }
  return pred.dtype() == DType::F64 ? bce_loss_t<double>(pred, target)
                                    : bce_loss_t<float>(pred, target);
}

Tensor bce_grad(const Tensor& pred, const Tensor& target) {
  if (pred.numel() == 0 || pred.numel() != target.numel()) {
    throw ArgumentError("bce_grad needs equal, non-empty pred/target");
  }
  return pred.dtype() == DType::F64 ? bce_grad_t<double>(pred, target)
                                    : bce_grad_t<float>(pred, target);
}

WeightMap backward(const Graph& g, const WeightMap& weights, const ActivationCache& cache,
                   const Tensor& output_grad, const QuantConfig* fake_quant,
                   bool parallel) {
  if (cache.mode != ExecMode::Training) {
    throw StateError("backward needs a training-mode cache");
  }
  if (cache.node_ids != g.topo_order()) {
    throw StateError("cache is stale: produced by a different graph");
  }
  if (cache.fake_quant && fake_quant == nullptr) {
    throw StateError("cache was built with fake-quant; pass the same config");
  }
  if (output_grad.dtype() == DType::F64) {
    BackwardPass<double> pass(g, weights, cache, fake_quant, parallel);
    return pass.run(output_grad);
  }
  BackwardPass<float> pass(g, weights, cache, fake_quant, parallel);
  return pass.run(output_grad);
}

void adam_step(WeightMap& params, const WeightMap& grads, AdamState& state,
               const AdamConfig& cfg) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto update = [&](Tensor& p, const Tensor& gt, Tensor& m, Tensor& v) {
    auto pv = p.f();
    auto gv = gt.f();
    auto mv = m.f();
    auto vv = v.f();
    if (gv.size() != pv.size()) throw ArgumentError("adam_step shape mismatch");
    for (size_t i = 0; i < pv.size(); ++i) {
      double gd = gv[i];
      double md = cfg.beta1 * mv[i] + (1.0 - cfg.beta1) * gd;
      double vd = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * gd * gd;
      mv[i] = static_cast<float>(md);
      vv[i] = static_cast<float>(vd);
      double mhat = md / bc1;
      double vhat = vd / bc2;
      pv[i] = static_cast<float>(pv[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  };
  for (auto& [id, lw] : params) {
    auto git = grads.find(id);
    if (git == grads.end()) continue;
    auto mit = state.m.find(id);
    if (mit == state.m.end()) {
      mit = state.m.emplace(id, LayerWeights{Tensor::zeros(lw.kernel.shape()),
                                             Tensor::zeros(lw.bias.shape())}).first;
      state.v.emplace(id, LayerWeights{Tensor::zeros(lw.kernel.shape()),
                                       Tensor::zeros(lw.bias.shape())});
    }
    auto& vit = state.v.at(id);
    update(lw.kernel, git->second.kernel, mit->second.kernel, vit.kernel);
    update(lw.bias, git->second.bias, mit->second.bias, vit.bias);
  }
}

}  // namespace cumulus
