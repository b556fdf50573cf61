#include "cumulus/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "cumulus/errors.hpp"

namespace cumulus {

double ConfusionMatrix::accuracy() const {
  int64_t t = total();
  return t ? static_cast<double>(tn + tp) / static_cast<double>(t) : 0.0;
}

double ConfusionMatrix::fp_rate() const {
  int64_t d = fp + tn;
  return d ? static_cast<double>(fp) / static_cast<double>(d) : 0.0;
}

double ConfusionMatrix::fn_rate() const {
  int64_t d = fn + tp;
  return d ? static_cast<double>(fn) / static_cast<double>(d) : 0.0;
}

std::array<double, 4> ConfusionMatrix::row_percent() const {
  double neg = static_cast<double>(tn + fp);
  double pos = static_cast<double>(fn + tp);
  return {neg ? 100.0 * tn / neg : 0.0, neg ? 100.0 * fp / neg : 0.0,
          pos ? 100.0 * fn / pos : 0.0, pos ? 100.0 * tp / pos : 0.0};
}

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty() || preds.size() != labels.size()) {
    throw ArgumentError("confusion needs equal non-empty pred/label sequences");
  }
  ConfusionMatrix m;
  for (size_t i = 0; i < preds.size(); ++i) {
    bool p = preds[i] != 0, y = labels[i] != 0;
    if (y) {
      (p ? m.tp : m.fn)++;
    } else {
      (p ? m.fp : m.tn)++;
    }
  }
  return m;
}

ConfusionMatrix confusion_probs(const std::vector<double>& probs,
                                const std::vector<int>& labels) {
  std::vector<int> preds(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) preds[i] = probs[i] >= 0.5 ? 1 : 0;
  return confusion(preds, labels);
}

ConfusionMatrix tile_metrics_from_segmentation(const std::vector<Tensor>& masks_pred,
                                               const std::vector<TileRecord>& tiles,
                                               double threshold) {
  if (masks_pred.size() != tiles.size() || tiles.empty()) {
    throw ArgumentError("one predicted mask per tile required");
  }
  std::vector<int> preds(tiles.size()), labels(tiles.size());
  for (size_t i = 0; i < tiles.size(); ++i) {
    auto mv = masks_pred[i].f();
    int64_t cloudy = 0;
    for (float v : mv) cloudy += v >= 0.5f ? 1 : 0;
    double fraction = static_cast<double>(cloudy) / static_cast<double>(mv.size());
    preds[i] = fraction >= threshold ? 1 : 0;
    labels[i] = tiles[i].label;
  }
  return confusion(preds, labels);
}

BenchResult benchmark_fn(const std::function<Tensor(const Tensor&)>& infer,
                         const std::vector<Tensor>& inputs, int warmup, int runs) {
  if (runs < 1) throw ArgumentError("benchmark needs runs >= 1");
  if (inputs.empty()) throw ArgumentError("benchmark needs >= 1 input");
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i) {
    (void)infer(inputs[static_cast<size_t>(i) % inputs.size()]);
  }
  BenchResult r;
  r.times_ms.reserve(static_cast<size_t>(runs));
  for (int i = 0; i < runs; ++i) {
    const Tensor& x = inputs[static_cast<size_t>(i) % inputs.size()];
    auto t0 = clock::now();
    Tensor y = infer(x);
    auto t1 = clock::now();
    (void)y;
    r.times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double sum = 0.0;
  for (double t : r.times_ms) sum += t;
  r.mean_ms = sum / static_cast<double>(runs);
  std::vector<double> sorted = r.times_ms;
  std::sort(sorted.begin(), sorted.end());
  size_t mid = sorted.size() / 2;
  r.median_ms = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  r.fps = 1000.0 / r.mean_ms;
  return r;
}

BenchResult benchmark(const Graph& g, const WeightMap& w,
                      const std::vector<Tensor>& inputs, int warmup, int runs,
                      bool parallel) {
  ForwardOptions opts;
  opts.parallel = parallel;
  BenchResult r = benchmark_fn(
      [&](const Tensor& x) { return forward(g, w, x, opts).output; }, inputs, warmup,
      runs);
  r.model_id = g.arch_name;
  r.executor_id = "f32";
  return r;
}

BenchResult benchmark(const QuantizedModel& qm, const std::vector<Tensor>& inputs,
                      int warmup, int runs, bool parallel) {
  BenchResult r = benchmark_fn(
      [&](const Tensor& x) { return forward_int8(qm, x, parallel); }, inputs, warmup,
      runs);
  r.model_id = qm.graph.arch_name;
  r.executor_id = "int8";
  return r;
}

void confusion_to_csv(const ConfusionMatrix& m, std::ostream& os) {
  os << "tn,fp,fn,tp,accuracy,fp_rate,fn_rate\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld,%lld,%lld,%lld,%.6f,%.6f,%.6f\n",
                static_cast<long long>(m.tn), static_cast<long long>(m.fp),
                static_cast<long long>(m.fn), static_cast<long long>(m.tp),
                m.accuracy(), m.fp_rate(), m.fn_rate());
  os << buf;
}

std::string confusion_pretty(const ConfusionMatrix& m) {
  auto p = m.row_percent();
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "            pred:not_cloudy  pred:cloudy\n"
                "not_cloudy        %6.2f%%      %6.2f%% (FP)\n"
                "cloudy            %6.2f%% (FN) %6.2f%%\n",
                p[0], p[1], p[2], p[3]);
  return buf;
}

void bench_to_csv(const BenchResult& r, std::ostream& os) {
  os << "model,executor,run,ms\n";
  char buf[160];
  for (size_t i = 0; i < r.times_ms.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%.6f\n", r.model_id.c_str(),
                  r.executor_id.c_str(), i, r.times_ms[i]);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "%s,%s,mean,%.6f\n", r.model_id.c_str(),
                r.executor_id.c_str(), r.mean_ms);
  os << buf;
  std::snprintf(buf, sizeof(buf), "%s,%s,fps,%.6f\n", r.model_id.c_str(),
                r.executor_id.c_str(), r.fps);
  os << buf;
}

namespace {

bool tile_pred_from_mask(const Tensor& mask_prob, double threshold) {
  auto mv = mask_prob.f();
  int64_t cloudy = 0;
  for (float v : mv) cloudy += v >= 0.5f ? 1 : 0;
  return static_cast<double>(cloudy) / static_cast<double>(mv.size()) >= threshold;
}

}  // namespace

ConfusionMatrix evaluate_confusion(const Graph& g, const WeightMap& w, const Dataset& ds,
                                   bool parallel, double tile_threshold) {
  if (ds.records.empty()) throw ArgumentError("empty dataset");
  std::vector<int> preds, labels;
  ForwardOptions opts;
  opts.parallel = parallel;
  for (const auto& r : ds.records) {
    auto out = forward(g, w, r.pixels, opts).output;
    bool p = out.numel() > 1 ? tile_pred_from_mask(out, tile_threshold)
                             : out.f()[0] >= 0.5f;
    preds.push_back(p ? 1 : 0);
    labels.push_back(r.label);
  }
  return confusion(preds, labels);
}

ConfusionMatrix evaluate_confusion_int8(const QuantizedModel& qm, const Dataset& ds,
                                        bool parallel, double tile_threshold) {
  if (ds.records.empty()) throw ArgumentError("empty dataset");
  std::vector<int> preds, labels;
  QuantParams in_qp{qm.input_exp};
  for (const auto& r : ds.records) {
    Tensor out = forward_int8(qm, quantize_input(r.pixels, in_qp), parallel);
    bool p = out.numel() > 1 ? tile_pred_from_mask(out, tile_threshold)
                             : out.f()[0] >= 0.5f;
    preds.push_back(p ? 1 : 0);
    labels.push_back(r.label);
  }
  return confusion(preds, labels);
}

double evaluate_accuracy_int8(const QuantizedModel& qm, const Dataset& ds,
                              bool parallel) {
  if (ds.records.empty()) throw ArgumentError("empty dataset");
  int64_t correct = 0, total = 0;
  QuantParams in_qp{qm.input_exp};
  for (const auto& r : ds.records) {
    Tensor out = forward_int8(qm, quantize_input(r.pixels, in_qp), parallel);
    auto p = out.f();
    if (out.numel() > 1) {
      auto y = r.mask.f();
      for (size_t i = 0; i < p.size(); ++i) {
        correct += ((p[i] >= 0.5f) == (y[i] >= 0.5f)) ? 1 : 0;
        ++total;
      }
    } else {
      correct += ((p[0] >= 0.5f) == (r.label != 0)) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace cumulus
