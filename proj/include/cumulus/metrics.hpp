#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cumulus/data.hpp"
#include "cumulus/quantize.hpp"
#include "cumulus/train.hpp"

namespace cumulus {

struct ConfusionMatrix {
  int64_t tn = 0, fp = 0, fn = 0, tp = 0;

  int64_t total() const { return tn + fp + fn + tp; }
  double accuracy() const;
  double fp_rate() const;  // fp / (fp + tn)
  double fn_rate() const;  // fn / (fn + tp)
  /// Row-normalized percentages {tn%, fp%, fn%, tp%}, two-decimal style.
  std::array<double, 4> row_percent() const;
};

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels);

/// Probabilities thresholded at 0.5 before counting.
ConfusionMatrix confusion_probs(const std::vector<double>& probs,
                                const std::vector<int>& labels);

/// Tile-level matrix from per-tile predicted masks: a tile is predicted
/// cloudy when its predicted cloud fraction reaches the threshold.
ConfusionMatrix tile_metrics_from_segmentation(const std::vector<Tensor>& masks_pred,
                                               const std::vector<TileRecord>& tiles,
                                               double threshold = 0.70);

struct BenchResult {
  std::string model_id;
  std::string executor_id;  // "f32" or "int8"
  std::vector<double> times_ms;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double fps = 0.0;  // 1000 / mean_ms
};

/// Serial timing loop: `warmup` unrecorded runs, then `runs` recorded ones,
/// cycling through the inputs. Outputs stay bitwise identical across runs.
BenchResult benchmark_fn(const std::function<Tensor(const Tensor&)>& infer,
                         const std::vector<Tensor>& inputs, int warmup = 5,
                         int runs = 50);

BenchResult benchmark(const Graph& g, const WeightMap& w,
                      const std::vector<Tensor>& inputs, int warmup = 5, int runs = 50,
                      bool parallel = true);
BenchResult benchmark(const QuantizedModel& qm, const std::vector<Tensor>& inputs,
                      int warmup = 5, int runs = 50, bool parallel = true);

void confusion_to_csv(const ConfusionMatrix& m, std::ostream& os);
/// Two-decimal row-normalized table formatted like a report.
std::string confusion_pretty(const ConfusionMatrix& m);
void bench_to_csv(const BenchResult& r, std::ostream& os);

/// Dataset-level confusion for a float model (sample label for classifiers,
/// tile label from the predicted mask for segmenters).
ConfusionMatrix evaluate_confusion(const Graph& g, const WeightMap& w, const Dataset& ds,
                                   bool parallel = true, double tile_threshold = 0.70);
ConfusionMatrix evaluate_confusion_int8(const QuantizedModel& qm, const Dataset& ds,
                                        bool parallel = true,
                                        double tile_threshold = 0.70);

/// Plain accuracy over a dataset with the int8 executor (pixel accuracy for
/// mask records).
double evaluate_accuracy_int8(const QuantizedModel& qm, const Dataset& ds,
                              bool parallel = true);

}  // namespace cumulus
