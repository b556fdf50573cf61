#pragma once

#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cumulus/graph.hpp"
#include "cumulus/model_io.hpp"
#include "cumulus/train.hpp"

#include <json.hpp>

namespace cumulus {

/// Keep-vector per prunable node over its output channels (dense: units).
using ChannelMask = std::map<std::string, std::vector<uint8_t>>;

/// Channel indices in ascending importance (L1 norm of the channel's kernel
/// slice, ties broken by lower index). ArgumentError on non-prunable nodes.
std::vector<int64_t> rank_channels(const Graph& g, const WeightMap& weights,
                                   const std::string& node_id);

/// node -> trial ratio -> accuracy drop when pruning that node alone.
using SensitivityTable = std::map<std::string, std::map<double, double>>;

SensitivityTable sensitivity_analysis(const Graph& g, const WeightMap& weights,
                                      const Dataset& eval_set,
                                      const std::vector<double>& trial_ratios,
                                      bool parallel = true);

/// Remove masked-off output channels from kernels/biases and the matching
/// input slices from every consumer; concat consumers remap through branch
/// channel offsets, dense-after-flatten drops the rows of removed
/// (spatial x channel) positions. PruneError on inconsistent masks.
std::pair<Graph, WeightMap> rewrite_dense(const Graph& g, const WeightMap& weights,
                                          const ChannelMask& masks);

/// Flat indices a flatten output keeps when its source keeps `channel_keep`
/// channels (NHWC order); the dense rows rewrite_dense retains.
std::vector<int64_t> flatten_keep_indices(const Shape& pre_flatten,
                                          const std::vector<uint8_t>& channel_keep);

struct PruneSpec {
  double target_pr = 0.0;  // target FLOP-reduction fraction, [0, 1)
  int steps = 3;           // iterative rounds
  int fine_tune_epochs = 10;
  std::set<std::string> protected_ids;  // output layer always protected
  std::vector<double> sensitivity_ratios = {0.3, 0.6, 0.9};
  double per_layer_cap = 0.9;  // max removal fraction per layer
  TrainConfig fine_tune;       // lr/seed/batch for the fine-tuning rounds
};

struct PruneRound {
  double flop_reduction = 0.0;   // cumulative vs baseline
  double param_reduction = 0.0;  // cumulative vs baseline
  double acc_before = 0.0;       // on eval set, before fine-tune
  double acc_after = 0.0;
};

struct PruneReport {
  double target_pr = 0.0;
  std::vector<PruneRound> rounds;
  std::map<std::string, int64_t> kept_widths;
  double achieved_flop_reduction = 0.0;
  double achieved_param_reduction = 0.0;
  uint64_t baseline_hash = 0;  // fnv1a of the baseline weight bytes
};

struct PruneResult {
  Graph graph;
  WeightMap weights;
  PruneReport report;
};

/// Iterative sensitivity-guided channel pruning: per round, a greedy
/// allocator removes channels from the least accuracy-costly layers per FLOP
/// saved until the projected reduction reaches PR * round/steps, the graph is
/// rewritten dense, and the model is fine-tuned. PruneError when the target
/// is unreachable under the per-layer cap.
PruneResult prune(const Graph& g, const WeightMap& weights, const PruneSpec& spec,
                  const Dataset& train_data, const Dataset& eval_data);

void prune_report_to_csv(const PruneReport& r, std::ostream& os);
nlohmann::ordered_json prune_report_to_json(const PruneReport& r);

uint64_t weights_fnv1a(const WeightMap& w);

}  // namespace cumulus
