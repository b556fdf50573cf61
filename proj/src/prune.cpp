#include "cumulus/prune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "cumulus/errors.hpp"

namespace cumulus {

namespace {

bool prunable_kind(NodeKind k) {
  return k == NodeKind::Conv2D || k == NodeKind::TransposedConv2D || k == NodeKind::Dense;
}

int64_t node_width(const NodeSpec& n) {
  switch (n.kind) {
    case NodeKind::Conv2D: return n.conv().out_channels;
    case NodeKind::TransposedConv2D: return n.tconv().out_channels;
    case NodeKind::Dense: return n.dense().units;
    default: return 0;
  }
}

void set_node_width(NodeSpec& n, int64_t width) {
  switch (n.kind) {
    case NodeKind::Conv2D: std::get<Conv2DParams>(n.params).out_channels = width; break;
    case NodeKind::TransposedConv2D:
      std::get<TransposedConv2DParams>(n.params).out_channels = width;
      break;
    case NodeKind::Dense: std::get<DenseParams>(n.params).units = width; break;
    default: break;
  }
}

Graph clone_with_widths(const Graph& g, const std::map<std::string, int64_t>& widths) {
  Graph out;
  out.arch_name = g.arch_name;
  out.input_shape = g.input_shape;
  for (const NodeSpec& n : g.nodes()) {
    NodeSpec copy = n;
    auto it = widths.find(n.id);
    if (it != widths.end()) set_node_width(copy, it->second);
    out.add(std::move(copy));
  }
  return out;
}

// First parameterized node walking back from the terminal: the output layer,
// always protected from pruning.
std::string output_layer_id(const Graph& g) {
  std::string id = g.output_id();
  while (!prunable_kind(g.node(id).kind)) {
    const NodeSpec& n = g.node(id);
    if (n.inputs.empty()) throw ArchError("no parameterized output layer found");
    id = n.inputs[0];
  }
  return id;
}

}  // namespace

std::vector<int64_t> rank_channels(const Graph& g, const WeightMap& weights,
                                   const std::string& node_id) {
  const NodeSpec& n = g.node(node_id);
  if (!prunable_kind(n.kind)) {
    throw ArgumentError("node " + node_id + " (" + node_kind_name(n.kind) +
                        ") has no prunable channels");
  }
  const Tensor& k = weights.at(node_id).kernel;
  int64_t out_c = k.shape().back();
  int64_t rows = k.numel() / out_c;
  auto kv = k.f();
  std::vector<std::pair<double, int64_t>> importance(static_cast<size_t>(out_c));
  for (int64_t c = 0; c < out_c; ++c) {
    double l1 = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
      l1 += std::abs(static_cast<double>(kv[static_cast<size_t>(r * out_c + c)]));
    }
    importance[static_cast<size_t>(c)] = {l1, c};
  }
  std::stable_sort(importance.begin(), importance.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<int64_t> order(importance.size());
  for (size_t i = 0; i < importance.size(); ++i) order[i] = importance[i].second;
  return order;
}

std::vector<int64_t> flatten_keep_indices(const Shape& pre_flatten,
                                          const std::vector<uint8_t>& channel_keep) {
  if (pre_flatten.size() != 4) throw ArgumentError("flatten source must be rank 4");
  int64_t positions = pre_flatten[1] * pre_flatten[2];
  int64_t c = pre_flatten[3];
  if (static_cast<int64_t>(channel_keep.size()) != c) {
    throw PruneError("channel keep length does not match flatten source channels");
  }
  std::vector<int64_t> kept;
  for (int64_t p = 0; p < positions; ++p) {
    for (int64_t ch = 0; ch < c; ++ch) {
      if (channel_keep[static_cast<size_t>(ch)]) kept.push_back(p * c + ch);
    }
  }
  return kept;
}

std::pair<Graph, WeightMap> rewrite_dense(const Graph& g, const WeightMap& weights,
                                          const ChannelMask& masks) {
  auto shapes = infer_shapes(g, g.input_shape);

  for (const auto& [id, keep] : masks) {
    if (!g.has(id)) throw PruneError("mask references unknown node " + id);
    const NodeSpec& n = g.node(id);
    if (!prunable_kind(n.kind)) {
      throw PruneError("mask on non-prunable node " + id);
    }
    if (static_cast<int64_t>(keep.size()) != node_width(n)) {
      throw PruneError("mask width mismatch on node " + id + ": " +
                       std::to_string(keep.size()) + " vs " +
                       std::to_string(node_width(n)));
    }
    if (std::count(keep.begin(), keep.end(), uint8_t(1)) == 0) {
      throw PruneError("mask would remove every channel of node " + id);
    }
  }

  // Keep-vector per node output, derived for pass-through and composite
  // nodes.
  std::map<std::string, std::vector<uint8_t>> keep;
  for (const auto& id : g.topo_order()) {
    const NodeSpec& n = g.node(id);
    switch (n.kind) {
      case NodeKind::Input:
        keep[id].assign(static_cast<size_t>(shapes.at(id)[3]), 1);
        break;
      case NodeKind::Conv2D:
      case NodeKind::TransposedConv2D:
      case NodeKind::Dense: {
        auto it = masks.find(id);
        if (it != masks.end()) {
          keep[id] = it->second;
        } else {
          keep[id].assign(static_cast<size_t>(node_width(n)), 1);
        }
        break;
      }
      case NodeKind::MaxPool2D:
      case NodeKind::Dropout:
      case NodeKind::Activation:
        keep[id] = keep.at(n.inputs[0]);
        break;
      case NodeKind::Concat: {
        std::vector<uint8_t> k;
        for (const auto& in_id : n.inputs) {
          const auto& ik = keep.at(in_id);
          k.insert(k.end(), ik.begin(), ik.end());
        }
        keep[id] = std::move(k);
        break;
      }
      case NodeKind::Flatten: {
        const Shape& is = shapes.at(n.inputs[0]);
        const auto& ik = keep.at(n.inputs[0]);
        std::vector<uint8_t> k(static_cast<size_t>(shape_numel(Shape{is[1], is[2],
                                                                     is[3]})));
        int64_t positions = is[1] * is[2];
        int64_t c = is[3];
        for (int64_t p = 0; p < positions; ++p) {
          for (int64_t ch = 0; ch < c; ++ch) {
            k[static_cast<size_t>(p * c + ch)] = ik[static_cast<size_t>(ch)];
          }
        }
        keep[id] = std::move(k);
        break;
      }
    }
  }

  auto kept_count = [&](const std::string& id) {
    const auto& k = keep.at(id);
    return static_cast<int64_t>(std::count(k.begin(), k.end(), uint8_t(1)));
  };

  Graph out;
  out.arch_name = g.arch_name;
  out.input_shape = g.input_shape;
  for (const NodeSpec& n : g.nodes()) {
    NodeSpec copy = n;
    if (prunable_kind(n.kind)) set_node_width(copy, kept_count(n.id));
    out.add(std::move(copy));
  }

  WeightMap new_weights;
  for (const auto& [id, lw] : weights) {
    const NodeSpec& n = g.node(id);
    const auto& out_keep = keep.at(id);
    const auto& in_keep = keep.at(n.inputs[0]);
    const Tensor& k = lw.kernel;

    if (n.kind == NodeKind::Dense) {
      int64_t in = k.dim(0), units = k.dim(1);
      if (static_cast<int64_t>(in_keep.size()) != in) {
        throw PruneError("inconsistent input keep width at node " + id);
      }
      auto kv = k.f();
      std::vector<float> nk;
      nk.reserve(static_cast<size_t>(k.numel()));
      for (int64_t r = 0; r < in; ++r) {
        if (!in_keep[static_cast<size_t>(r)]) continue;
        for (int64_t u = 0; u < units; ++u) {
          if (out_keep[static_cast<size_t>(u)]) {
            nk.push_back(kv[static_cast<size_t>(r * units + u)]);
          }
        }
      }
      int64_t new_in = static_cast<int64_t>(std::count(in_keep.begin(), in_keep.end(),
                                                       uint8_t(1)));
      int64_t new_units = kept_count(id);
      std::vector<float> nb;
      auto bv = lw.bias.f();
      for (int64_t u = 0; u < units; ++u) {
        if (out_keep[static_cast<size_t>(u)]) nb.push_back(bv[static_cast<size_t>(u)]);
      }
      new_weights.emplace(
          id, LayerWeights{Tensor::from_f32({new_in, new_units}, std::move(nk)),
                           Tensor::from_f32({new_units}, std::move(nb))});
    } else {  // Conv2D / TransposedConv2D: kernel [kh, kw, in_c, out_c]
      int64_t kh = k.dim(0), kw = k.dim(1), in_c = k.dim(2), out_c = k.dim(3);
      if (static_cast<int64_t>(in_keep.size()) != in_c) {
        throw PruneError("inconsistent input keep width at node " + id);
      }
      auto kv = k.f();
      std::vector<float> nk;
      nk.reserve(static_cast<size_t>(k.numel()));
      for (int64_t a = 0; a < kh * kw; ++a) {
        for (int64_t ic = 0; ic < in_c; ++ic) {
          if (!in_keep[static_cast<size_t>(ic)]) continue;
          for (int64_t oc = 0; oc < out_c; ++oc) {
            if (out_keep[static_cast<size_t>(oc)]) {
              nk.push_back(kv[static_cast<size_t>((a * in_c + ic) * out_c + oc)]);
            }
          }
        }
      }
      int64_t new_in = static_cast<int64_t>(std::count(in_keep.begin(), in_keep.end(),
                                                       uint8_t(1)));
      int64_t new_out = kept_count(id);
      std::vector<float> nb;
      auto bv = lw.bias.f();
      for (int64_t oc = 0; oc < out_c; ++oc) {
        if (out_keep[static_cast<size_t>(oc)]) nb.push_back(bv[static_cast<size_t>(oc)]);
      }
      new_weights.emplace(
          id, LayerWeights{Tensor::from_f32({kh, kw, new_in, new_out}, std::move(nk)),
                           Tensor::from_f32({new_out}, std::move(nb))});
    }
  }

  infer_shapes(out, out.input_shape);  // must stay inferable
  return {std::move(out), std::move(new_weights)};
}

SensitivityTable sensitivity_analysis(const Graph& g, const WeightMap& weights,
                                      const Dataset& eval_set,
                                      const std::vector<double>& trial_ratios,
                                      bool parallel) {
  double base_acc = evaluate(g, weights, eval_set, parallel).accuracy;
  SensitivityTable table;
  for (const auto& id : g.topo_order()) {
    const NodeSpec& n = g.node(id);
    if (!prunable_kind(n.kind)) continue;
    int64_t width = node_width(n);
    auto order = rank_channels(g, weights, id);
    for (double ratio : trial_ratios) {
      int64_t remove = static_cast<int64_t>(
          std::floor(ratio * static_cast<double>(width) + 1e-9));
      remove = std::min(remove, width - 1);
      if (remove <= 0) {
        table[id][ratio] = 0.0;
        continue;
      }
      std::vector<uint8_t> mask(static_cast<size_t>(width), 1);
      for (int64_t i = 0; i < remove; ++i) {
        mask[static_cast<size_t>(order[static_cast<size_t>(i)])] = 0;
      }
      auto [g2, w2] = rewrite_dense(g, weights, {{id, mask}});
      double acc = evaluate(g2, w2, eval_set, parallel).accuracy;
      table[id][ratio] = base_acc - acc;
    }
  }
  return table;
}

namespace {

// Piecewise-linear accuracy-drop estimate through (0, 0) and the measured
// grid, extrapolating the last segment.
double interp_drop(const std::map<double, double>& row, double ratio) {
  if (ratio <= 0.0 || row.empty()) return 0.0;
  double x0 = 0.0, y0 = 0.0;
  for (const auto& [x1, y1] : row) {
    if (ratio <= x1) {
      double t = (ratio - x0) / (x1 - x0);
      return std::max(0.0, y0 + t * (y1 - y0));
    }
    x0 = x1;
    y0 = y1;
  }
  auto last = std::prev(row.end());
  double slope = 0.0;
  if (row.size() >= 2) {
    auto prev = std::prev(last);
    slope = (last->second - prev->second) / (last->first - prev->first);
  }
  return std::max(0.0, last->second + slope * (ratio - last->first));
}

}  // namespace

PruneResult prune(const Graph& g, const WeightMap& weights, const PruneSpec& spec,
                  const Dataset& train_data, const Dataset& eval_data) {
  if (spec.target_pr < 0.0 || spec.target_pr >= 1.0) {
    throw ArgumentError("target PR must lie in [0, 1)");
  }
  if (spec.steps < 1) throw ArgumentError("steps must be >= 1");

  PruneReport report;
  report.target_pr = spec.target_pr;
  report.baseline_hash = weights_fnv1a(weights);

  int64_t base_flops = count_flops(g).total;
  int64_t base_params = count_params(g).total;

  if (spec.target_pr == 0.0) {
    for (const auto& n : g.nodes()) {
      if (prunable_kind(n.kind)) report.kept_widths[n.id] = node_width(n);
    }
    return {g, weights, std::move(report)};
  }

  std::set<std::string> protect = spec.protected_ids;
  protect.insert(output_layer_id(g));

  struct LayerState {
    std::string id;
    int64_t width = 0;    // original width
    int64_t removed = 0;  // cumulative removal target
    int64_t applied = 0;  // removal already rewritten into the graph
    int64_t cap = 0;      // max removable channels
  };
  std::vector<LayerState> layers;
  for (const auto& id : g.topo_order()) {
    const NodeSpec& n = g.node(id);
    if (!prunable_kind(n.kind) || protect.count(id)) continue;
    LayerState s;
    s.id = id;
    s.width = node_width(n);
    s.cap = static_cast<int64_t>(std::floor(spec.per_layer_cap *
                                            static_cast<double>(s.width)));
    layers.push_back(std::move(s));
  }
  if (layers.empty()) throw PruneError("graph has no prunable layers");

  SensitivityTable table =
      sensitivity_analysis(g, weights, eval_data, spec.sensitivity_ratios,
                           spec.fine_tune.parallel);

  auto projected_flops = [&](const std::vector<LayerState>& st) {
    std::map<std::string, int64_t> widths;
    for (const auto& s : st) widths[s.id] = s.width - s.removed;
    return count_flops(clone_with_widths(g, widths)).total;
  };

  Graph cur_g = g;
  WeightMap cur_w = weights;

  for (int round = 1; round <= spec.steps; ++round) {
    double target_reduction =
        spec.target_pr * static_cast<double>(round) / static_cast<double>(spec.steps);
    int64_t target_flops = static_cast<int64_t>(
        std::llround(static_cast<double>(base_flops) * (1.0 - target_reduction)));

    int64_t proj = projected_flops(layers);
    while (proj > target_flops) {
      int best = -1;
      int64_t best_step = 0, best_gain = 0;
      double best_score = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < layers.size(); ++i) {
        LayerState& s = layers[i];
        if (s.removed >= s.cap) continue;
        int64_t step = std::max<int64_t>(1, s.width / 32);
        step = std::min(step, s.cap - s.removed);
        auto trial = layers;
        trial[i].removed += step;
        int64_t gain = proj - projected_flops(trial);
        if (gain <= 0) continue;
        double cost = interp_drop(table.at(s.id),
                                  static_cast<double>(s.removed + step) /
                                      static_cast<double>(s.width)) -
                      interp_drop(table.at(s.id), static_cast<double>(s.removed) /
                                                      static_cast<double>(s.width));
        cost = std::max(0.0, cost);
        double score = cost / static_cast<double>(gain);
        if (score < best_score ||
            (score == best_score && gain > best_gain)) {
          best = static_cast<int>(i);
          best_step = step;
          best_gain = gain;
          best_score = score;
        }
      }
      if (best < 0) {
        std::string worst = layers.front().id;
        throw PruneError("target PR " + std::to_string(spec.target_pr) +
                         " unreachable: layer " + worst +
                         " (and every other) is at the per-layer cap");
      }
      layers[static_cast<size_t>(best)].removed += best_step;
      proj = projected_flops(layers);
    }

    // Rewrite the extra removals of this round into the dense graph.
    ChannelMask masks;
    for (auto& s : layers) {
      int64_t extra = s.removed - s.applied;
      if (extra <= 0) continue;
      int64_t cur_width = s.width - s.applied;
      auto order = rank_channels(cur_g, cur_w, s.id);
      std::vector<uint8_t> mask(static_cast<size_t>(cur_width), 1);
      for (int64_t i = 0; i < extra; ++i) {
        mask[static_cast<size_t>(order[static_cast<size_t>(i)])] = 0;
      }
      masks[s.id] = std::move(mask);
      s.applied = s.removed;
    }
    if (!masks.empty()) {
      auto [ng, nw] = rewrite_dense(cur_g, cur_w, masks);
      cur_g = std::move(ng);
      cur_w = std::move(nw);
    }

    PruneRound pr;
    pr.flop_reduction =
        1.0 - static_cast<double>(count_flops(cur_g).total) /
                  static_cast<double>(base_flops);
    pr.param_reduction =
        1.0 - static_cast<double>(count_params(cur_g).total) /
                  static_cast<double>(base_params);
    pr.acc_before = evaluate(cur_g, cur_w, eval_data, spec.fine_tune.parallel).accuracy;
    if (spec.fine_tune_epochs > 0) {
      TrainConfig ft = spec.fine_tune;
      ft.max_epochs = spec.fine_tune_epochs;
      ft.patience = spec.fine_tune_epochs;
      auto result = train(cur_g, cur_w, train_data, eval_data, ft);
      cur_w = std::move(result.weights);
    }
    pr.acc_after = evaluate(cur_g, cur_w, eval_data, spec.fine_tune.parallel).accuracy;
    report.rounds.push_back(pr);
  }

  for (const auto& n : cur_g.nodes()) {
    if (prunable_kind(n.kind)) report.kept_widths[n.id] = node_width(n);
  }
  report.achieved_flop_reduction = report.rounds.back().flop_reduction;
  report.achieved_param_reduction = report.rounds.back().param_reduction;
  return {std::move(cur_g), std::move(cur_w), std::move(report)};
}

void prune_report_to_csv(const PruneReport& r, std::ostream& os) {
  os << "round,flop_reduction,param_reduction,acc_before,acc_after\n";
  char buf[160];
  for (size_t i = 0; i < r.rounds.size(); ++i) {
    const PruneRound& p = r.rounds[i];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f\n", i + 1,
                  p.flop_reduction, p.param_reduction, p.acc_before, p.acc_after);
    os << buf;
  }
}

nlohmann::ordered_json prune_report_to_json(const PruneReport& r) {
  nlohmann::ordered_json j;
  j["target_pr"] = r.target_pr;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(r.baseline_hash));
  j["baseline_hash"] = hash;
  j["achieved_flop_reduction"] = r.achieved_flop_reduction;
  j["achieved_param_reduction"] = r.achieved_param_reduction;
  nlohmann::ordered_json widths = nlohmann::ordered_json::object();
  for (const auto& [id, w] : r.kept_widths) widths[id] = w;
  j["kept_widths"] = std::move(widths);
  nlohmann::ordered_json rounds = nlohmann::ordered_json::array();
  for (const auto& p : r.rounds) {
    nlohmann::ordered_json rj;
    rj["flop_reduction"] = p.flop_reduction;
    rj["param_reduction"] = p.param_reduction;
    rj["acc_before"] = p.acc_before;
    rj["acc_after"] = p.acc_after;
    rounds.push_back(std::move(rj));
  }
  j["rounds"] = std::move(rounds);
  return j;
}

uint64_t weights_fnv1a(const WeightMap& w) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix_bytes = [&](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [id, lw] : w) {
    mix_bytes(id.data(), id.size());
    auto kf = lw.kernel.f();
    mix_bytes(kf.data(), kf.size() * sizeof(float));
    auto bf = lw.bias.f();
    mix_bytes(bf.data(), bf.size() * sizeof(float));
  }
  return h;
}

}  // namespace cumulus
