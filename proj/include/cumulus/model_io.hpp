#pragma once

#include <map>
#include <string>
#include <utility>

#include "cumulus/graph.hpp"
#include "cumulus/tensor.hpp"

#include <json.hpp>

namespace cumulus {

struct LayerWeights {
  Tensor kernel;
  Tensor bias;
};

/// Weights per parameterized node id. std::map keeps blob entry order stable
/// (lexicographic by node id, kernel before bias).
using WeightMap = std::map<std::string, LayerWeights>;

bool is_parameterized(NodeKind k);

/// Expected kernel/bias shapes for one node under the resolved input shapes.
/// Conv2D and TransposedConv2D kernels are [kh, kw, in_c, out_c]; Dense
/// kernels are [in, units].
std::pair<Shape, Shape> weight_shapes(const Graph& g, const std::string& id,
                                      const std::map<std::string, Shape>& shapes);

/// Glorot-uniform kernels, zero biases; draws consumed in topological node
/// order so the result is a pure function of (graph, seed).
WeightMap init_model_weights(const Graph& g, Rng& rng);

nlohmann::ordered_json graph_to_json(const Graph& g);
Graph graph_from_json(const nlohmann::ordered_json& j);  // ModelIOError on bad manifest

/// Model package: directory with model.json and weights.cfw.
void save_model(const std::string& dir, const Graph& g, const WeightMap& weights);
std::pair<Graph, WeightMap> load_model(const std::string& dir);

}  // namespace cumulus
