#include "cumulus/model_io.hpp"

#include <filesystem>
#include <fstream>

#include "cumulus/blob.hpp"
#include "cumulus/errors.hpp"

namespace cumulus {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

bool is_parameterized(NodeKind k) {
  return k == NodeKind::Conv2D || k == NodeKind::TransposedConv2D || k == NodeKind::Dense;
}

std::pair<Shape, Shape> weight_shapes(const Graph& g, const std::string& id,
                                      const std::map<std::string, Shape>& shapes) {
  const NodeSpec& n = g.node(id);
  switch (n.kind) {
    case NodeKind::Conv2D: {
      const auto& p = n.conv();
      int64_t in_c = shapes.at(n.inputs[0])[3];
      return {{p.kernel_h, p.kernel_w, in_c, p.out_channels}, {p.out_channels}};
    }
    case NodeKind::TransposedConv2D: {
      const auto& p = n.tconv();
      int64_t in_c = shapes.at(n.inputs[0])[3];
      return {{p.kernel_h, p.kernel_w, in_c, p.out_channels}, {p.out_channels}};
    }
    case NodeKind::Dense: {
      int64_t in = shapes.at(n.inputs[0])[1];
      return {{in, n.dense().units}, {n.dense().units}};
    }
    default:
      throw ArgumentError("node " + id + " has no weights");
  }
}

WeightMap init_model_weights(const Graph& g, Rng& rng) {
  WeightMap w;
  auto shapes = infer_shapes(g, g.input_shape);
  for (const auto& id : g.topo_order()) {
    if (!is_parameterized(g.node(id).kind)) continue;
    auto [kshape, bshape] = weight_shapes(g, id, shapes);
    LayerWeights lw;
    lw.kernel = init_weights(kshape, rng, InitScheme::GlorotUniform);
    lw.bias = init_weights(bshape, rng, InitScheme::Zeros);
    w.emplace(id, std::move(lw));
  }
  return w;
}

namespace {

NodeKind kind_from_name(const std::string& s) {
  for (NodeKind k : {NodeKind::Input, NodeKind::Conv2D, NodeKind::TransposedConv2D,
                     NodeKind::MaxPool2D, NodeKind::Dense, NodeKind::Flatten,
                     NodeKind::Concat, NodeKind::Dropout, NodeKind::Activation}) {
    if (s == node_kind_name(k)) return k;
  }
  throw ModelIOError("manifest has unknown node kind '" + s + "'");
}

ordered_json params_to_json(const NodeSpec& n) {
  ordered_json j = ordered_json::object();
  switch (n.kind) {
    case NodeKind::Conv2D: {
      const auto& p = n.conv();
      j["out_channels"] = p.out_channels;
      j["kernel_h"] = p.kernel_h;
      j["kernel_w"] = p.kernel_w;
      j["stride"] = p.stride;
      j["padding"] = padding_name(p.padding);
      j["l2_lambda"] = p.l2_lambda;
      break;
    }
    case NodeKind::TransposedConv2D: {
      const auto& p = n.tconv();
      j["out_channels"] = p.out_channels;
      j["kernel_h"] = p.kernel_h;
      j["kernel_w"] = p.kernel_w;
      j["stride"] = p.stride;
      j["l2_lambda"] = p.l2_lambda;
      break;
    }
    case NodeKind::MaxPool2D: {
      const auto& p = n.pool();
      j["pool_h"] = p.pool_h;
      j["pool_w"] = p.pool_w;
      j["stride_h"] = p.stride_h;
      j["stride_w"] = p.stride_w;
      j["padding"] = padding_name(p.padding);
      break;
    }
    case NodeKind::Dense: {
      const auto& p = n.dense();
      j["units"] = p.units;
      j["l2_lambda"] = p.l2_lambda;
      break;
    }
    case NodeKind::Dropout:
      j["rate"] = n.dropout().rate;
      break;
    case NodeKind::Activation:
      j["kind"] = act_kind_name(n.activation().kind);
      break;
    default:
      break;
  }
  return j;
}

NodeParams params_from_json(NodeKind kind, const ordered_json& j) {
  try {
    switch (kind) {
      case NodeKind::Conv2D: {
        Conv2DParams p;
        p.out_channels = j.at("out_channels").get<int64_t>();
        p.kernel_h = j.at("kernel_h").get<int>();
        p.kernel_w = j.at("kernel_w").get<int>();
        p.stride = j.at("stride").get<int>();
        p.padding = j.at("padding").get<std::string>() == "same" ? Padding::Same
                                                                 : Padding::Valid;
        p.l2_lambda = j.at("l2_lambda").get<double>();
        return p;
      }
      case NodeKind::TransposedConv2D: {
        TransposedConv2DParams p;
        p.out_channels = j.at("out_channels").get<int64_t>();
        p.kernel_h = j.at("kernel_h").get<int>();
        p.kernel_w = j.at("kernel_w").get<int>();
        p.stride = j.at("stride").get<int>();
        p.l2_lambda = j.at("l2_lambda").get<double>();
        return p;
      }
      case NodeKind::MaxPool2D: {
        MaxPool2DParams p;
        p.pool_h = j.at("pool_h").get<int>();
        p.pool_w = j.at("pool_w").get<int>();
        p.stride_h = j.at("stride_h").get<int>();
        p.stride_w = j.at("stride_w").get<int>();
        p.padding = j.at("padding").get<std::string>() == "same" ? Padding::Same
                                                                 : Padding::Valid;
        return p;
      }
      case NodeKind::Dense: {
        DenseParams p;
        p.units = j.at("units").get<int64_t>();
        p.l2_lambda = j.at("l2_lambda").get<double>();
        return p;
      }
      case NodeKind::Dropout:
        return DropoutParams{j.at("rate").get<double>()};
      case NodeKind::Activation: {
        std::string a = j.at("kind").get<std::string>();
        if (a != "relu" && a != "sigmoid")
          throw ModelIOError("unknown activation '" + a + "'");
        return ActivationParams{a == "relu" ? ActKind::Relu : ActKind::Sigmoid};
      }
      default:
        return std::monostate{};
    }
  } catch (const ordered_json::exception& e) {
    throw ModelIOError(std::string("bad node params in manifest: ") + e.what());
  }
}

}  // namespace

ordered_json graph_to_json(const Graph& g) {
  ordered_json j;
  j["schema_version"] = 1;
  j["arch_name"] = g.arch_name;
  j["input_shape"] = g.input_shape;
  ordered_json nodes = ordered_json::array();
  for (const auto& id : g.topo_order()) {
    const NodeSpec& n = g.node(id);
    ordered_json nj;
    nj["id"] = n.id;
    nj["kind"] = node_kind_name(n.kind);
    nj["params"] = params_to_json(n);
    nj["inputs"] = n.inputs;
    nodes.push_back(std::move(nj));
  }
  j["nodes"] = std::move(nodes);
  return j;
}

Graph graph_from_json(const ordered_json& j) {
  Graph g;
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw ModelIOError("unsupported schema_version");
    g.arch_name = j.at("arch_name").get<std::string>();
    g.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& nj : j.at("nodes")) {
      NodeSpec n;
      n.id = nj.at("id").get<std::string>();
      n.kind = kind_from_name(nj.at("kind").get<std::string>());
      n.params = params_from_json(n.kind, nj.at("params"));
      n.inputs = nj.at("inputs").get<std::vector<std::string>>();
      g.add(std::move(n));
    }
  } catch (const ordered_json::exception& e) {
    throw ModelIOError(std::string("bad model manifest: ") + e.what());
  }
  try {
    g.validate();
  } catch (const ArchError& e) {
    throw ModelIOError(std::string("invalid graph in manifest: ") + e.what());
  }
  return g;
}

void save_model(const std::string& dir, const Graph& g, const WeightMap& weights) {
  auto shapes = infer_shapes(g, g.input_shape);
  std::vector<Tensor> entries;
  for (const auto& id : g.topo_order()) {
    if (!is_parameterized(g.node(id).kind)) continue;
    auto it = weights.find(id);
    if (it == weights.end()) throw ModelIOError("missing weights for node " + id);
    auto [kshape, bshape] = weight_shapes(g, id, shapes);
    if (it->second.kernel.shape() != kshape || it->second.bias.shape() != bshape) {
      throw ModelIOError("weight shape mismatch for node " + id);
    }
  }
  // Blob entries ordered by node id, kernel then bias.
  for (const auto& [id, lw] : weights) {
    if (!g.has(id)) throw ModelIOError("weights reference unknown node " + id);
    entries.push_back(lw.kernel);
    entries.push_back(lw.bias);
  }
  fs::create_directories(dir);
  std::ofstream mf(fs::path(dir) / "model.json", std::ios::trunc);
  if (!mf) throw ModelIOError("cannot write model.json under " + dir);
  mf << graph_to_json(g).dump(2) << "\n";
  save_tensors((fs::path(dir) / "weights.cfw").string(), entries);
}

std::pair<Graph, WeightMap> load_model(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "model.json");
  if (!mf) throw ModelIOError("cannot open model.json under " + dir);
  ordered_json j;
  try {
    j = ordered_json::parse(mf);
  } catch (const ordered_json::exception& e) {
    throw ModelIOError(std::string("model.json parse error: ") + e.what());
  }
  Graph g = graph_from_json(j);
  auto shapes = infer_shapes(g, g.input_shape);

  std::vector<std::string> param_ids;
  for (const auto& n : g.nodes())
    if (is_parameterized(n.kind)) param_ids.push_back(n.id);
  std::sort(param_ids.begin(), param_ids.end());

  auto entries = load_tensors((fs::path(dir) / "weights.cfw").string());
  if (entries.size() != param_ids.size() * 2) {
    throw ModelIOError("weights.cfw holds " + std::to_string(entries.size()) +
                       " entries, manifest expects " +
                       std::to_string(param_ids.size() * 2));
  }
  WeightMap w;
  for (size_t i = 0; i < param_ids.size(); ++i) {
    const std::string& id = param_ids[i];
    auto [kshape, bshape] = weight_shapes(g, id, shapes);
    Tensor kernel = std::move(entries[2 * i]);
    Tensor bias = std::move(entries[2 * i + 1]);
    if (kernel.shape() != kshape || bias.shape() != bshape) {
      throw ModelIOError("blob shape mismatch for node " + id);
    }
    w.emplace(id, LayerWeights{std::move(kernel), std::move(bias)});
  }
  return {std::move(g), std::move(w)};
}

}  // namespace cumulus
