#include "cumulus/graph.hpp"

#include <algorithm>
#include <queue>
#include <set>

#include "cumulus/errors.hpp"

namespace cumulus {

const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Input: return "Input";
    case NodeKind::Conv2D: return "Conv2D";
    case NodeKind::TransposedConv2D: return "TransposedConv2D";
    case NodeKind::MaxPool2D: return "MaxPool2D";
    case NodeKind::Dense: return "Dense";
    case NodeKind::Flatten: return "Flatten";
    case NodeKind::Concat: return "Concat";
    case NodeKind::Dropout: return "Dropout";
    case NodeKind::Activation: return "Activation";
  }
  return "?";
}

const char* padding_name(Padding p) { return p == Padding::Same ? "same" : "valid"; }
const char* act_kind_name(ActKind a) { return a == ActKind::Relu ? "relu" : "sigmoid"; }

void Graph::add(NodeSpec node) {
  if (index_.count(node.id)) throw ArchError("duplicate node id " + node.id);
  index_[node.id] = nodes_.size();
  nodes_.push_back(std::move(node));
}

const NodeSpec& Graph::node(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ArchError("unknown node id " + id);
  return nodes_[it->second];
}

NodeSpec& Graph::node_mut(const std::string& id) {
  auto it = index_.find(id);
  if (it == index_.end()) throw ArchError("unknown node id " + id);
  return nodes_[it->second];
}

std::vector<std::string> Graph::topo_order() const {
  std::map<std::string, int> pending;  // remaining unprocessed inputs
  std::map<std::string, std::vector<std::string>> outs;
  for (const auto& n : nodes_) {
    pending[n.id] = static_cast<int>(n.inputs.size());
    for (const auto& in : n.inputs) {
      if (!has(in)) throw ArchError("node " + n.id + " references unknown input " + in);
      outs[in].push_back(n.id);
    }
  }
  std::set<std::string> ready;
  for (const auto& [id, deg] : pending)
    if (deg == 0) ready.insert(id);
  std::vector<std::string> order;
  order.reserve(nodes_.size());
  while (!ready.empty()) {
    std::string id = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(id);
    for (const auto& c : outs[id]) {
      if (--pending[c] == 0) ready.insert(c);
    }
  }
  if (order.size() != nodes_.size()) throw ArchError("graph has a cycle");
  return order;
}

const std::string& Graph::input_id() const {
  const std::string* found = nullptr;
  for (const auto& n : nodes_) {
    if (n.kind == NodeKind::Input) {
      if (found) throw ArchError("graph has multiple Input nodes");
      found = &n.id;
    }
  }
  if (!found) throw ArchError("graph has no Input node");
  return *found;
}

const std::string& Graph::output_id() const {
  std::set<std::string> consumed;
  for (const auto& n : nodes_)
    for (const auto& in : n.inputs) consumed.insert(in);
  const std::string* found = nullptr;
  for (const auto& n : nodes_) {
    if (!consumed.count(n.id)) {
      if (found) throw ArchError("graph has multiple terminal nodes");
      found = &n.id;
    }
  }
  if (!found) throw ArchError("graph has no terminal node");
  return *found;
}

std::vector<std::string> Graph::consumers(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& n : nodes_) {
    if (std::find(n.inputs.begin(), n.inputs.end(), id) != n.inputs.end())
      out.push_back(n.id);
  }
  return out;
}

void Graph::validate() const {
  for (const auto& n : nodes_) {
    size_t arity = n.inputs.size();
    if (n.kind == NodeKind::Input && arity != 0)
      throw ArchError("Input node " + n.id + " must take no inputs");
    if (n.kind == NodeKind::Concat && arity < 2)
      throw ArchError("Concat node " + n.id + " needs >= 2 inputs");
    if (n.kind != NodeKind::Input && n.kind != NodeKind::Concat && arity != 1)
      throw ArchError("node " + n.id + " must take exactly 1 input");
  }
  input_id();
  output_id();
  topo_order();
}

bool graph_structurally_equal(const Graph& a, const Graph& b) {
  if (a.arch_name != b.arch_name || a.input_shape != b.input_shape) return false;
  if (a.nodes().size() != b.nodes().size()) return false;
  for (size_t i = 0; i < a.nodes().size(); ++i) {
    const NodeSpec& x = a.nodes()[i];
    const NodeSpec& y = b.nodes()[i];
    if (x.id != y.id || x.kind != y.kind || x.inputs != y.inputs) return false;
    if (x.params.index() != y.params.index()) return false;
    bool same = std::visit(
        [&](const auto& px) {
          using P = std::decay_t<decltype(px)>;
          const P& py = std::get<P>(y.params);
          if constexpr (std::is_same_v<P, std::monostate>) {
            (void)py;
            return true;
          } else if constexpr (std::is_same_v<P, Conv2DParams>) {
            return px.out_channels == py.out_channels && px.kernel_h == py.kernel_h &&
                   px.kernel_w == py.kernel_w && px.stride == py.stride &&
                   px.padding == py.padding && px.l2_lambda == py.l2_lambda;
          } else if constexpr (std::is_same_v<P, TransposedConv2DParams>) {
            return px.out_channels == py.out_channels && px.kernel_h == py.kernel_h &&
                   px.kernel_w == py.kernel_w && px.stride == py.stride &&
                   px.l2_lambda == py.l2_lambda;
          } else if constexpr (std::is_same_v<P, MaxPool2DParams>) {
            return px.pool_h == py.pool_h && px.pool_w == py.pool_w &&
                   px.stride_h == py.stride_h && px.stride_w == py.stride_w &&
                   px.padding == py.padding;
          } else if constexpr (std::is_same_v<P, DenseParams>) {
            return px.units == py.units && px.l2_lambda == py.l2_lambda;
          } else if constexpr (std::is_same_v<P, DropoutParams>) {
            return px.rate == py.rate;
          } else if constexpr (std::is_same_v<P, ActivationParams>) {
            return px.kind == py.kind;
          }
        },
        x.params);
    if (!same) return false;
  }
  return true;
}

namespace {

int64_t conv_out_extent(int64_t in, int k, int stride, Padding pad) {
  int64_t out;
  if (pad == Padding::Same) {
    out = (in + stride - 1) / stride;  // ceil
  } else {
    out = (in - k) / stride + 1;
  }
  if (out < 1 || (pad == Padding::Valid && in < k)) {
    throw ShapeError("non-positive extent from window " + std::to_string(k) +
                     " stride " + std::to_string(stride) + " on input " +
                     std::to_string(in));
  }
  return out;
}

}  // namespace

std::map<std::string, Shape> infer_shapes(const Graph& g, const Shape& input_shape) {
  if (input_shape.size() != 4 || input_shape[0] != 1) {
    throw ShapeError("graph input must be rank 4 with batch 1, got " +
                     shape_str(input_shape));
  }
  shape_numel(input_shape);
  std::map<std::string, Shape> shapes;
  for (const auto& id : g.topo_order()) {
    const NodeSpec& n = g.node(id);
    switch (n.kind) {
      case NodeKind::Input:
        shapes[id] = input_shape;
        break;
      case NodeKind::Conv2D: {
        const Shape& in = shapes.at(n.inputs[0]);
        if (in.size() != 4) throw ShapeError("Conv2D " + id + " needs rank-4 input");
        const auto& p = n.conv();
        Shape out{1, conv_out_extent(in[1], p.kernel_h, p.stride, p.padding),
                  conv_out_extent(in[2], p.kernel_w, p.stride, p.padding),
                  p.out_channels};
        shapes[id] = out;
        break;
      }
      case NodeKind::TransposedConv2D: {
        const Shape& in = shapes.at(n.inputs[0]);
        if (in.size() != 4)
          throw ShapeError("TransposedConv2D " + id + " needs rank-4 input");
        const auto& p = n.tconv();
        shapes[id] = Shape{1, (in[1] - 1) * p.stride + p.kernel_h,
                           (in[2] - 1) * p.stride + p.kernel_w, p.out_channels};
        break;
      }
      case NodeKind::MaxPool2D: {
        const Shape& in = shapes.at(n.inputs[0]);
        if (in.size() != 4) throw ShapeError("MaxPool2D " + id + " needs rank-4 input");
        const auto& p = n.pool();
        shapes[id] = Shape{1, conv_out_extent(in[1], p.pool_h, p.stride_h, p.padding),
                           conv_out_extent(in[2], p.pool_w, p.stride_w, p.padding),
                           in[3]};
        break;
      }
      case NodeKind::Dense: {
        const Shape& in = shapes.at(n.inputs[0]);
        if (in.size() != 2)
          throw ShapeError("Dense " + id + " needs rank-2 input, got " + shape_str(in));
        shapes[id] = Shape{1, n.dense().units};
        break;
      }
      case NodeKind::Flatten: {
        const Shape& in = shapes.at(n.inputs[0]);
        shapes[id] = Shape{1, shape_numel(in)};
        break;
      }
      case NodeKind::Concat: {
        Shape first = shapes.at(n.inputs[0]);
        if (first.size() != 4) throw ShapeError("Concat " + id + " needs rank-4 inputs");
        int64_t channels = first[3];
        for (size_t i = 1; i < n.inputs.size(); ++i) {
          const Shape& s = shapes.at(n.inputs[i]);
          if (s.size() != 4 || s[0] != first[0] || s[1] != first[1] || s[2] != first[2]) {
            throw ShapeError("Concat " + id + " extent mismatch: " + shape_str(first) +
                             " vs " + shape_str(s));
          }
          channels += s[3];
        }
        shapes[id] = Shape{first[0], first[1], first[2], channels};
        break;
      }
      case NodeKind::Dropout:
      case NodeKind::Activation:
        shapes[id] = shapes.at(n.inputs[0]);
        break;
    }
  }
  return shapes;
}

CostReport count_params(const Graph& g) {
  CostReport r;
  // Channel extents come from shape inference at the declared input.
  auto shapes = infer_shapes(g, g.input_shape);
  for (const auto& n : g.nodes()) {
    int64_t p = 0;
    switch (n.kind) {
      case NodeKind::Conv2D: {
        int64_t in_c = shapes.at(n.inputs[0])[3];
        const auto& c = n.conv();
        p = static_cast<int64_t>(c.kernel_h) * c.kernel_w * in_c * c.out_channels +
            c.out_channels;
        break;
      }
      case NodeKind::TransposedConv2D: {
        int64_t in_c = shapes.at(n.inputs[0])[3];
        const auto& c = n.tconv();
        p = static_cast<int64_t>(c.kernel_h) * c.kernel_w * in_c * c.out_channels +
            c.out_channels;
        break;
      }
      case NodeKind::Dense: {
        int64_t in = shapes.at(n.inputs[0])[1];
        p = in * n.dense().units + n.dense().units;
        break;
      }
      default:
        break;
    }
    r.per_node[n.id] = p;
    r.total += p;
  }
  return r;
}

int64_t node_macs(const Graph& g, const NodeSpec& n,
                  const std::map<std::string, Shape>& shapes) {
  switch (n.kind) {
    case NodeKind::Conv2D: {
      const Shape& out = shapes.at(n.id);
      int64_t in_c = shapes.at(n.inputs[0])[3];
      const auto& p = n.conv();
      return out[1] * out[2] * out[3] * p.kernel_h * p.kernel_w * in_c;
    }
    case NodeKind::TransposedConv2D: {
      // Count only taps that touch real input elements: every input element
      // feeds kh*kw output positions.
      const Shape& in = shapes.at(n.inputs[0]);
      const auto& p = n.tconv();
      return in[1] * in[2] * in[3] * p.kernel_h * p.kernel_w * p.out_channels;
    }
    case NodeKind::Dense: {
      int64_t in = shapes.at(n.inputs[0])[1];
      return in * n.dense().units;
    }
    default:
      return 0;
  }
}

CostReport count_flops(const Graph& g, const Shape& input_shape) {
  CostReport r;
  auto shapes = infer_shapes(g, input_shape);
  for (const auto& n : g.nodes()) {
    int64_t flops = 0;
    int64_t out_elems = (n.kind == NodeKind::Input) ? 0 : shape_numel(shapes.at(n.id));
    switch (n.kind) {
      case NodeKind::Conv2D:
      case NodeKind::TransposedConv2D:
      case NodeKind::Dense:
        flops = 2 * node_macs(g, n, shapes) + out_elems;  // MACs + bias adds
        break;
      case NodeKind::Activation:
      case NodeKind::MaxPool2D:
        flops = out_elems;
        break;
      default:
        flops = 0;
    }
    r.per_node[n.id] = flops;
    r.total += flops;
  }
  return r;
}

CostReport count_flops(const Graph& g) { return count_flops(g, g.input_shape); }

}  // namespace cumulus
