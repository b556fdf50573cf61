#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "cumulus/tensor.hpp"

namespace cumulus {

enum class NodeKind : uint8_t {
  Input,
  Conv2D,
  TransposedConv2D,
  MaxPool2D,
  Dense,
  Flatten,
  Concat,
  Dropout,
  Activation,
};

enum class Padding : uint8_t { Same, Valid };
enum class ActKind : uint8_t { Relu, Sigmoid };

const char* node_kind_name(NodeKind k);
const char* padding_name(Padding p);
const char* act_kind_name(ActKind a);

struct Conv2DParams {
  int64_t out_channels = 0;
  int kernel_h = 1, kernel_w = 1;
  int stride = 1;
  Padding padding = Padding::Same;
  double l2_lambda = 0.0;
};

struct TransposedConv2DParams {
  int64_t out_channels = 0;
  int kernel_h = 2, kernel_w = 2;
  int stride = 2;
  double l2_lambda = 0.0;
};

struct MaxPool2DParams {
  int pool_h = 2, pool_w = 2;
  int stride_h = 2, stride_w = 2;
  Padding padding = Padding::Valid;
};

struct DenseParams {
  int64_t units = 0;
  double l2_lambda = 0.0;
};

struct DropoutParams {
  double rate = 0.0;
};

struct ActivationParams {
  ActKind kind = ActKind::Relu;
};

using NodeParams = std::variant<std::monostate, Conv2DParams, TransposedConv2DParams,
                                MaxPool2DParams, DenseParams, DropoutParams,
                                ActivationParams>;

struct NodeSpec {
  std::string id;
  NodeKind kind = NodeKind::Input;
  NodeParams params;
  std::vector<std::string> inputs;  // Concat takes >= 2, Input takes 0, rest take 1

  const Conv2DParams& conv() const { return std::get<Conv2DParams>(params); }
  const TransposedConv2DParams& tconv() const {
    return std::get<TransposedConv2DParams>(params);
  }
  const MaxPool2DParams& pool() const { return std::get<MaxPool2DParams>(params); }
  const DenseParams& dense() const { return std::get<DenseParams>(params); }
  const DropoutParams& dropout() const { return std::get<DropoutParams>(params); }
  const ActivationParams& activation() const { return std::get<ActivationParams>(params); }
};

/// Acyclic layer graph: nodes in insertion order (builders emit topological
/// order), exactly one Input and one terminal node. Immutable after
/// construction; operations below are pure.
class Graph {
 public:
  std::string arch_name;
  Shape input_shape;  // declared nominal input, [1, H, W, C]

  void add(NodeSpec node);
  bool has(const std::string& id) const { return index_.count(id) > 0; }
  const NodeSpec& node(const std::string& id) const;
  NodeSpec& node_mut(const std::string& id);
  const std::vector<NodeSpec>& nodes() const { return nodes_; }

  /// Ids in deterministic topological order (Kahn, ties by node id).
  std::vector<std::string> topo_order() const;
  /// The unique node no other node consumes.
  const std::string& output_id() const;
  /// The unique Input node.
  const std::string& input_id() const;
  std::vector<std::string> consumers(const std::string& id) const;

  /// Structural checks: arity, single input/terminal, acyclicity.
  void validate() const;

 private:
  std::vector<NodeSpec> nodes_;
  std::unordered_map<std::string, size_t> index_;
};

bool graph_structurally_equal(const Graph& a, const Graph& b);

/// Output extents per node id. Throws ShapeError on invalid geometry and on
/// Concat extent mismatches.
std::map<std::string, Shape> infer_shapes(const Graph& g, const Shape& input_shape);

struct CostReport {
  std::map<std::string, int64_t> per_node;
  int64_t total = 0;
};

/// Exact parameter counts: conv/tconv kh*kw*in*out + out, dense in*units +
/// units, everything else 0.
CostReport count_params(const Graph& g);

/// FLOPs under the declared convention: conv/tconv/dense cost 2 ops per MAC;
/// bias adds, activation evaluations and pooling take 1 op per output
/// element. Transposed convolution counts only taps that touch real input
/// elements (in_h * in_w * kh * kw * in_c * out_c MACs).
CostReport count_flops(const Graph& g, const Shape& input_shape);
CostReport count_flops(const Graph& g);  // uses g.input_shape

/// MACs for one node given resolved shapes (shared by FLOP counting and the
/// execution-plan builder). Zero for non-arithmetic nodes.
int64_t node_macs(const Graph& g, const NodeSpec& node,
                  const std::map<std::string, Shape>& shapes);

}  // namespace cumulus
