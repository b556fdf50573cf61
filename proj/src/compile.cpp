#include "cumulus/compile.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "cumulus/errors.hpp"
#include "cumulus/model_io.hpp"

namespace cumulus {

void DeviceModel::validate() const {
  if (macs_per_cycle < 1 || clock_hz <= 0 || activation_capacity_bytes < 1 ||
      bank_depth < 1 || memory_bytes_per_cycle <= 0) {
    throw ArgumentError("device model fields must be positive");
  }
  if (efficiency <= 0.0 || efficiency > 1.0) {
    throw ArgumentError("device efficiency must lie in (0, 1]");
  }
}

ExecutionPlan compile_plan(const Graph& g, const DeviceModel& dev,
                           const Shape& input_shape) {
  dev.validate();
  g.validate();  // ArchError on cycles
  auto shapes = infer_shapes(g, input_shape);

  // Flatten is a free reshape and dropout is the identity at inference; both
  // alias their producer's buffer instead of becoming steps.
  std::map<std::string, std::string> buffer_of;

  ExecutionPlan plan;
  plan.model_name = g.arch_name;
  for (const auto& id : g.topo_order()) {
    const NodeSpec& n = g.node(id);
    if (n.kind == NodeKind::Input) {
      buffer_of[id] = id;
      continue;
    }
    if (n.kind == NodeKind::Flatten || n.kind == NodeKind::Dropout) {
      buffer_of[id] = buffer_of.at(n.inputs[0]);
      continue;
    }
    buffer_of[id] = id;
    PlanStep step;
    step.node_id = id;
    for (const auto& in_id : n.inputs) step.input_buffers.push_back(buffer_of.at(in_id));
    step.output_buffer = id;
    // Deployed int8 byte accounting: 1 byte per activation element.
    int64_t in_bytes = 0;
    for (const auto& in_id : n.inputs) in_bytes += shape_numel(shapes.at(in_id));
    int64_t out_bytes = shape_numel(shapes.at(id));
    step.footprint_bytes = in_bytes + out_bytes;
    step.macs = node_macs(g, n, shapes);
    int64_t param_bytes = 0;
    if (is_parameterized(n.kind)) {
      // int8 kernels, int32 biases.
      auto [kshape, bshape] = weight_shapes(g, id, shapes);
      param_bytes = shape_numel(kshape) + 4 * shape_numel(bshape);
    }
    step.bytes_moved = in_bytes + out_bytes + param_bytes;
    plan.peak_footprint_bytes = std::max(plan.peak_footprint_bytes, step.footprint_bytes);
    plan.steps.push_back(std::move(step));
  }
  return plan;
}

ExecutionPlan compile_plan(const Graph& g, const DeviceModel& dev) {
  return compile_plan(g, dev, g.input_shape);
}

ExecutionPlan compile_plan(const QuantizedModel& qm, const DeviceModel& dev) {
  return compile_plan(qm.graph, dev, qm.graph.input_shape);
}

std::optional<CapacityError> check_buffers(const ExecutionPlan& plan,
                                           const DeviceModel& dev) {
  dev.validate();
  for (const auto& step : plan.steps) {
    if (step.footprint_bytes > dev.activation_capacity_bytes) {
      return CapacityError{step.node_id, step.footprint_bytes,
                           dev.activation_capacity_bytes};
    }
  }
  return std::nullopt;
}

LatencyEstimate estimate_latency(const ExecutionPlan& plan, const DeviceModel& dev) {
  dev.validate();
  double total = 0.0;
  for (const auto& step : plan.steps) {
    double compute = static_cast<double>(step.macs) /
                     (static_cast<double>(dev.macs_per_cycle) * dev.efficiency);
    double memory = static_cast<double>(step.bytes_moved) / dev.memory_bytes_per_cycle;
    total += std::max(compute, memory);
  }
  return {total, total / dev.clock_hz * 1e3};
}

std::string plan_report(const ExecutionPlan& plan, const DeviceModel& dev) {
  std::ostringstream os;
  os << "model " << plan.model_name << " on " << dev.name << " ("
     << dev.macs_per_cycle << " MACs/cycle, capacity "
     << dev.activation_capacity_bytes << " B)\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-14s %14s %14s %14s\n", "step", "footprint_B",
                "macs", "bytes_moved");
  os << buf;
  for (const auto& s : plan.steps) {
    std::snprintf(buf, sizeof(buf), "%-14s %14lld %14lld %14lld\n", s.node_id.c_str(),
                  static_cast<long long>(s.footprint_bytes),
                  static_cast<long long>(s.macs),
                  static_cast<long long>(s.bytes_moved));
    os << buf;
  }
  auto latency = estimate_latency(plan, dev);
  std::snprintf(buf, sizeof(buf), "peak_footprint=%lld cycles=%.0f est_ms=%.3f\n",
                static_cast<long long>(plan.peak_footprint_bytes), latency.cycles,
                latency.milliseconds);
  os << buf;
  auto err = check_buffers(plan, dev);
  if (err) {
    os << "CAPACITY=FAIL step=" << err->step_id << "\n";
  } else {
    os << "CAPACITY=OK\n";
  }
  return os.str();
}

}  // namespace cumulus
