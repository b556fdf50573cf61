#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cumulus/graph.hpp"
#include "cumulus/quantize.hpp"

namespace cumulus {

/// DPU-style single-computation-engine model. Defaults follow a B1600-like
/// configuration: 1600 MACs/cycle at 300 MHz, a 4 MiB activation budget (a
/// calibrated stand-in for the real banked buffer, recorded bank depth 2048),
/// 16 bytes/cycle memory movement, ideal efficiency 1.
struct DeviceModel {
  std::string name = "B1600-like";
  int64_t macs_per_cycle = 1600;
  double clock_hz = 300e6;
  int64_t activation_capacity_bytes = 4 * 1024 * 1024;
  int64_t bank_depth = 2048;  // provenance only
  double memory_bytes_per_cycle = 16.0;
  double efficiency = 1.0;  // eta in (0, 1]

  void validate() const;  // ArgumentError on non-positive fields or eta > 1
};

struct PlanStep {
  std::string node_id;
  std::vector<std::string> input_buffers;
  std::string output_buffer;
  int64_t footprint_bytes = 0;  // live inputs + output, 1 byte per element
  int64_t macs = 0;
  int64_t bytes_moved = 0;  // activations in/out plus parameter bytes
};

/// Topologically ordered steps (ties by node id), one per compute node;
/// buffers freed at last use. Deterministic for a given graph.
struct ExecutionPlan {
  std::string model_name;
  std::vector<PlanStep> steps;
  int64_t peak_footprint_bytes = 0;
};

struct CapacityError {
  std::string step_id;
  int64_t footprint_bytes = 0;
  int64_t capacity_bytes = 0;
};

ExecutionPlan compile_plan(const Graph& g, const DeviceModel& dev);
ExecutionPlan compile_plan(const Graph& g, const DeviceModel& dev,
                           const Shape& input_shape);
ExecutionPlan compile_plan(const QuantizedModel& qm, const DeviceModel& dev);

/// First step whose footprint exceeds the activation capacity, if any.
std::optional<CapacityError> check_buffers(const ExecutionPlan& plan,
                                           const DeviceModel& dev);

struct LatencyEstimate {
  double cycles = 0.0;
  double milliseconds = 0.0;
};

/// Roofline per step: max(macs / (macs_per_cycle * eta),
/// bytes_moved / memory_bytes_per_cycle) cycles.
LatencyEstimate estimate_latency(const ExecutionPlan& plan, const DeviceModel& dev);

/// Step table plus the one-line machine verdict `CAPACITY=OK|FAIL step=<id>`.
std::string plan_report(const ExecutionPlan& plan, const DeviceModel& dev);

}  // namespace cumulus
