#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "cumulus/architectures.hpp"
#include "cumulus/compile.hpp"
#include "cumulus/errors.hpp"
#include "cumulus/prune.hpp"

using namespace cumulus;

TEST_CASE("conv-dense chain lowers to two steps in topological order") {
  Graph g;
  g.arch_name = "chain";
  g.input_shape = {1, 4, 4, 2};
  g.add({"input", NodeKind::Input, std::monostate{}, {}});
  g.add({"conv", NodeKind::Conv2D, Conv2DParams{3, 3, 3, 1, Padding::Same, 0.0},
         {"input"}});
  g.add({"flat", NodeKind::Flatten, std::monostate{}, {"conv"}});
  g.add({"dense", NodeKind::Dense, DenseParams{2, 0.0}, {"flat"}});
  DeviceModel dev;
  auto plan = compile_plan(g, dev);
  REQUIRE(plan.steps.size() == 2);  // flatten aliases, no step
  CHECK(plan.steps[0].node_id == "conv");
  CHECK(plan.steps[1].node_id == "dense");
  CHECK(plan.steps[1].input_buffers == std::vector<std::string>{"conv"});
}

TEST_CASE("u_net concats list both live buffers") {
  Graph g = build_architecture("u_net");
  auto plan = compile_plan(g, DeviceModel{});
  int concats = 0;
  for (const auto& s : plan.steps) {
    if (g.node(s.node_id).kind == NodeKind::Concat) {
      ++concats;
      CHECK(s.input_buffers.size() == 2);
      CHECK(s.input_buffers[0] != s.input_buffers[1]);
    }
  }
  CHECK(concats == 4);
  // dec4 concat: 16 + 16 channels in at 256x256, 32 out: exactly the 4 MiB
  // budget, the binding step of the whole network.
  for (const auto& s : plan.steps) {
    if (s.node_id == "dec4_cat") CHECK(s.footprint_bytes == 4 * 1024 * 1024);
  }
  CHECK(plan.peak_footprint_bytes == 4 * 1024 * 1024);
}

TEST_CASE("every buffer is written before it is read") {
  for (const auto& name : architecture_names()) {
    Graph g = build_architecture(name);
    auto plan = compile_plan(g, DeviceModel{});
    std::set<std::string> written = {"input"};
    for (const auto& s : plan.steps) {
      for (const auto& b : s.input_buffers) CHECK(written.count(b) == 1);
      written.insert(s.output_buffer);
    }
  }
}

TEST_CASE("compilation is deterministic") {
  Graph g = build_architecture("u_net");
  auto a = compile_plan(g, DeviceModel{});
  auto b = compile_plan(g, DeviceModel{});
  REQUIRE(a.steps.size() == b.steps.size());
  for (size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].node_id == b.steps[i].node_id);
    CHECK(a.steps[i].footprint_bytes == b.steps[i].footprint_bytes);
    CHECK(a.steps[i].macs == b.steps[i].macs);
    CHECK(a.steps[i].bytes_moved == b.steps[i].bytes_moved);
  }
}

TEST_CASE("capacity: scene_net fails at 512 on the first conv, passes at 256") {
  DeviceModel dev;
  Graph big = build_architecture("scene_net", 512);
  auto plan = compile_plan(big, dev);
  auto err = check_buffers(plan, dev);
  REQUIRE(err.has_value());
  CHECK(err->step_id == "conv1");
  CHECK(err->footprint_bytes == int64_t(512) * 512 * 12 + int64_t(512) * 512 * 16);
  CHECK(err->footprint_bytes > dev.activation_capacity_bytes);

  Graph nominal = build_architecture("scene_net");
  CHECK(!check_buffers(compile_plan(nominal, dev), dev).has_value());
}

TEST_CASE("all four architectures fit the device at nominal sizes") {
  DeviceModel dev;
  for (const auto& name : architecture_names()) {
    Graph g = build_architecture(name);
    CHECK(!check_buffers(compile_plan(g, dev), dev).has_value());
  }
}

TEST_CASE("a single tiny dense layer passes trivially") {
  Graph g;
  g.arch_name = "tiny";
  g.input_shape = {1, 12, 1, 1};
  g.add({"input", NodeKind::Input, std::monostate{}, {}});
  g.add({"flat", NodeKind::Flatten, std::monostate{}, {"input"}});
  g.add({"dense", NodeKind::Dense, DenseParams{1, 0.0}, {"flat"}});
  DeviceModel dev;
  CHECK(!check_buffers(compile_plan(g, dev), dev).has_value());
}

TEST_CASE("capacity verdict is monotone in the capacity") {
  Graph g = build_architecture("scene_net", 512);
  DeviceModel dev;
  auto plan = compile_plan(g, dev);
  bool was_ok = false;
  for (int64_t mib : {1, 2, 4, 8, 16, 32}) {
    DeviceModel d;
    d.activation_capacity_bytes = mib * 1024 * 1024;
    bool ok = !check_buffers(plan, d).has_value();
    if (was_ok) CHECK(ok);  // once ok, ok at every larger capacity
    was_ok = ok;
  }
  CHECK(was_ok);  // fits at 32 MiB
}

TEST_CASE("latency: empty plan, channel doubling, published ordering") {
  DeviceModel dev;
  Graph empty;
  empty.arch_name = "input_only";
  empty.input_shape = {1, 4, 4, 2};
  empty.add({"input", NodeKind::Input, std::monostate{}, {}});
  auto eplan = compile_plan(empty, dev);
  CHECK(estimate_latency(eplan, dev).milliseconds == 0.0);

  auto latency_of = [&](const Graph& g) {
    return estimate_latency(compile_plan(g, dev), dev);
  };

  // Doubling every width at least doubles compute cycles.
  Graph narrow;
  narrow.arch_name = "narrow";
  narrow.input_shape = {1, 16, 16, 4};
  narrow.add({"input", NodeKind::Input, std::monostate{}, {}});
  narrow.add({"c1", NodeKind::Conv2D, Conv2DParams{8, 3, 3, 1, Padding::Same, 0.0},
              {"input"}});
  narrow.add({"c2", NodeKind::Conv2D, Conv2DParams{8, 3, 3, 1, Padding::Same, 0.0},
              {"c1"}});
  Graph wide = narrow;
  std::get<Conv2DParams>(wide.node_mut("c1").params).out_channels = 16;
  std::get<Conv2DParams>(wide.node_mut("c2").params).out_channels = 16;
  CHECK(latency_of(wide).cycles >= 2.0 * latency_of(narrow).cycles);

  // Table-ordering: u_net slower than scene_net per tile; patch slower than
  // pixel per pixel; image-wise models beat pixel-wise models per tile.
  double pixel = latency_of(build_architecture("pixel_net")).milliseconds;
  double patch = latency_of(build_architecture("patch_net")).milliseconds;
  double unet = latency_of(build_architecture("u_net")).milliseconds;
  double scene = latency_of(build_architecture("scene_net")).milliseconds;
  CHECK(unet > scene);
  CHECK(patch > pixel);
  double per_tile_pixel = pixel * 256.0 * 256.0;
  double per_tile_patch = patch * 256.0 * 256.0;
  CHECK(per_tile_patch > per_tile_pixel);
  CHECK(per_tile_pixel > unet);
  CHECK(unet > scene);
}

TEST_CASE("pruned plans cost strictly fewer cycles") {
  DeviceModel dev;
  Graph g = build_architecture("u_net");
  Rng rng(3);
  WeightMap w = init_model_weights(g, rng);
  std::vector<uint8_t> keep(16, 1);
  for (int i = 0; i < 8; ++i) keep[static_cast<size_t>(i)] = 0;
  auto [g2, w2] = rewrite_dense(g, w, {{"enc1_conv2", keep}});
  double base = estimate_latency(compile_plan(g, dev), dev).cycles;
  double pruned = estimate_latency(compile_plan(g2, dev), dev).cycles;
  CHECK(pruned < base);
}

TEST_CASE("device model validation") {
  DeviceModel dev;
  dev.efficiency = 0.0;
  CHECK_THROWS_AS(dev.validate(), ArgumentError);
  DeviceModel dev2;
  dev2.efficiency = 1.5;
  CHECK_THROWS_AS(dev2.validate(), ArgumentError);
  DeviceModel dev3;
  dev3.macs_per_cycle = 0;
  CHECK_THROWS_AS(dev3.validate(), ArgumentError);
}

TEST_CASE("plan report carries the machine-readable verdict") {
  DeviceModel dev;
  Graph ok = build_architecture("pixel_net");
  std::string report = plan_report(compile_plan(ok, dev), dev);
  CHECK(report.find("CAPACITY=OK") != std::string::npos);

  Graph fail = build_architecture("scene_net", 512);
  std::string report2 = plan_report(compile_plan(fail, dev), dev);
  CHECK(report2.find("CAPACITY=FAIL step=conv1") != std::string::npos);
}
