#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "cumulus/architectures.hpp"
#include "cumulus/errors.hpp"
#include "cumulus/quantize.hpp"

using namespace cumulus;

namespace {

Tensor random_input(Shape shape, uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(lo + (hi - lo) * rng.next_unit());
  return Tensor::from_f32(std::move(shape), std::move(v));
}

// The defining oracle: the integer executor must match the float executor
// with fake quantization inserted at every quantized tensor, bitwise on the
// integer tensors and exactly on the dequantized logit.
void check_bitexact(const Graph& g, const WeightMap& w, const std::vector<Tensor>& inputs,
                    int check_count) {
  QuantConfig cfg = calibrate(g, w, inputs);
  QuantizedModel qm = quantize_graph(g, w, cfg);
  WeightMap w64 = weights_to_f64(w);
  int mismatches = 0;
  for (int i = 0; i < check_count; ++i) {
    const Tensor& x = inputs[static_cast<size_t>(i) % inputs.size()];
    Int8Trace trace;
    Tensor prob = forward_int8(qm, quantize_input(x, QuantParams{qm.input_exp}), true,
                               &trace);
    ForwardOptions opts;
    opts.fake_quant = &cfg;
    auto ref = forward(g, w64, x.to_f64(), opts);
    for (const auto& [id, t] : trace) {
      const Tensor& r = ref.cache.outputs.at(id);
      if (t.dtype() == DType::I8) {
        double s = t.quant()->scale();
        auto qv = t.q();
        auto rv = r.d();
        REQUIRE(qv.size() == rv.size());
        for (size_t k = 0; k < qv.size(); ++k) {
          int64_t expect = std::llround(rv[k] / s);
          if (expect != qv[k]) ++mismatches;
        }
      } else {  // float probability after the terminal sigmoid
        auto pv = t.f();
        auto rv = r.d();
        for (size_t k = 0; k < pv.size(); ++k) {
          if (pv[k] != static_cast<float>(rv[k])) ++mismatches;
        }
      }
    }
  }
  CHECK(mismatches == 0);
}

}  // namespace

TEST_CASE("exponent selection formula") {
  CHECK(exponent_for_max_abs(1.0) == 6);    // 1/2^-6 = 64 <= 127, f=7 saturates
  CHECK(exponent_for_max_abs(127.0) == 0);
  CHECK(exponent_for_max_abs(0.0) == 7);    // documented all-zero fallback
  CHECK(exponent_for_max_abs(0.5) == 7);
  CHECK(exponent_for_max_abs(200.0) == -1);
  // Never saturating: max_abs always representable at the chosen scale.
  for (double m : {0.01, 0.3, 0.99, 1.0, 1.984375, 2.0, 63.0, 126.999, 500.0}) {
    int f = exponent_for_max_abs(m);
    CHECK(std::ldexp(m, f) <= 127.0);
    CHECK(std::ldexp(m, f + 1) > 127.0);
  }
}

TEST_CASE("fake_quant fixed points and rounding bound") {
  QuantParams qp{5};
  double s = qp.scale();
  Tensor zero = Tensor::from_f32({1}, {0.0f});
  CHECK(fake_quant(zero, qp).f()[0] == 0.0f);

  // Exact grid values stay put.
  for (int k : {-128, -37, -1, 0, 1, 100, 127}) {
    float x = static_cast<float>(k * s);
    Tensor t = Tensor::from_f32({1}, {x});
    CHECK(fake_quant(t, qp).f()[0] == x);
  }

  // |x - fq(x)| <= s/2 inside the representable range.
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    double x = (rng.next_unit() * 2.0 - 1.0) * 127.0 * s;
    Tensor t = Tensor::from_f64({1}, {x});
    double err = std::abs(fake_quant(t, qp).d()[0] - x);
    CHECK(err <= s / 2.0 + 1e-15);
  }
}

TEST_CASE("round half away from zero at the midpoints") {
  CHECK(round_half_away(2.5) == 3.0);
  CHECK(round_half_away(-2.5) == -3.0);
  CHECK(round_half_away(0.5) == 1.0);
  CHECK(round_half_away(-0.5) == -1.0);
  CHECK(round_half_away(2.4) == 2.0);
  CHECK(round_half_away(-2.4) == -2.0);
}

TEST_CASE("quantize_graph examples") {
  Graph g;
  g.arch_name = "one_conv";
  g.input_shape = {1, 2, 2, 1};
  g.add({"input", NodeKind::Input, std::monostate{}, {}});
  g.add({"conv", NodeKind::Conv2D, Conv2DParams{1, 1, 1, 1, Padding::Same, 0.0},
         {"input"}});
  WeightMap w;
  w.emplace("conv", LayerWeights{Tensor::from_f32({1, 1, 1, 1}, {0.5f}),
                                 Tensor::from_f32({1}, {0.25f})});

  QuantConfig cfg;
  cfg.node_out["input"] = QuantParams{6};
  cfg.node_out["conv"] = QuantParams{4};
  cfg.weight["conv"] = QuantParams{6};

  QuantizedModel qm = quantize_graph(g, w, cfg);
  const auto& info = qm.nodes.at("conv");
  CHECK(info.kernel_i8.q()[0] == 32);  // 0.5 * 2^6
  CHECK(info.bias_exp == 12);
  CHECK(info.bias_i32.i()[0] == 1024);  // 0.25 * 2^12
  CHECK(info.shift == 8);               // 6 + 6 - 4

  // Zero weights quantize to the all-zero model.
  WeightMap zw;
  zw.emplace("conv", LayerWeights{Tensor::zeros({1, 1, 1, 1}), Tensor::zeros({1})});
  QuantConfig zcfg = cfg;
  zcfg.weight["conv"] = QuantParams{exponent_for_max_abs(0.0)};
  QuantizedModel zqm = quantize_graph(g, zw, zcfg);
  CHECK(zqm.nodes.at("conv").kernel_i8.q()[0] == 0);
  CHECK(zqm.nodes.at("conv").bias_i32.i()[0] == 0);

  // A bias too large for the int32 grid is rejected.
  WeightMap big;
  big.emplace("conv", LayerWeights{Tensor::from_f32({1, 1, 1, 1}, {0.5f}),
                                   Tensor::from_f32({1}, {2.0e6f})});
  CHECK_THROWS_AS(quantize_graph(g, big, cfg), QuantError);
}

TEST_CASE("calibration covers weights and every node output") {
  Graph g = build_architecture("pixel_net");
  Rng rng(3);
  WeightMap w = init_model_weights(g, rng);
  std::vector<Tensor> inputs;
  for (uint64_t i = 0; i < 4; ++i) inputs.push_back(random_input({1, 12, 1, 1}, i));
  QuantConfig cfg = calibrate(g, w, inputs);
  CHECK(cfg.node_out.size() == g.nodes().size());
  CHECK(cfg.weight.size() == w.size());
  CHECK_THROWS_AS(calibrate(g, w, {}), ArgumentError);
}

TEST_CASE("int8 executor is bit-exact vs the fake-quant float reference") {
  SUBCASE("pixel_net") {
    Graph g = build_architecture("pixel_net");
    Rng rng(10);
    WeightMap w = init_model_weights(g, rng);
    std::vector<Tensor> inputs;
    for (uint64_t i = 0; i < 10; ++i) inputs.push_back(random_input({1, 12, 1, 1}, 50 + i));
    check_bitexact(g, w, inputs, 10);
  }
  SUBCASE("patch_net") {
    Graph g = build_architecture("patch_net");
    Rng rng(11);
    WeightMap w = init_model_weights(g, rng);
    std::vector<Tensor> inputs;
    for (uint64_t i = 0; i < 10; ++i) inputs.push_back(random_input({1, 5, 5, 12}, 70 + i));
    check_bitexact(g, w, inputs, 10);
  }
  SUBCASE("u_net at reduced extent") {
    Graph g = build_architecture("u_net", 32);
    Rng rng(12);
    WeightMap w = init_model_weights(g, rng);
    std::vector<Tensor> inputs;
    for (uint64_t i = 0; i < 3; ++i) inputs.push_back(random_input({1, 32, 32, 12}, 90 + i));
    check_bitexact(g, w, inputs, 3);
  }
}

TEST_CASE("all-zero input with zero biases gives probability one half") {
  Graph g = build_architecture("pixel_net");
  Rng rng(21);
  WeightMap w = init_model_weights(g, rng);  // biases already zero
  std::vector<Tensor> calib;
  for (uint64_t i = 0; i < 3; ++i) calib.push_back(random_input({1, 12, 1, 1}, 200 + i));
  QuantConfig cfg = calibrate(g, w, calib);
  QuantizedModel qm = quantize_graph(g, w, cfg);
  Tensor zero = Tensor::zeros({1, 12, 1, 1});
  Tensor prob = forward_int8(qm, quantize_input(zero, QuantParams{qm.input_exp}));
  CHECK(prob.f()[0] == 0.5f);
}

TEST_CASE("input exponent mismatch is rejected") {
  Graph g = build_architecture("pixel_net");
  Rng rng(22);
  WeightMap w = init_model_weights(g, rng);
  std::vector<Tensor> calib = {random_input({1, 12, 1, 1}, 300)};
  QuantizedModel qm = quantize_graph(g, w, calibrate(g, w, calib));
  Tensor wrong = quantize_input(calib[0], QuantParams{qm.input_exp + 1});
  CHECK_THROWS_AS(forward_int8(qm, wrong), QuantError);
  CHECK_THROWS_AS(forward_int8(qm, calib[0]), QuantError);  // unquantized input
}

TEST_CASE("static accumulator bounds fit int32 on all four architectures") {
  // Worst case for the first pixel-wise layer by hand: 3x1 kernel over 12
  // bands of int8 extremes stays far under 2^31.
  CHECK(int64_t(3) * 12 * 127 * 127 < int64_t(1) << 31);
  for (const auto& name : architecture_names()) {
    Graph g = build_architecture(name);
    Rng rng(33);
    WeightMap w = init_model_weights(g, rng);
    Shape in = g.input_shape;
    std::vector<Tensor> calib = {random_input(in, 400), random_input(in, 401)};
    QuantizedModel qm = quantize_graph(g, w, calibrate(g, w, calib));
    for (const auto& [id, info] : qm.nodes) {
      CHECK(info.acc_bound > 0);
      CHECK(info.acc_bound <= INT32_MAX);
    }
  }
}

TEST_CASE("int8 executor is bitwise independent of the worker count") {
  Graph g = build_architecture("u_net", 32);
  Rng rng(44);
  WeightMap w = init_model_weights(g, rng);
  std::vector<Tensor> calib = {random_input({1, 32, 32, 12}, 500)};
  QuantizedModel qm = quantize_graph(g, w, calibrate(g, w, calib));
  Tensor qin = quantize_input(calib[0], QuantParams{qm.input_exp});
  Tensor a = forward_int8(qm, qin, true);
  Tensor b = forward_int8(qm, qin, false);
  auto av = a.f();
  auto bv = b.f();
  CHECK(std::memcmp(av.data(), bv.data(), av.size() * sizeof(float)) == 0);
}

TEST_CASE("quantized package round-trips through disk") {
  namespace fs = std::filesystem;
  Graph g = build_architecture("patch_net");
  Rng rng(55);
  WeightMap w = init_model_weights(g, rng);
  std::vector<Tensor> calib = {random_input({1, 5, 5, 12}, 600)};
  QuantizedModel qm = quantize_graph(g, w, calibrate(g, w, calib));
  std::string dir = (fs::temp_directory_path() / "cumulus_qpkg").string();
  fs::remove_all(dir);
  save_quantized(dir, qm);
  CHECK(is_quantized_package(dir));
  QuantizedModel loaded = load_quantized(dir);
  CHECK(loaded.input_exp == qm.input_exp);
  CHECK(loaded.out_exp == qm.out_exp);
  Tensor qin = quantize_input(calib[0], QuantParams{qm.input_exp});
  Tensor a = forward_int8(qm, qin);
  Tensor b = forward_int8(loaded, qin);
  CHECK(a.f()[0] == b.f()[0]);
  fs::remove_all(dir);
}
