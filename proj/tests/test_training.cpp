#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cumulus/architectures.hpp"
#include "cumulus/data.hpp"
#include "cumulus/errors.hpp"
#include "cumulus/train.hpp"

using namespace cumulus;

namespace {

Tensor random_f64(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = lo + (hi - lo) * rng.next_unit();
  return Tensor::from_f64(std::move(shape), std::move(v));
}

double l2_penalty_f64(const Graph& g, const WeightMap& w) {
  double total = 0.0;
  for (const auto& [id, lw] : w) {
    const NodeSpec& n = g.node(id);
    double lambda = 0.0;
    if (n.kind == NodeKind::Conv2D) lambda = n.conv().l2_lambda;
    if (n.kind == NodeKind::TransposedConv2D) lambda = n.tconv().l2_lambda;
    if (n.kind == NodeKind::Dense) lambda = n.dense().l2_lambda;
    if (lambda == 0.0) continue;
    double sq = 0.0;
    for (double v : lw.kernel.d()) sq += v * v;
    total += lambda * sq;
  }
  return total;
}

struct FdSetup {
  Graph g;
  WeightMap w;
  Tensor input;
  Tensor target;
};

FdSetup make_fd_setup() {
  Graph g;
  g.arch_name = "all_kinds";
  g.input_shape = {1, 6, 6, 2};
  g.add({"input", NodeKind::Input, std::monostate{}, {}});
  g.add({"conv1", NodeKind::Conv2D, Conv2DParams{3, 3, 3, 1, Padding::Same, 1e-3},
         {"input"}});
  g.add({"relu1", NodeKind::Activation, ActivationParams{ActKind::Relu}, {"conv1"}});
  g.add({"pool1", NodeKind::MaxPool2D, MaxPool2DParams{2, 2, 2, 2, Padding::Valid},
         {"relu1"}});
  g.add({"up1", NodeKind::TransposedConv2D, TransposedConv2DParams{2, 2, 2, 2, 0.0},
         {"pool1"}});
  g.add({"side", NodeKind::Conv2D, Conv2DParams{2, 1, 1, 1, Padding::Same, 0.0},
         {"input"}});
  g.add({"cat", NodeKind::Concat, std::monostate{}, {"up1", "side"}});
  g.add({"drop", NodeKind::Dropout, DropoutParams{0.3}, {"cat"}});
  g.add({"conv2", NodeKind::Conv2D, Conv2DParams{2, 3, 3, 1, Padding::Same, 0.0},
         {"drop"}});
  g.add({"flat", NodeKind::Flatten, std::monostate{}, {"conv2"}});
  g.add({"dense1", NodeKind::Dense, DenseParams{4, 1e-3}, {"flat"}});
  g.add({"relu2", NodeKind::Activation, ActivationParams{ActKind::Relu}, {"dense1"}});
  g.add({"dense2", NodeKind::Dense, DenseParams{1, 0.0}, {"relu2"}});
  g.add({"sigmoid", NodeKind::Activation, ActivationParams{ActKind::Sigmoid},
         {"dense2"}});
  g.validate();

  FdSetup s;
  s.g = g;
  auto shapes = infer_shapes(g, g.input_shape);
  uint64_t seed = 500;
  for (const auto& id : g.topo_order()) {
    if (!is_parameterized(g.node(id).kind)) continue;
    auto [ks, bs] = weight_shapes(g, id, shapes);
    // Bias offset keeps pre-activations away from relu kinks and pool ties.
    s.w.emplace(id, LayerWeights{random_f64(ks, seed++, -0.6, 0.6),
                                 random_f64(bs, seed++, 0.05, 0.25)});
  }
  s.input = random_f64({1, 6, 6, 2}, 999, 0.1, 1.0);
  s.target = Tensor::from_f64({1, 1}, {1.0});
  s.g = std::move(g);
  return s;
}

// Loss with a frozen dropout stream: reconstructing the rng per call pins the
// masks, so finite differences see a fixed function.
double fd_loss(const FdSetup& s, const WeightMap& w) {
  Rng rng(4242);
  ForwardOptions opts;
  opts.mode = ExecMode::Training;
  opts.rng = &rng;
  auto res = forward(s.g, w, s.input, opts);
  return bce_loss(res.output, s.target) + l2_penalty_f64(s.g, w);
}

}  // namespace

TEST_CASE("bce_loss analytic examples") {
  CHECK(bce_loss(Tensor::from_f32({1}, {0.5f}), Tensor::from_f32({1}, {1.0f})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));
  double near = bce_loss(Tensor::from_f64({1}, {1.0 - 1e-7}), Tensor::from_f64({1}, {1.0}));
  CHECK(near == doctest::Approx(1e-7).epsilon(0.01));
  double batch = bce_loss(Tensor::from_f64({2}, {0.8, 0.2}),
                          Tensor::from_f64({2}, {1.0, 0.0}));
  CHECK(batch == doctest::Approx(0.22314).epsilon(1e-4));
  CHECK_THROWS_AS(bce_loss(Tensor::from_f32({1}, {0.5f}), Tensor::from_f32({2}, {1, 0})),
                  ArgumentError);
}

TEST_CASE("analytic gradients match central finite differences for all node kinds") {
  FdSetup s = make_fd_setup();

  Rng rng(4242);
  ForwardOptions opts;
  opts.mode = ExecMode::Training;
  opts.rng = &rng;
  auto res = forward(s.g, s.w, s.input, opts);
  Tensor ograd = bce_grad(res.output, s.target);
  WeightMap analytic = backward(s.g, s.w, res.cache, ograd);

  const double h = 1e-4;
  double worst = 0.0;
  for (auto& [id, lw] : s.w) {
    auto check_tensor = [&](Tensor& param, const Tensor& grad) {
      auto pv = param.d();
      auto gv = grad.d();
      for (size_t i = 0; i < pv.size(); ++i) {
        double keep = pv[i];
        pv[i] = keep + h;
        double up = fd_loss(s, s.w);
        pv[i] = keep - h;
        double down = fd_loss(s, s.w);
        pv[i] = keep;
        double fd = (up - down) / (2.0 * h);
        double denom = std::max({std::abs(fd), std::abs(gv[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - gv[i]) / denom);
      }
    };
    check_tensor(lw.kernel, analytic.at(id).kernel);
    check_tensor(lw.bias, analytic.at(id).bias);
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("zero output gradient leaves exactly the 2*lambda*w term") {
  FdSetup s = make_fd_setup();
  Rng rng(4242);
  ForwardOptions opts;
  opts.mode = ExecMode::Training;
  opts.rng = &rng;
  auto res = forward(s.g, s.w, s.input, opts);
  Tensor zero = Tensor::zeros_f64({1, 1});
  WeightMap grads = backward(s.g, s.w, res.cache, zero);
  for (const auto& [id, lw] : s.w) {
    const NodeSpec& n = s.g.node(id);
    double lambda = 0.0;
    if (n.kind == NodeKind::Conv2D) lambda = n.conv().l2_lambda;
    if (n.kind == NodeKind::TransposedConv2D) lambda = n.tconv().l2_lambda;
    if (n.kind == NodeKind::Dense) lambda = n.dense().l2_lambda;
    auto wv = lw.kernel.d();
    auto gv = grads.at(id).kernel.d();
    for (size_t i = 0; i < wv.size(); ++i) CHECK(gv[i] == 2.0 * lambda * wv[i]);
    for (double bg : grads.at(id).bias.d()) CHECK(bg == 0.0);
  }
}

TEST_CASE("backward rejects stale or inference caches") {
  FdSetup s = make_fd_setup();
  auto inference = forward(s.g, s.w, s.input);
  Tensor zero = Tensor::zeros_f64({1, 1});
  CHECK_THROWS_AS(backward(s.g, s.w, inference.cache, zero), StateError);

  Rng rng(1);
  ForwardOptions opts;
  opts.mode = ExecMode::Training;
  opts.rng = &rng;
  auto res = forward(s.g, s.w, s.input, opts);
  Graph other = build_architecture("pixel_net");
  Rng wr(2);
  WeightMap ow = init_model_weights(other, wr);
  CHECK_THROWS_AS(backward(other, ow, res.cache, zero), StateError);
}

TEST_CASE("adam first step moves by ~ -lr * sign(g)") {
  WeightMap params;
  params.emplace("p", LayerWeights{Tensor::from_f32({4}, {1.0f, -2.0f, 0.5f, 3.0f}),
                                   Tensor::zeros({1})});
  WeightMap grads;
  grads.emplace("p", LayerWeights{Tensor::from_f32({4}, {0.3f, -0.7f, 2.0f, 0.001f}),
                                  Tensor::zeros({1})});
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 1e-3;
  WeightMap before = params;
  adam_step(params, grads, st, cfg);
  auto b = before.at("p").kernel.f();
  auto a = params.at("p").kernel.f();
  auto gv = grads.at("p").kernel.f();
  for (size_t i = 0; i < 4; ++i) {
    double update = static_cast<double>(a[i]) - b[i];
    double expect = -cfg.lr * (gv[i] > 0 ? 1.0 : -1.0);
    CHECK(update == doctest::Approx(expect).epsilon(1e-3));
  }
}

TEST_CASE("adam with zero gradients and zero state leaves parameters unchanged") {
  WeightMap params;
  params.emplace("p", LayerWeights{Tensor::from_f32({3}, {1.0f, 2.0f, -3.0f}),
                                   Tensor::from_f32({1}, {0.25f})});
  WeightMap grads;
  grads.emplace("p", LayerWeights{Tensor::zeros({3}), Tensor::zeros({1})});
  AdamState st;
  adam_step(params, grads, st, AdamConfig{});
  CHECK(params.at("p").kernel.f()[0] == 1.0f);
  CHECK(params.at("p").kernel.f()[2] == -3.0f);
  CHECK(params.at("p").bias.f()[0] == 0.25f);
}

TEST_CASE("adam descends a quadratic for lr <= 1e-2") {
  for (double lr : {1e-3, 5e-3, 1e-2}) {
    float theta = 5.0f;
    WeightMap params;
    params.emplace("p", LayerWeights{Tensor::from_f32({1}, {theta}), Tensor::zeros({1})});
    AdamState st;
    AdamConfig cfg;
    cfg.lr = lr;
    auto loss = [](float t) { return (t - 3.0f) * (t - 3.0f); };
    float before = loss(params.at("p").kernel.f()[0]);
    WeightMap grads;
    grads.emplace("p", LayerWeights{
                           Tensor::from_f32({1}, {2.0f * (theta - 3.0f)}),
                           Tensor::zeros({1})});
    adam_step(params, grads, st, cfg);
    CHECK(loss(params.at("p").kernel.f()[0]) < before);
  }
}

TEST_CASE("straight-through estimator passes in range, blocks out of range") {
  Graph g;
  g.arch_name = "ste";
  g.input_shape = {1, 1, 1, 1};
  g.add({"input", NodeKind::Input, std::monostate{}, {}});
  g.add({"conv", NodeKind::Conv2D, Conv2DParams{1, 1, 1, 1, Padding::Same, 0.0},
         {"input"}});
  g.add({"sig", NodeKind::Activation, ActivationParams{ActKind::Sigmoid}, {"conv"}});
  Tensor x = Tensor::from_f32({1, 1, 1, 1}, {0.5f});
  Tensor target = Tensor::from_f32({1, 1, 1, 1}, {1.0f});

  QuantConfig cfg;
  cfg.node_out["input"] = QuantParams{7};   // range [-1, 0.9921875]
  cfg.node_out["conv"] = QuantParams{6};    // range [-2, 1.984375]
  cfg.weight["conv"] = QuantParams{6};

  auto run = [&](float weight, const QuantConfig* fq) {
    WeightMap w;
    w.emplace("conv", LayerWeights{Tensor::from_f32({1, 1, 1, 1}, {weight}),
                                   Tensor::zeros({1})});
    Rng rng(3);
    ForwardOptions opts;
    opts.mode = ExecMode::Training;
    opts.rng = &rng;
    opts.fake_quant = fq;
    auto res = forward(g, w, x, opts);
    Tensor ograd = bce_grad(res.output, target);
    return backward(g, w, res.cache, ograd, fq).at("conv").kernel.f()[0];
  };

  // Values sit exactly on the quant grid, so the quantized forward equals the
  // plain one and the in-range STE gradient must match exactly (factor 1).
  float g_plain = run(0.5f, nullptr);
  float g_fq = run(0.5f, &cfg);
  CHECK(g_plain == g_fq);

  // Weight far outside the representable range: gradient gated to zero.
  float g_clipped = run(100.0f, &cfg);
  CHECK(g_clipped == 0.0f);
}

TEST_CASE("training on separable synthetic spectra reaches 95% validation accuracy") {
  // Oracle: plain logistic regression separates the synthetic task first.
  Scene scene = generate_scene(404, 320, 320, 0.5);
  Dataset spectra = sample_pixels({scene}, 400, SampleMode::Spectra, 11);
  Dataset train_set, val_set;
  train_set.split = "train";
  val_set.split = "val";
  for (size_t i = 0; i < spectra.records.size(); ++i) {
    ((i % 400) < 280 ? train_set : val_set).records.push_back(spectra.records[i]);
  }

  {
    std::vector<double> lw(13, 0.0);
    for (int epoch = 0; epoch < 200; ++epoch) {
      for (const auto& r : train_set.records) {
        auto px = r.pixels.f();
        double z = lw[12];
        for (int b = 0; b < 12; ++b) z += lw[static_cast<size_t>(b)] * px[static_cast<size_t>(b)];
        double p = 1.0 / (1.0 + std::exp(-z));
        double err = p - r.label;
        for (int b = 0; b < 12; ++b) lw[static_cast<size_t>(b)] -= 0.1 * err * px[static_cast<size_t>(b)];
        lw[12] -= 0.1 * err;
      }
    }
    int correct = 0;
    for (const auto& r : val_set.records) {
      auto px = r.pixels.f();
      double z = lw[12];
      for (int b = 0; b < 12; ++b) z += lw[static_cast<size_t>(b)] * px[static_cast<size_t>(b)];
      if ((z >= 0.0) == (r.label != 0)) ++correct;
    }
    double lr_acc = static_cast<double>(correct) / static_cast<double>(val_set.records.size());
    CHECK(lr_acc >= 0.90);  // the task is separable enough to train against
  }

  Graph g = build_architecture("pixel_net");
  Rng rng(21);
  WeightMap init = init_model_weights(g, rng);
  TrainConfig cfg;
  cfg.max_epochs = 15;
  cfg.patience = 15;
  cfg.seed = 5;
  cfg.parallel = false;  // spectra kernels are tiny
  auto result = train(g, std::move(init), train_set, val_set, cfg);
  REQUIRE(result.history.best_epoch >= 0);
  double best_acc = result.history.val_acc[static_cast<size_t>(result.history.best_epoch)];
  CHECK(best_acc >= 0.95);

  // Best epoch holds the minimal validation loss.
  double min_loss = *std::min_element(result.history.val_loss.begin(),
                                      result.history.val_loss.end());
  CHECK(result.history.val_loss[static_cast<size_t>(result.history.best_epoch)] ==
        doctest::Approx(min_loss));
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
  Scene scene = generate_scene(77, 320, 320, 0.5);
  Dataset ds = sample_pixels({scene}, 60, SampleMode::Spectra, 3);
  Dataset tr, va;
  for (size_t i = 0; i < ds.records.size(); ++i) {
    ((i % 60) < 40 ? tr : va).records.push_back(ds.records[i]);
  }
  Graph g = build_architecture("pixel_net");
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  cfg.seed = 9;
  cfg.parallel = false;
  Rng r1(4), r2(4);
  auto a = train(g, init_model_weights(g, r1), tr, va, cfg);
  auto b = train(g, init_model_weights(g, r2), tr, va, cfg);
  for (const auto& [id, lw] : a.weights) {
    auto av = lw.kernel.f();
    auto bv = b.weights.at(id).kernel.f();
    for (size_t i = 0; i < av.size(); ++i) CHECK(av[i] == bv[i]);
  }
  CHECK(a.history.val_loss == b.history.val_loss);
}

TEST_CASE("l2 penalty shrinks the final weight norm on a paired run") {
  Scene scene = generate_scene(88, 320, 320, 0.5);
  Dataset ds = sample_pixels({scene}, 150, SampleMode::Spectra, 6);
  Dataset tr, va;
  for (size_t i = 0; i < ds.records.size(); ++i) {
    ((i % 150) < 100 ? tr : va).records.push_back(ds.records[i]);
  }
  Graph with_l2 = build_architecture("pixel_net");
  Graph no_l2 = with_l2;
  for (const auto& node : with_l2.nodes()) {
    NodeSpec& n = no_l2.node_mut(node.id);
    if (n.kind == NodeKind::Conv2D) std::get<Conv2DParams>(n.params).l2_lambda = 0.0;
    if (n.kind == NodeKind::Dense) std::get<DenseParams>(n.params).l2_lambda = 0.0;
  }
  TrainConfig cfg;
  cfg.max_epochs = 12;
  cfg.patience = 12;
  cfg.seed = 13;
  cfg.parallel = false;

  Rng r1(31), r2(31);
  auto reg = train(with_l2, init_model_weights(with_l2, r1), tr, va, cfg);
  auto raw = train(no_l2, init_model_weights(no_l2, r2), tr, va, cfg);
  auto norm = [](const WeightMap& w) {
    double sq = 0.0;
    for (const auto& [id, lw] : w) {
      for (float v : lw.kernel.f()) sq += static_cast<double>(v) * v;
    }
    return sq;
  };
  CHECK(norm(reg.weights) < norm(raw.weights));
}

TEST_CASE("train validates its configuration") {
  Graph g = build_architecture("pixel_net");
  Rng rng(1);
  WeightMap w = init_model_weights(g, rng);
  Dataset empty;
  Dataset one;
  one.records.push_back(
      {Tensor::full({1, 12, 1, 1}, 0.5f), Tensor{}, 1, 1.0});
  TrainConfig cfg;
  CHECK_THROWS_AS(train(g, w, empty, one, cfg), ArgumentError);
  CHECK_THROWS_AS(train(g, w, one, empty, cfg), ArgumentError);
  TrainConfig bad_lr;
  bad_lr.learning_rate = 0.0;
  CHECK_THROWS_AS(train(g, w, one, one, bad_lr), ArgumentError);
  TrainConfig bad_patience;
  bad_patience.patience = 500;
  CHECK_THROWS_AS(train(g, w, one, one, bad_patience), ArgumentError);
}
