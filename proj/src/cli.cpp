#include "cumulus/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cumulus/architectures.hpp"
#include "cumulus/blob.hpp"
#include "cumulus/compile.hpp"
#include "cumulus/data.hpp"
#include "cumulus/errors.hpp"
#include "cumulus/metrics.hpp"
#include "cumulus/model_io.hpp"
#include "cumulus/prune.hpp"
#include "cumulus/quantize.hpp"
#include "cumulus/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

namespace cumulus {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void save_quant_config(const QuantConfig& cfg, const std::string& path) {
  ordered_json j;
  ordered_json node_out = ordered_json::object();
  for (const auto& [id, qp] : cfg.node_out) node_out[id] = qp.exponent;
  ordered_json weight = ordered_json::object();
  for (const auto& [id, qp] : cfg.weight) weight[id] = qp.exponent;
  j["node_out"] = std::move(node_out);
  j["weight"] = std::move(weight);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ModelIOError("cannot write " + path);
  os << j.dump(2) << "\n";
}

QuantConfig load_quant_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ModelIOError("cannot open calibration file " + path);
  QuantConfig cfg;
  try {
    auto j = ordered_json::parse(is);
    for (const auto& [id, exp] : j.at("node_out").items()) {
      cfg.node_out[id] = QuantParams{exp.get<int>()};
    }
    for (const auto& [id, exp] : j.at("weight").items()) {
      cfg.weight[id] = QuantParams{exp.get<int>()};
    }
  } catch (const ordered_json::exception& e) {
    throw ModelIOError(std::string("bad calibration file: ") + e.what());
  }
  return cfg;
}

std::vector<Tensor> dataset_inputs(const Dataset& ds, size_t limit) {
  std::vector<Tensor> inputs;
  for (size_t i = 0; i < ds.records.size() && i < limit; ++i) {
    inputs.push_back(ds.records[i].pixels);
  }
  if (inputs.empty()) throw DataError("dataset has no records");
  return inputs;
}

Dataset load_split(const std::string& data_dir, const std::string& split) {
  return load_dataset((fs::path(data_dir) / split).string());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ModelIOError("cannot write " + path);
  os << text;
}

struct GlobalFlags {
  uint64_t seed = 42;
  std::string out_dir = ".";
  int64_t capacity_bytes = 0;  // 0 = device default
};

DeviceModel make_device(const GlobalFlags& g) {
  DeviceModel dev;
  if (g.capacity_bytes > 0) dev.activation_capacity_bytes = g.capacity_bytes;
  return dev;
}

int cmd_gen_data(const GlobalFlags& g, int scenes, int64_t height, int64_t width,
                 double density, const std::string& mode, int64_t tile_size,
                 double threshold, int64_t per_class, double train_frac,
                 const std::string& raster, const std::string& out) {
  std::vector<Scene> all;
  if (!raster.empty()) {
    all.push_back(import_raster(raster, height, width));
  } else {
    for (int i = 0; i < scenes; ++i) {
      // Spread per-scene densities around the requested one so both tile
      // classes show up even at moderate settings.
      double d = density;
      if (scenes > 1) {
        double t = static_cast<double>(i) / static_cast<double>(scenes - 1);
        d = std::clamp(density + (t - 0.5) * 0.9, 0.05, 0.95);
      }
      all.push_back(generate_scene(g.seed + static_cast<uint64_t>(i), height, width, d));
    }
  }
  if (mode == "tiles") {
    std::vector<TileRecord> tiles;
    for (const auto& s : all) {
      auto t = tile_and_label(s, tile_size, threshold);
      tiles.insert(tiles.end(), std::make_move_iterator(t.begin()),
                   std::make_move_iterator(t.end()));
    }
    auto [train, val] = balance_and_split(tiles, train_frac, g.seed);
    save_dataset((fs::path(out) / "train").string(), train);
    save_dataset((fs::path(out) / "val").string(), val);
    std::printf("tiles=%zu train=%zu val=%zu\n", tiles.size(), train.records.size(),
                val.records.size());
  } else {
    SampleMode sm = mode == "spectra" ? SampleMode::Spectra : SampleMode::Patches5x5;
    Dataset ds = sample_pixels(all, per_class, sm, g.seed);
    // Records sit in class blocks; stratified split by position inside each
    // block (samples are already randomly drawn).
    Dataset train, val;
    train.split = "train";
    val.split = "val";
    int64_t train_n = static_cast<int64_t>(std::llround(train_frac * static_cast<double>(per_class)));
    for (size_t i = 0; i < ds.records.size(); ++i) {
      int64_t pos = static_cast<int64_t>(i) % per_class;
      (pos < train_n ? train : val).records.push_back(std::move(ds.records[i]));
    }
    save_dataset((fs::path(out) / "train").string(), train);
    save_dataset((fs::path(out) / "val").string(), val);
    std::printf("records=%lld train=%zu val=%zu\n",
                static_cast<long long>(2 * per_class), train.records.size(),
                val.records.size());
  }
  return 0;
}

int cmd_build(const GlobalFlags& g, const std::string& arch, const std::string& out) {
  Graph graph = build_architecture(arch);
  Rng rng(g.seed);
  WeightMap w = init_model_weights(graph, rng);
  save_model(out, graph, w);
  std::printf("built %s params=%lld\n", arch.c_str(),
              static_cast<long long>(count_params(graph).total));
  return 0;
}

int cmd_summarize(const std::string& arch, const std::string& model_dir) {
  Graph g = model_dir.empty() ? build_architecture(arch) : load_model(model_dir).first;
  std::printf("params=%lld flops=%lld\n", static_cast<long long>(count_params(g).total),
              static_cast<long long>(count_flops(g).total));
  return 0;
}

int cmd_train(const GlobalFlags& g, const std::string& model_dir,
              const std::string& data_dir, int epochs, int patience, int batch,
              double lr, bool qat, const std::string& calib_file, bool augment_on,
              const std::string& out, const std::string& history_file) {
  auto [graph, weights] = load_model(model_dir);
  Dataset train_set = load_split(data_dir, "train");
  Dataset val_set = load_split(data_dir, "val");
  TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.patience = std::min(patience, epochs);
  cfg.batch_size = batch;
  cfg.learning_rate = lr;
  cfg.seed = g.seed;
  cfg.augmentation_enabled = augment_on;
  QuantConfig qcfg;
  if (qat) {
    if (calib_file.empty()) throw ArgumentError("--qat needs --calib");
    qcfg = load_quant_config(calib_file);
    cfg.qat_enabled = true;
    cfg.qat_config = &qcfg;
  }
  auto result = train(graph, std::move(weights), train_set, val_set, cfg);
  save_model(out, graph, result.weights);
  if (!history_file.empty()) {
    std::ofstream os(history_file, std::ios::trunc);
    history_to_csv(result.history, os);
  }
  std::printf("epochs=%d best_epoch=%d val_acc=%.4f\n", result.history.epochs_run,
              result.history.best_epoch,
              result.history.best_epoch >= 0
                  ? result.history.val_acc[static_cast<size_t>(result.history.best_epoch)]
                  : 0.0);
  return 0;
}

int cmd_calibrate(const GlobalFlags&, const std::string& model_dir,
                  const std::string& data_dir, int samples, const std::string& out) {
  auto [graph, weights] = load_model(model_dir);
  Dataset train_set = load_split(data_dir, "train");
  auto inputs = dataset_inputs(train_set, static_cast<size_t>(samples));
  QuantConfig cfg = calibrate(graph, weights, inputs);
  save_quant_config(cfg, out);
  std::printf("calibrated tensors=%zu\n", cfg.node_out.size() + cfg.weight.size());
  return 0;
}

int cmd_quantize(const GlobalFlags&, const std::string& model_dir,
                 const std::string& calib_file, const std::string& out) {
  auto [graph, weights] = load_model(model_dir);
  QuantConfig cfg = load_quant_config(calib_file);
  QuantizedModel qm = quantize_graph(graph, weights, cfg);
  save_quantized(out, qm);
  int64_t max_bound = 0;
  for (const auto& [id, info] : qm.nodes) max_bound = std::max(max_bound, info.acc_bound);
  std::printf("quantized nodes=%zu max_acc_bound=%lld\n", qm.nodes.size(),
              static_cast<long long>(max_bound));
  return 0;
}

int cmd_prune(const GlobalFlags& g, const std::string& model_dir,
              const std::string& data_dir, double pr, int steps, int ft_epochs,
              const std::string& out, const std::string& report_file) {
  auto [graph, weights] = load_model(model_dir);
  Dataset train_set = load_split(data_dir, "train");
  Dataset val_set = load_split(data_dir, "val");
  PruneSpec spec;
  spec.target_pr = pr;
  spec.steps = steps;
  spec.fine_tune_epochs = ft_epochs;
  spec.fine_tune.seed = g.seed;
  spec.fine_tune.batch_size = 8;
  auto result = prune(graph, weights, spec, train_set, val_set);
  save_model(out, result.graph, result.weights);
  // Provenance section in the saved manifest.
  {
    auto path = fs::path(out) / "model.json";
    std::ifstream is(path);
    auto j = ordered_json::parse(is);
    is.close();
    j["prune"] = prune_report_to_json(result.report);
    write_text(path.string(), j.dump(2) + "\n");
  }
  if (!report_file.empty()) {
    std::ofstream os(report_file, std::ios::trunc);
    prune_report_to_csv(result.report, os);
  }
  std::printf("flop_reduction=%.4f param_reduction=%.4f\n",
              result.report.achieved_flop_reduction,
              result.report.achieved_param_reduction);
  return 0;
}

int cmd_compile(const GlobalFlags& g, const std::string& model_dir,
                const std::string& arch, int input_hw, const std::string& report_file) {
  DeviceModel dev = make_device(g);
  Graph graph;
  if (!model_dir.empty()) {
    graph = is_quantized_package(model_dir) ? load_quantized(model_dir).graph
                                            : load_model(model_dir).first;
  } else {
    graph = build_architecture(arch, input_hw);
  }
  ExecutionPlan plan = compile_plan(graph, dev);
  std::string report = plan_report(plan, dev);
  std::fputs(report.c_str(), stdout);
  if (!report_file.empty()) write_text(report_file, report);
  return check_buffers(plan, dev) ? 1 : 0;
}

int cmd_check(const GlobalFlags& g, const std::string& model_dir, const std::string& arch,
              int input_hw) {
  DeviceModel dev = make_device(g);
  Graph graph;
  if (!model_dir.empty()) {
    graph = is_quantized_package(model_dir) ? load_quantized(model_dir).graph
                                            : load_model(model_dir).first;
  } else {
    graph = build_architecture(arch, input_hw);
  }
  ExecutionPlan plan = compile_plan(graph, dev);
  auto err = check_buffers(plan, dev);
  if (err) {
    std::printf("CAPACITY=FAIL step=%s\n", err->step_id.c_str());
    return 1;
  }
  std::printf("CAPACITY=OK\n");
  return 0;
}

int cmd_infer(const GlobalFlags&, const std::string& model_dir,
              const std::string& input_file, int index, bool fq,
              const std::string& calib_file) {
  auto tensors = load_tensors(input_file);
  if (index < 0 || static_cast<size_t>(index) >= tensors.size()) {
    throw ArgumentError("input index out of range");
  }
  Tensor x = tensors[static_cast<size_t>(index)];
  Tensor out;
  if (is_quantized_package(model_dir)) {
    QuantizedModel qm = load_quantized(model_dir);
    out = forward_int8(qm, quantize_input(x, QuantParams{qm.input_exp}));
  } else {
    auto [graph, weights] = load_model(model_dir);
    ForwardOptions opts;
    QuantConfig qcfg;
    if (fq) {
      if (calib_file.empty()) throw ArgumentError("--fq needs --calib");
      qcfg = load_quant_config(calib_file);
      opts.fake_quant = &qcfg;
    }
    out = forward(graph, weights, x, opts).output;
  }
  auto p = out.f();
  double mean = 0.0;
  for (float v : p) mean += v;
  mean /= static_cast<double>(p.size());
  std::printf("prob=%.6f label=%s outputs=%zu\n", mean,
              mean >= 0.5 ? "cloudy" : "not_cloudy", p.size());
  return 0;
}

int cmd_evaluate(const GlobalFlags&, const std::string& model_dir,
                 const std::string& data_dir, const std::string& split,
                 const std::string& csv_file) {
  Dataset ds = load_split(data_dir, split);
  ConfusionMatrix m;
  if (is_quantized_package(model_dir)) {
    m = evaluate_confusion_int8(load_quantized(model_dir), ds);
  } else {
    auto [graph, weights] = load_model(model_dir);
    m = evaluate_confusion(graph, weights, ds);
  }
  std::fputs(confusion_pretty(m).c_str(), stdout);
  std::printf("accuracy=%.6f fp_rate=%.6f fn_rate=%.6f\n", m.accuracy(), m.fp_rate(),
              m.fn_rate());
  if (!csv_file.empty()) {
    std::ofstream os(csv_file, std::ios::trunc);
    confusion_to_csv(m, os);
  }
  return 0;
}

int cmd_benchmark(const GlobalFlags&, const std::string& model_dir,
                  const std::string& data_dir, const std::string& split, int warmup,
                  int runs, const std::string& csv_file) {
  Dataset ds = load_split(data_dir, split);
  auto inputs = dataset_inputs(ds, 8);
  BenchResult r;
  if (is_quantized_package(model_dir)) {
    QuantizedModel qm = load_quantized(model_dir);
    QuantParams qp{qm.input_exp};
    std::vector<Tensor> qin;
    for (const auto& t : inputs) qin.push_back(quantize_input(t, qp));
    r = benchmark(qm, qin, warmup, runs);
  } else {
    auto [graph, weights] = load_model(model_dir);
    r = benchmark(graph, weights, inputs, warmup, runs);
  }
  std::printf("model=%s executor=%s mean_ms=%.3f median_ms=%.3f fps=%.3f\n",
              r.model_id.c_str(), r.executor_id.c_str(), r.mean_ms, r.median_ms, r.fps);
  if (!csv_file.empty()) {
    std::ofstream os(csv_file, std::ios::trunc);
    bench_to_csv(r, os);
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"cloud-detection model compression and emulated-DPU toolchain"};
  app.require_subcommand(1);

  GlobalFlags g;
  if (const char* env = std::getenv("CF_SEED")) {
    g.seed = std::strtoull(env, nullptr, 10);
  }
  app.add_option("--seed", g.seed, "global rng seed (falls back to CF_SEED)");
  app.add_option("--out-dir", g.out_dir, "directory for artifacts");
  app.add_option("--device-capacity-bytes", g.capacity_bytes,
                 "override device activation capacity");

  auto arch_check = CLI::IsMember(architecture_names());

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  int scenes = 2;
  int64_t height = 768, width = 768, tile_size = 256, per_class = 1000;
  double density = 0.45, threshold = 0.70, train_frac = 0.7;
  std::string mode = "tiles", raster, gen_out;
  gen->add_option("--scenes", scenes);
  gen->add_option("--height", height);
  gen->add_option("--width", width);
  gen->add_option("--cloud-density", density);
  gen->add_option("--mode", mode)->check(CLI::IsMember({"tiles", "spectra", "patches"}));
  gen->add_option("--tile-size", tile_size);
  gen->add_option("--threshold", threshold);
  gen->add_option("--per-class", per_class);
  gen->add_option("--train-frac", train_frac);
  gen->add_option("--import-raster", raster, "H*W*13 float32 LE raster instead of synthesis");
  gen->add_option("--out", gen_out)->required();

  // build
  auto* build = app.add_subcommand("build", "build an architecture with fresh weights");
  std::string build_arch, build_out;
  build->add_option("--arch", build_arch)->required()->check(arch_check);
  build->add_option("--out", build_out)->required();

  // summarize
  auto* summ = app.add_subcommand("summarize", "parameter and FLOP counts");
  std::string summ_arch, summ_model;
  summ->add_option("--arch", summ_arch)->check(arch_check);
  summ->add_option("--model", summ_model);

  // train
  auto* tr = app.add_subcommand("train", "train a model package");
  std::string tr_model, tr_data, tr_out, tr_calib, tr_history;
  int tr_epochs = 200, tr_patience = 30, tr_batch = 32;
  double tr_lr = 1e-3;
  bool tr_qat = false, tr_augment = false;
  tr->add_option("--model", tr_model)->required();
  tr->add_option("--data", tr_data)->required();
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--patience", tr_patience);
  tr->add_option("--batch", tr_batch);
  tr->add_option("--lr", tr_lr);
  tr->add_flag("--qat", tr_qat, "fake-quant fine-tuning (needs --calib)");
  tr->add_option("--calib", tr_calib);
  tr->add_flag("--augment", tr_augment);
  tr->add_option("--out", tr_out)->required();
  tr->add_option("--history", tr_history, "per-epoch CSV");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "max-abs int8 calibration");
  std::string cal_model, cal_data, cal_out;
  int cal_samples = 8;
  cal->add_option("--model", cal_model)->required();
  cal->add_option("--data", cal_data)->required();
  cal->add_option("--samples", cal_samples);
  cal->add_option("--out", cal_out)->required();

  // quantize
  auto* qz = app.add_subcommand("quantize", "convert to the int8 package");
  std::string qz_model, qz_calib, qz_out;
  qz->add_option("--model", qz_model)->required();
  qz->add_option("--calib", qz_calib)->required();
  qz->add_option("--out", qz_out)->required();

  // prune
  auto* pr = app.add_subcommand("prune", "structured channel pruning");
  std::string pr_model, pr_data, pr_out, pr_report;
  double pr_target = 0.5;
  int pr_steps = 3, pr_ft = 10;
  pr->add_option("--model", pr_model)->required();
  pr->add_option("--data", pr_data)->required();
  pr->add_option("--pr", pr_target)->required();
  pr->add_option("--steps", pr_steps);
  pr->add_option("--finetune-epochs", pr_ft);
  pr->add_option("--out", pr_out)->required();
  pr->add_option("--report", pr_report);

  // compile
  auto* co = app.add_subcommand("compile", "lower to an execution plan");
  std::string co_model, co_arch, co_report;
  int co_input = 0;
  co->add_option("--model", co_model);
  co->add_option("--arch", co_arch)->check(arch_check);
  co->add_option("--input", co_input, "square input extent override");
  co->add_option("--report", co_report);

  // check
  auto* ck = app.add_subcommand("check", "buffer-capacity verdict");
  std::string ck_model, ck_arch;
  int ck_input = 0;
  ck->add_option("--model", ck_model);
  ck->add_option("--arch", ck_arch)->check(arch_check);
  ck->add_option("--input", ck_input);

  // infer
  auto* in = app.add_subcommand("infer", "single-input inference");
  std::string in_model, in_file, in_calib;
  int in_index = 0;
  bool in_fq = false;
  in->add_option("--model", in_model)->required();
  in->add_option("--input", in_file)->required();
  in->add_option("--index", in_index);
  in->add_flag("--fq", in_fq, "fake-quant float reference (needs --calib)");
  in->add_option("--calib", in_calib);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "confusion metrics over a dataset");
  std::string ev_model, ev_data, ev_split = "val", ev_csv;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--split", ev_split);
  ev->add_option("--csv", ev_csv);

  // benchmark
  auto* be = app.add_subcommand("benchmark", "wall-clock inference timing");
  std::string be_model, be_data, be_split = "val", be_csv;
  int be_warmup = 5, be_runs = 50;
  be->add_option("--model", be_model)->required();
  be->add_option("--data", be_data)->required();
  be->add_option("--split", be_split);
  be->add_option("--warmup", be_warmup);
  be->add_option("--runs", be_runs);
  be->add_option("--csv", be_csv);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      return app.exit(e);
    }
    std::cerr << "USAGE ERROR: " << e.what() << "\n";
    return 2;
  }

  std::printf("seed=%llu\n", static_cast<unsigned long long>(g.seed));
  try {
    if (gen->parsed()) {
      return cmd_gen_data(g, scenes, height, width, density, mode, tile_size, threshold,
                          per_class, train_frac, raster, gen_out);
    }
    if (build->parsed()) return cmd_build(g, build_arch, build_out);
    if (summ->parsed()) {
      if (summ_arch.empty() && summ_model.empty()) {
        std::cerr << "USAGE ERROR: summarize needs --arch or --model\n";
        return 2;
      }
      return cmd_summarize(summ_arch, summ_model);
    }
    if (tr->parsed()) {
      return cmd_train(g, tr_model, tr_data, tr_epochs, tr_patience, tr_batch, tr_lr,
                       tr_qat, tr_calib, tr_augment, tr_out, tr_history);
    }
    if (cal->parsed()) return cmd_calibrate(g, cal_model, cal_data, cal_samples, cal_out);
    if (qz->parsed()) return cmd_quantize(g, qz_model, qz_calib, qz_out);
    if (pr->parsed()) {
      return cmd_prune(g, pr_model, pr_data, pr_target, pr_steps, pr_ft, pr_out,
                       pr_report);
    }
    if (co->parsed()) {
      if (co_model.empty() && co_arch.empty()) {
        std::cerr << "USAGE ERROR: compile needs --arch or --model\n";
        return 2;
      }
      return cmd_compile(g, co_model, co_arch, co_input, co_report);
    }
    if (ck->parsed()) {
      if (ck_model.empty() && ck_arch.empty()) {
        std::cerr << "USAGE ERROR: check needs --arch or --model\n";
        return 2;
      }
      return cmd_check(g, ck_model, ck_arch, ck_input);
    }
    if (in->parsed()) return cmd_infer(g, in_model, in_file, in_index, in_fq, in_calib);
    if (ev->parsed()) return cmd_evaluate(g, ev_model, ev_data, ev_split, ev_csv);
    if (be->parsed()) {
      return cmd_benchmark(g, be_model, be_data, be_split, be_warmup, be_runs, be_csv);
    }
  } catch (const Error& e) {
    const char* kind = "Error";
    if (dynamic_cast<const ShapeError*>(&e)) kind = "ShapeError";
    else if (dynamic_cast<const ArchError*>(&e)) kind = "ArchError";
    else if (dynamic_cast<const ModelIOError*>(&e)) kind = "ModelIOError";
    else if (dynamic_cast<const QuantError*>(&e)) kind = "QuantError";
    else if (dynamic_cast<const PruneError*>(&e)) kind = "PruneError";
    else if (dynamic_cast<const DataError*>(&e)) kind = "DataError";
    else if (dynamic_cast<const ArgumentError*>(&e)) kind = "ArgumentError";
    else if (dynamic_cast<const StateError*>(&e)) kind = "StateError";
    std::cerr << "ERROR kind=" << kind << " msg=" << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace cumulus
