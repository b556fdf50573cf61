#include "cumulus/train.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <ostream>

#include "cumulus/errors.hpp"

namespace cumulus {

namespace {

// Scalar-output models train against the tile label even when a mask exists;
// segmenters train against the mask.
Tensor target_of(const TileRecord& r, int64_t output_numel) {
  if (output_numel == 1) {
    return Tensor::from_f32({1, 1}, {static_cast<float>(r.label)});
  }
  if (!r.has_mask() || r.mask.numel() != output_numel) {
    throw ArgumentError("record has no mask matching the model output");
  }
  return r.mask;
}

// Tiny inputs are cheaper single-threaded; OpenMP fork overhead dominates
// spectra-sized kernels.
bool worth_parallel(const TileRecord& r, bool want) {
  return want && r.pixels.numel() >= 4096;
}

void accumulate(WeightMap& sum, const WeightMap& grads) {
  for (auto& [id, g] : grads) {
    auto it = sum.find(id);
    if (it == sum.end()) {
      sum.emplace(id, g);
      continue;
    }
    auto add = [](Tensor& dst, const Tensor& src) {
      auto d = dst.f();
      auto s = src.f();
      for (size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    };
    add(it->second.kernel, g.kernel);
    add(it->second.bias, g.bias);
  }
}

void scale(WeightMap& grads, float factor) {
  for (auto& [id, g] : grads) {
    for (float& v : g.kernel.f()) v *= factor;
    for (float& v : g.bias.f()) v *= factor;
  }
}

bool square_spatial(const TileRecord& r) {
  const Shape& s = r.pixels.shape();
  return s.size() == 4 && s[1] == s[2] && s[1] > 1;
}

}  // namespace

double l2_penalty(const Graph& g, const WeightMap& w) {
  double total = 0.0;
  for (const auto& [id, lw] : w) {
    if (!g.has(id)) continue;
    const NodeSpec& n = g.node(id);
    double lambda = 0.0;
    switch (n.kind) {
      case NodeKind::Conv2D: lambda = n.conv().l2_lambda; break;
      case NodeKind::TransposedConv2D: lambda = n.tconv().l2_lambda; break;
      case NodeKind::Dense: lambda = n.dense().l2_lambda; break;
      default: break;
    }
    if (lambda == 0.0) continue;
    double sq = 0.0;
    for (float v : lw.kernel.f()) sq += static_cast<double>(v) * v;
    total += lambda * sq;
  }
  return total;
}

EvalStats evaluate(const Graph& g, const WeightMap& w, const Dataset& ds, bool parallel,
                   const QuantConfig* fake_quant) {
  if (ds.records.empty()) throw ArgumentError("evaluate needs a non-empty dataset");
  double loss_sum = 0.0;
  int64_t correct = 0, total = 0;
  double l2 = l2_penalty(g, w);
  for (const auto& r : ds.records) {
    ForwardOptions opts;
    opts.mode = ExecMode::Inference;
    opts.parallel = worth_parallel(r, parallel);
    opts.fake_quant = fake_quant;
    auto res = forward(g, w, r.pixels, opts);
    Tensor target = target_of(r, res.output.numel());
    loss_sum += bce_loss(res.output, target) + l2;
    auto p = res.output.f();
    auto y = target.f();
    for (size_t i = 0; i < p.size(); ++i) {
      correct += ((p[i] >= 0.5f) == (y[i] >= 0.5f)) ? 1 : 0;
      ++total;
    }
  }
  EvalStats s;
  s.loss = loss_sum / static_cast<double>(ds.records.size());
  s.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return s;
}

TrainResult train(const Graph& g, WeightMap init, const Dataset& train_set,
                  const Dataset& val_set, const TrainConfig& cfg) {
  if (train_set.records.empty() || val_set.records.empty()) {
    throw ArgumentError("train needs non-empty train and validation splits");
  }
  if (cfg.learning_rate <= 0.0) throw ArgumentError("learning_rate must be positive");
  if (cfg.patience > cfg.max_epochs) {
    throw ArgumentError("patience must not exceed max_epochs");
  }
  if (cfg.qat_enabled && cfg.qat_config == nullptr) {
    throw ArgumentError("qat_enabled needs qat_config");
  }
  const QuantConfig* fq = cfg.qat_enabled ? cfg.qat_config : nullptr;

  WeightMap weights = std::move(init);
  AdamState adam;
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.learning_rate;

  Rng shuffle_rng = Rng(cfg.seed).fork(1);
  Rng dropout_rng = Rng(cfg.seed).fork(2);
  Rng augment_rng = Rng(cfg.seed).fork(3);

  TrainHistory history;
  double best_val = std::numeric_limits<double>::infinity();
  WeightMap best_weights = weights;
  int since_best = 0;

  std::vector<size_t> order(train_set.records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (size_t i = order.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(shuffle_rng.next_below(i + 1));
      std::swap(order[i], order[j]);
    }
    double epoch_loss = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      WeightMap grad_sum;
      double batch_loss = 0.0;
      for (size_t k = start; k < end; ++k) {
        const TileRecord& base = train_set.records[order[k]];
        TileRecord aug;
        const TileRecord* rec = &base;
        if (cfg.augmentation_enabled && square_spatial(base)) {
          aug = augment(base, augment_rng);
          rec = &aug;
        }
        ForwardOptions opts;
        opts.mode = ExecMode::Training;
        opts.rng = &dropout_rng;
        opts.fake_quant = fq;
        opts.parallel = worth_parallel(*rec, cfg.parallel);
        auto res = forward(g, weights, rec->pixels, opts);
        Tensor target = target_of(*rec, res.output.numel());
        batch_loss += bce_loss(res.output, target);
        Tensor ograd = bce_grad(res.output, target);
        WeightMap grads =
            backward(g, weights, res.cache, ograd, fq, opts.parallel);
        accumulate(grad_sum, grads);
      }
      size_t batch_n = end - start;
      scale(grad_sum, 1.0f / static_cast<float>(batch_n));
      adam_step(weights, grad_sum, adam, adam_cfg);
      epoch_loss += batch_loss / static_cast<double>(batch_n);
      ++batches;
    }
    epoch_loss = epoch_loss / static_cast<double>(batches) + l2_penalty(g, weights);

    EvalStats val = evaluate(g, weights, val_set, cfg.parallel, fq);
    history.train_loss.push_back(epoch_loss);
    history.val_loss.push_back(val.loss);
    history.val_acc.push_back(val.accuracy);
    history.epochs_run = epoch + 1;
    if (cfg.verbose) {
      std::cerr << "epoch " << epoch << " train_loss " << epoch_loss << " val_loss "
                << val.loss << " val_acc " << val.accuracy << "\n";
    }
    if (val.loss < best_val) {
      best_val = val.loss;
      history.best_epoch = epoch;
      best_weights = weights;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= cfg.patience) break;
    }
  }
  return {std::move(best_weights), std::move(history)};
}

void history_to_csv(const TrainHistory& h, std::ostream& os) {
  os << "epoch,train_loss,val_loss,val_acc\n";
  char buf[128];
  for (size_t i = 0; i < h.train_loss.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f\n", i, h.train_loss[i],
                  h.val_loss[i], h.val_acc[i]);
    os << buf;
  }
}

}  // namespace cumulus
