#pragma once

#include <iosfwd>

#include "cumulus/autograd.hpp"
#include "cumulus/data.hpp"

namespace cumulus {

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 200;
  int patience = 30;  // early stopping on validation loss
  int batch_size = 32;
  uint64_t seed = 0;
  bool qat_enabled = false;
  const QuantConfig* qat_config = nullptr;  // frozen exponents for QAT
  bool augmentation_enabled = false;
  bool parallel = true;
  bool verbose = false;
};

struct TrainHistory {
  std::vector<double> train_loss;  // objective: bce + l2 penalty
  std::vector<double> val_loss;
  std::vector<double> val_acc;
  int best_epoch = -1;  // index of the minimal validation loss
  int epochs_run = 0;
};

struct TrainResult {
  WeightMap weights;  // best-epoch weights
  TrainHistory history;
};

/// Mini-batch Adam training with early stopping. Bitwise reproducible given
/// (seed, dataset, config). The target is the record's mask when present,
/// otherwise its scalar label.
TrainResult train(const Graph& g, WeightMap init, const Dataset& train_set,
                  const Dataset& val_set, const TrainConfig& cfg);

/// epoch,train_loss,val_loss,val_acc rows.
void history_to_csv(const TrainHistory& h, std::ostream& os);

/// Objective and accuracy of one dataset pass in inference mode.
struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalStats evaluate(const Graph& g, const WeightMap& w, const Dataset& ds, bool parallel,
                   const QuantConfig* fake_quant = nullptr);

/// Sum of lambda * ||kernel||^2 over parameterized nodes.
double l2_penalty(const Graph& g, const WeightMap& w);

}  // namespace cumulus
