#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsft/data.hpp"
#include "tsft/optim.hpp"
#include "tsft/peft.hpp"

namespace tsft {

struct TrainConfig {
  int epochs = 10;
  double lr = 5e-5;  // one-cycle starting rate
  double max_lr = 0.01;
  double weight_decay = 0.05;
  int batch_size = 32;  // <= 0 means full batch
  double warmup_frac = 0.3;
};

// MSE over C x H for forecasting, mean BCE over the M labels for classification.
template <typename S>
Var<S> compute_loss(const Var<S>& pred, const Mat<S>& target, const TaskSpec& task) {
  return task.kind == TaskKind::kForecast ? mse_loss(pred, target) : bce_with_logits(pred, target);
}

double compute_loss(const Mat<double>& pred, const Mat<double>& target, const TaskSpec& task);

struct TrainLog {
  std::vector<double> train_loss;  // mean minibatch loss per epoch
  std::vector<double> val_loss;    // after each epoch
  int best_epoch = -1;
  double best_val_loss = 0.0;
  long steps = 0;
};

// Minibatch AdamW + one-cycle training of the model's trainable parameters.
// Samples are reshuffled each epoch from rng. When `val` is non-empty the
// parameters from the epoch with the lowest validation loss are restored at
// the end.
TrainLog train_model(AdaptedModel<float>& model, const std::vector<MultiSeries>& train,
                     const std::vector<MultiSeries>& val, const TrainConfig& cfg, std::mt19937_64& rng);

// Rows are samples: probabilities (N x M) for classification, flattened
// forecasts (N x C*H) for forecasting.
Mat<double> predict(AdaptedModel<float>& model, const std::vector<MultiSeries>& samples);
Mat<double> stack_targets(const std::vector<MultiSeries>& samples);

double mean_loss(AdaptedModel<float>& model, const std::vector<MultiSeries>& samples);

// Task metrics plus "loss".
std::map<std::string, double> evaluate(AdaptedModel<float>& model, const std::vector<MultiSeries>& samples);

// ---------------------------------------------------------------------------
// Experiment matrix

struct ExperimentCell {
  std::string label;  // row key in results, e.g. "gen-p" or "gen-p[K=2]"
  StrategyConfig strategy;
};

struct RunResult {
  std::string strategy;
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;  // test metrics + val_loss
  Index trainable_params = 0;
  double trainable_fraction = 0.0;
  double seconds = 0.0;
  std::string error;  // non-empty if the cell failed

  bool ok() const { return error.empty(); }
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  int count = 0;
};

struct ExperimentSummary {
  std::map<std::string, std::map<std::string, MetricSummary>> table;
  std::vector<std::string> failures;
};

struct ExperimentSpec {
  Backbone<float> backbone;
  TaskSpec task;
  std::vector<ExperimentCell> cells;
  std::vector<std::uint64_t> seeds;
  TrainConfig train;
  int jobs = 1;
};

// Fresh model per (cell, seed), trained with best-validation selection and
// scored on the test split. Failed cells are recorded, not rethrown.
std::vector<RunResult> run_experiment(const ExperimentSpec& spec, const DatasetSplit& data);
RunResult run_cell(const ExperimentSpec& spec, const ExperimentCell& cell, std::uint64_t seed, const DatasetSplit& data);

ExperimentSummary summarize(const std::vector<RunResult>& results);

// CSV: strategy,seed,metric,value (includes trainable_params and
// runtime_seconds rows).
std::string results_csv(const std::vector<RunResult>& results);
// JSON: strategy -> metric -> {mean, std, n}; runtime is excluded so the file
// is a pure function of config and seeds.
std::string summary_json(const ExperimentSummary& summary, const std::string& config_hash);

}  // namespace tsft
