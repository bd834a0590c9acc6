#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsft/backbone.hpp"
#include "tsft/data.hpp"
#include "tsft/peft.hpp"
#include "tsft/pretrain.hpp"
#include "tsft/train.hpp"

namespace tsft {

struct DataConfig {
  std::string source = "channel-mix";  // channel-mix | forecast | csv
  std::string path;                    // csv only
  Index n_samples = 1000;
  Index channels = 2;
  Index length = 64;
  double noise = 0.5;  // channel-mix coupling noise
  CsvSchema schema;
  std::map<std::string, double> defaults;
  SplitRatios split;
  std::uint64_t seed = 0;
};

struct TaskConfig {
  TaskKind kind = TaskKind::kClassify;
  int labels = 1;
  int horizon = 0;
  Index lookback = 0;  // required for forecasting
  Index window_stride = 1;
};

struct RunConfig {
  BackboneConfig backbone;
  DataConfig data;
  TaskConfig task;
  StrategyConfig strategy;
  TrainConfig train;
  PretrainConfig pretrain;
  Index pretrain_corpus = 256;  // univariate series drawn from the data source
};

// Strict parse: unknown keys anywhere are rejected. Missing keys take defaults.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

// Applies TSFT_SEED if set.
void apply_env_overrides(RunConfig& cfg);

struct PreparedData {
  DatasetSplit split;
  TaskSpec task;
};

// Loads or generates data, imputes, windows (forecast) and splits.
PreparedData prepare_data(const RunConfig& cfg);

// Univariate pretraining corpus derived from the configured data source.
std::vector<UniSeries> pretraining_corpus(const RunConfig& cfg);

}  // namespace tsft
