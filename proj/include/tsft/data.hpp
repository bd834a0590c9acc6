#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsft/series.hpp"

namespace tsft {

// Column roles for CSV ingestion. Header: sample_id,time,<channels>[,labels].
struct CsvSchema {
  // Channel columns in order; empty means every column that is not a label.
  std::vector<std::string> channels;
  std::vector<std::string> labels;
  // Categorical channels and their category order (ordinal encoding).
  std::map<std::string, std::vector<std::string>> category_orders;
  // Append a derived channel holding time minus the sample's first time.
  bool hours_channel = false;
};

inline constexpr const char* kHoursChannel = "hours";

// One MultiSeries per sample_id (in first-appearance order), rows sorted by
// time. Missing cells are NaN until impute() runs.
std::vector<MultiSeries> load_csv(const std::filesystem::path& path, const CsvSchema& schema);

// Writes samples back in the same layout; labels (y) go in `label_names`
// columns on every row.
void write_csv(const std::filesystem::path& path, const std::vector<MultiSeries>& samples,
               const std::vector<std::string>& label_names);

// Forward fill along time; leading gaps take the channel default.
MultiSeries impute(const MultiSeries& x, const std::map<std::string, double>& defaults);

// Category -> its position in `order`. Missing entries (nullopt) map to NaN.
std::vector<double> encode_ordinal(const std::vector<std::optional<std::string>>& values,
                                   const std::vector<std::string>& order);

struct SplitRatios {
  double train = 0.6;
  double val = 0.1;
  double test = 0.3;
};

struct DatasetSplit {
  std::vector<MultiSeries> train, val, test;
  std::uint64_t seed = 0;
};

// Seeded shuffle, then floor(train*N), floor(val*N), remainder to test.
DatasetSplit split(const std::vector<MultiSeries>& dataset, SplitRatios ratios, std::uint64_t seed);

// Sliding (lookback, horizon) windows over one long C x T_total series; y is
// the C x H block that follows each window.
std::vector<MultiSeries> make_windows(const MultiSeries& series, Index lookback, Index horizon, Index stride = 1);

struct ChannelMixOptions {
  double smoothing = 0.8;  // AR(1) coefficient of the driver channel
  double noise = 0.5;      // std of the noise added to the coupled channel
};

// Channel 1 is AR(1) noise; channel 2 = s * channel 1 + noise with s = +-1
// equiprobable; label 1 iff s = +1. Further channels are independent AR(1)
// distractors. Each channel's marginal is identical across classes.
std::vector<MultiSeries> synth_channel_mix(Index n_samples, Index channels, Index length, std::uint64_t seed,
                                           ChannelMixOptions opts = {});

// Sums of three sinusoids whose phases are coupled across channels, plus
// Gaussian noise (std 0.1). Amplitudes are bounded by 1 per component.
std::vector<MultiSeries> synth_forecast(Index n_series, Index channels, Index length, std::uint64_t seed);

// Every channel of every series as a univariate series.
std::vector<UniSeries> univariate_corpus(const std::vector<MultiSeries>& data);

}  // namespace tsft
