#pragma once

#include <cstdint>
#include <vector>

#include "tsft/backbone.hpp"

namespace tsft {

struct PretrainConfig {
  int epochs = 10;
  double mask_ratio = 0.3;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  Backbone<float> backbone;   // all parameters frozen
  std::vector<double> losses;  // [0] before training, then after each epoch
};

// Masked-patch reconstruction: a random mask_ratio of each series' real
// patches is zeroed, and a temporary linear decoder (D -> patch_len) is
// trained with the backbone to reconstruct their normalised values. The loss
// is MSE over masked patches only; losses are measured on a fixed mask draw.
PretrainResult pretrain(const std::vector<UniSeries>& corpus, const BackboneConfig& cfg, const PretrainConfig& pcfg);

}  // namespace tsft
