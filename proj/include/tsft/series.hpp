#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "tsft/tensor.hpp"

namespace tsft {

// One multivariate sample: x is C x T. For classification y is 1 x M label
// probabilities; for forecasting y is the C x H future block.
struct MultiSeries {
  Mat<double> x;
  Mat<double> y;
  std::vector<std::string> channel_names;
  std::string sample_id;

  Index channels() const { return x.rows(); }
  Index length() const { return x.cols(); }
};

// A single channel. When padded_length exceeds the number of values the
// series is right-padded with zeros up to that length before patching; the
// patches that hold no real value are masked out downstream.
struct UniSeries {
  Eigen::VectorXd values;
  Index padded_length = 0;

  Index length() const { return values.size(); }
};

}  // namespace tsft
