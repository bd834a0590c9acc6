#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsft/tensor.hpp"

namespace tsft {

// Probability that a random positive outranks a random negative, ties counted
// as one half. Empty when either class is absent.
std::optional<double> metric_auroc(std::span<const double> scores, std::span<const double> labels);

// Average precision: sum over distinct score thresholds (descending) of
// precision times the recall increment. Empty when there are no positives.
std::optional<double> metric_auprc(std::span<const double> scores, std::span<const double> labels);

// Fraction of entries where thresholded prediction equals the label.
double metric_accuracy(const Mat<double>& preds, const Mat<double>& labels);

// Unweighted mean over label columns of per-label F1; a label with no true
// and no predicted positives contributes 0.
double metric_f1_macro(const Mat<double>& preds, const Mat<double>& labels);

// Per-column AUROC / AUPRC averaged over the columns where they are defined.
std::optional<double> metric_auroc_macro(const Mat<double>& scores, const Mat<double>& labels);
std::optional<double> metric_auprc_macro(const Mat<double>& scores, const Mat<double>& labels);

double metric_mse(const Mat<double>& pred, const Mat<double>& target);
double metric_mae(const Mat<double>& pred, const Mat<double>& target);

// Thresholds probabilities at 0.5 (>= counts as positive).
Mat<double> threshold(const Mat<double>& probs, double t = 0.5);

// accuracy, auroc, f1_macro, auprc (the ranking metrics only when defined).
std::map<std::string, double> classification_metrics(const Mat<double>& probs, const Mat<double>& labels);
// mse, mae.
std::map<std::string, double> forecast_metrics(const Mat<double>& pred, const Mat<double>& target);

}  // namespace tsft
