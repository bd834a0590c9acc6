#include "tsft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tsft {
namespace {

std::vector<std::size_t> order_by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

void check_lengths(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("metric: scores and labels differ in length");
}

std::vector<double> column(const Mat<double>& m, Index c) {
  std::vector<double> out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) out[i] = m(i, c);
  return out;
}

}  // namespace

std::optional<double> metric_auroc(std::span<const double> scores, std::span<const double> labels) {
  check_lengths(scores, labels);
  const auto idx = order_by_score_desc(scores);
  // Walk tie groups from the top; each negative in a group beats no positive
  // above it, ties contribute one half.
  double pos_above = 0, wins = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double gp = 0, gn = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] > 0.5 ? gp : gn) += 1;
      ++j;
    }
    wins += gn * pos_above + 0.5 * gn * gp;
    pos_above += gp;
    n_pos += gp;
    n_neg += gn;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return wins / (n_pos * n_neg);
}

std::optional<double> metric_auprc(std::span<const double> scores, std::span<const double> labels) {
  check_lengths(scores, labels);
  const double n_pos = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](double y) { return y > 0.5; }));
  if (n_pos == 0) return std::nullopt;
  const auto idx = order_by_score_desc(scores);
  double tp = 0, fp = 0, prev_recall = 0, ap = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] > 0.5 ? tp : fp) += 1;
      ++j;
    }
    const double recall = tp / n_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

Mat<double> threshold(const Mat<double>& probs, double t) {
  return probs.unaryExpr([t](double p) { return p >= t ? 1.0 : 0.0; });
}

double metric_accuracy(const Mat<double>& preds, const Mat<double>& labels) {
  if (preds.rows() != labels.rows() || preds.cols() != labels.cols()) throw std::invalid_argument("accuracy: shape mismatch");
  if (preds.size() == 0) throw std::invalid_argument("accuracy: empty input");
  double hit = 0;
  for (Index i = 0; i < preds.size(); ++i) hit += (preds.data()[i] > 0.5) == (labels.data()[i] > 0.5);
  return hit / static_cast<double>(preds.size());
}

double metric_f1_macro(const Mat<double>& preds, const Mat<double>& labels) {
  if (preds.rows() != labels.rows() || preds.cols() != labels.cols()) throw std::invalid_argument("f1: shape mismatch");
  if (preds.cols() == 0) throw std::invalid_argument("f1: no labels");
  double total = 0;
  for (Index c = 0; c < preds.cols(); ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (Index i = 0; i < preds.rows(); ++i) {
      const bool p = preds(i, c) > 0.5, y = labels(i, c) > 0.5;
      tp += p && y;
      fp += p && !y;
      fn += !p && y;
    }
    const double den = 2 * tp + fp + fn;
    total += den > 0 ? 2 * tp / den : 0.0;
  }
  return total / static_cast<double>(preds.cols());
}

std::optional<double> metric_auroc_macro(const Mat<double>& scores, const Mat<double>& labels) {
  double sum = 0;
  int n = 0;
  for (Index c = 0; c < scores.cols(); ++c) {
    const auto s = column(scores, c), y = column(labels, c);
    if (auto v = metric_auroc(s, y)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::optional<double> metric_auprc_macro(const Mat<double>& scores, const Mat<double>& labels) {
  double sum = 0;
  int n = 0;
  for (Index c = 0; c < scores.cols(); ++c) {
    const auto s = column(scores, c), y = column(labels, c);
    if (auto v = metric_auprc(s, y)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

double metric_mse(const Mat<double>& pred, const Mat<double>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw std::invalid_argument("mse: shape mismatch");
  double s = 0;
  for (Index i = 0; i < pred.size(); ++i) s += (pred.data()[i] - target.data()[i]) * (pred.data()[i] - target.data()[i]);
  return s / static_cast<double>(pred.size());
}

double metric_mae(const Mat<double>& pred, const Mat<double>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw std::invalid_argument("mae: shape mismatch");
  double s = 0;
  for (Index i = 0; i < pred.size(); ++i) s += std::abs(pred.data()[i] - target.data()[i]);
  return s / static_cast<double>(pred.size());
}

std::map<std::string, double> classification_metrics(const Mat<double>& probs, const Mat<double>& labels) {
  std::map<std::string, double> m;
  const Mat<double> preds = threshold(probs);
  m["accuracy"] = metric_accuracy(preds, labels);
  m["f1_macro"] = metric_f1_macro(preds, labels);
  if (auto v = metric_auroc_macro(probs, labels)) m["auroc"] = *v;
  if (auto v = metric_auprc_macro(probs, labels)) m["auprc"] = *v;
  return m;
}

std::map<std::string, double> forecast_metrics(const Mat<double>& pred, const Mat<double>& target) {
  return {{"mse", metric_mse(pred, target)}, {"mae", metric_mae(pred, target)}};
}

}  // namespace tsft
