#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsft/autodiff.hpp"

namespace tsft {

// Central-difference gradient of a scalar function of the given parameters.
// Only 64-bit parameters are accepted; the function is called with the
// parameter values perturbed in place and must be deterministic.
//
// If `entries` is non-empty, entries[i] lists the flat indices of params[i]
// to probe; other entries of the returned gradient are left at zero.
inline std::vector<Mat<double>> finite_diff_grad(const std::function<double()>& loss_fn,
                                                 const ParamRefs<double>& params, double eps,
                                                 const std::vector<std::vector<Index>>& entries = {}) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw std::invalid_argument("finite_diff_grad: eps must lie in [1e-6, 1e-3]");
  if (!entries.empty() && entries.size() != params.size())
    throw std::invalid_argument("finite_diff_grad: one entry list per parameter required");
  const double f0 = loss_fn();
  if (loss_fn() != f0) throw std::runtime_error("finite_diff_grad: loss function is not deterministic");

  std::vector<Mat<double>> grads;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Mat<double>& v = params[k]->value;
    Mat<double> g = Mat<double>::Zero(v.rows(), v.cols());
    auto probe = [&](Index i) {
      const double orig = v.data()[i];
      v.data()[i] = orig + eps;
      const double fp = loss_fn();
      v.data()[i] = orig - eps;
      const double fm = loss_fn();
      v.data()[i] = orig;
      g.data()[i] = (fp - fm) / (2 * eps);
    };
    if (entries.empty())
      for (Index i = 0; i < v.size(); ++i) probe(i);
    else
      for (Index i : entries[k]) probe(i);
    grads.push_back(std::move(g));
  }
  return grads;
}

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true gradient
// is ~0 from dominating through round-off.
inline double grad_rel_error(double analytic, double numeric, double floor = 1e-6) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / den;
}

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  Index entries_checked = 0;
  bool passed = false;
};

// Compares tape gradients against central differences for every trainable
// parameter in `params`. `build` records the loss on a fresh tape. At most
// `max_entries` random entries per parameter are probed (all when <= 0).
inline GradCheckResult check_gradients(const std::string& name,
                                       const std::function<Var<double>(Tape<double>&)>& build,
                                       const ParamRefs<double>& params, std::mt19937_64& rng,
                                       double eps = 1e-5, double tol = 1e-4, Index max_entries = 0) {
  ParamRefs<double> live;
  for (auto* p : params)
    if (p->trainable) live.push_back(p);

  for (auto* p : live) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }

  std::vector<std::vector<Index>> entries;
  for (auto* p : live) {
    std::vector<Index> idx(p->numel());
    for (Index i = 0; i < p->numel(); ++i) idx[i] = i;
    if (max_entries > 0 && p->numel() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
    }
    entries.push_back(std::move(idx));
  }

  auto loss_fn = [&]() {
    Tape<double> tape;
    return build(tape).value()(0, 0);
  };
  const auto numeric = finite_diff_grad(loss_fn, live, eps, entries);

  GradCheckResult r;
  r.name = name;
  for (std::size_t k = 0; k < live.size(); ++k) {
    const Mat<double>& a = live[k]->grad;
    for (Index i : entries[k]) {
      r.max_rel_error = std::max(r.max_rel_error, grad_rel_error(a.data()[i], numeric[k].data()[i]));
      ++r.entries_checked;
    }
  }
  r.passed = r.max_rel_error < tol;
  return r;
}

}  // namespace tsft
