#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tsft/tensor.hpp"

namespace tsft {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Adam with decoupled weight decay: the decay multiplies the weights directly
// and never enters the moment estimates. Frozen parameters are skipped.
template <typename S>
class AdamW {
 public:
  AdamW(ParamRefs<S> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  long steps() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

  void step(double lr) {
    for (auto* p : params_)
      if (p->trainable && p->has_grad() && !p->grad.allFinite())
        throw NonFiniteError("adamw: non-finite gradient for " + p->name);
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const S b1 = S(cfg_.beta1), b2 = S(cfg_.beta2);
    const S decay = S(1.0 - lr * cfg_.weight_decay);
    const S step_size = S(lr / bc1);
    const S inv_sqrt_bc2 = S(1.0 / std::sqrt(bc2));
    const S eps = S(cfg_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter<S>& p = *params_[k];
      if (!p.trainable) continue;
      Mat<S>& m = m_[k];
      Mat<S>& v = v_[k];
      S* w = p.value.data();
      const S* g = p.has_grad() ? p.grad.data() : nullptr;
      for (Index i = 0; i < p.value.size(); ++i) {
        const S gi = g ? g[i] : S(0);
        w[i] *= decay;
        m.data()[i] = b1 * m.data()[i] + (S(1) - b1) * gi;
        v.data()[i] = b2 * v.data()[i] + (S(1) - b2) * gi * gi;
        w[i] -= step_size * m.data()[i] / (std::sqrt(v.data()[i]) * inv_sqrt_bc2 + eps);
      }
      if (!p.value.allFinite()) throw NonFiniteError("adamw: non-finite weight after update of " + p.name);
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  ParamRefs<S> params_;
  AdamWConfig cfg_;
  std::vector<Mat<S>> m_, v_;
  long step_ = 0;
};

// One-cycle schedule: linear ramp from initial_lr to max_lr over the first
// warmup_frac of steps, then cosine annealing down to max_lr / final_div.
struct OneCycleSchedule {
  long total_steps = 1;
  double initial_lr = 5e-5;
  double max_lr = 0.01;
  double final_div = 1e4;
  double warmup_frac = 0.3;

  double final_lr() const { return max_lr / final_div; }
  long peak_step() const { return static_cast<long>(std::llround(warmup_frac * static_cast<double>(total_steps))); }

  double operator()(long step) const {
    if (total_steps <= 0) throw std::invalid_argument("one-cycle: total_steps must be > 0");
    if (step < 0 || step > total_steps) throw std::out_of_range("one-cycle: step outside [0, total_steps]");
    const long peak = peak_step();
    if (step <= peak) {
      if (peak == 0) return max_lr;
      const double f = static_cast<double>(step) / static_cast<double>(peak);
      return initial_lr + f * (max_lr - initial_lr);
    }
    const double f = static_cast<double>(step - peak) / static_cast<double>(total_steps - peak);
    return final_lr() + 0.5 * (max_lr - final_lr()) * (1.0 + std::cos(M_PI * f));
  }
};

}  // namespace tsft
