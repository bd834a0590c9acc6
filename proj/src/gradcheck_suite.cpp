#include "tsft/gradcheck_suite.hpp"

#include <string>

#include "tsft/peft.hpp"
#include "tsft/train.hpp"

namespace tsft {

namespace {

struct Component {
  std::string name;
  StrategyConfig strategy;
  TaskKind task;
};

std::vector<Component> components() {
  auto make = [](StrategyKind kind, Aggregator agg = Aggregator::kTransformer) {
    StrategyConfig s;
    s.kind = kind;
    s.aggregator = agg;
    s.prompt_size = 2;
    return s;
  };
  return {
      {"backbone", make(StrategyKind::kFull), TaskKind::kClassify},
      {"lora", make(StrategyKind::kLora), TaskKind::kClassify},
      {"aggregator.transformer", make(StrategyKind::kGenP, Aggregator::kTransformer), TaskKind::kClassify},
      {"aggregator.rnn", make(StrategyKind::kGenP, Aggregator::kRnn), TaskKind::kClassify},
      {"aggregator.mlp", make(StrategyKind::kGenP, Aggregator::kMlp), TaskKind::kClassify},
      {"aggregator.constant", make(StrategyKind::kGenP, Aggregator::kConstant), TaskKind::kClassify},
      {"ptuning", make(StrategyKind::kPTuning), TaskKind::kClassify},
      {"head.classify", make(StrategyKind::kLinear), TaskKind::kClassify},
      {"head.forecast", make(StrategyKind::kLinear), TaskKind::kForecast},
  };
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const BackboneConfig& cfg_in, const GradCheckSuiteOptions& opts) {
  BackboneConfig cfg = cfg_in;
  cfg.validate();
  // A short series whose last patch is only partly filled.
  const Index T = std::min<Index>(cfg.max_T, 3 * cfg.stride + cfg.patch_len / 2 + 1);
  const Index C = 3;

  std::vector<GradCheckResult> out;
  std::mt19937_64 rng(opts.seed);
  for (const Component& comp : components()) {
    for (int d = 0; d < opts.draws; ++d) {
      TaskSpec task;
      task.kind = comp.task;
      task.channels = static_cast<int>(C);
      if (task.kind == TaskKind::kClassify) {
        task.labels = 2;
      } else {
        task.horizon = 3;
        task.patches = static_cast<int>(cfg.num_patches(T));
      }
      AdaptedModel<double> model(Backbone<double>::random(cfg, rng), comp.strategy, task, rng);
      // Move away from the structured initial point (e.g. LoRA's B = 0).
      std::normal_distribution<double> jitter(0.0, 0.1);
      for (auto* p : model.parameters())
        for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += jitter(rng);

      MultiSeries x;
      x.x = Mat<double>(C, T);
      std::normal_distribution<double> z(0.0, 1.0);
      for (Index i = 0; i < x.x.size(); ++i) x.x.data()[i] = z(rng);
      Mat<double> target;
      if (task.kind == TaskKind::kClassify) {
        target = Mat<double>(1, task.labels);
        for (Index j = 0; j < target.size(); ++j) target.data()[j] = (rng() & 1) ? 1.0 : 0.0;
      } else {
        target = Mat<double>(C, task.horizon);
        for (Index j = 0; j < target.size(); ++j) target.data()[j] = z(rng);
      }

      const std::uint64_t dropout_seed = rng();
      auto build = [&](Tape<double>& tape) {
        std::mt19937_64 drng(dropout_seed);  // same dropout mask on every call
        ForwardContext<double> ctx{tape, true, &drng};
        return compute_loss(model.forward(ctx, x), target, task);
      };
      out.push_back(check_gradients(comp.name, build, model.parameters(), rng, opts.eps, opts.tol,
                                    opts.entries_per_param));
    }
  }
  return out;
}

}  // namespace tsft
