#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tsft/backbone.hpp"

namespace tsft {

enum class StrategyKind { kFull, kLora, kLinear, kPTuning, kGenP };
enum class Aggregator { kTransformer, kRnn, kMlp, kConstant };

std::string to_string(StrategyKind k);
std::string to_string(Aggregator a);
StrategyKind parse_strategy(const std::string& s);
Aggregator parse_aggregator(const std::string& s);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kGenP;
  int prompt_size = 4;  // K
  Aggregator aggregator = Aggregator::kTransformer;
  int lora_rank = 1;
  double lora_alpha = 16.0;
  double lora_dropout = 0.1;

  // K actually used by the forward pass.
  int effective_k() const {
    return (kind == StrategyKind::kGenP || kind == StrategyKind::kPTuning) ? prompt_size : 0;
  }
  void validate() const {
    if (prompt_size < 0) throw std::invalid_argument("strategy: prompt size K must be >= 0");
    if (kind == StrategyKind::kLora && lora_rank < 1) throw std::invalid_argument("strategy: lora rank must be >= 1");
    if (lora_dropout < 0 || lora_dropout >= 1) throw std::invalid_argument("strategy: lora dropout must lie in [0, 1)");
  }
};

// Rows of x as separate univariate series, in channel order.
inline std::vector<UniSeries> channel_split(const MultiSeries& x) {
  if (x.channels() < 1 || x.length() < 1) throw std::invalid_argument("channel_split: empty series");
  if (!x.x.allFinite()) throw std::invalid_argument("channel_split: input contains missing or non-finite values");
  std::vector<UniSeries> out(x.channels());
  for (Index c = 0; c < x.channels(); ++c) out[c].values = x.x.row(c).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Channel stacking

// P x C x D array stored row-major as a (P*C) x D matrix: row p*C + c holds
// channel c's embedding of patch p.
template <typename S>
struct ChannelStack {
  Var<S> data;
  Index patches = 0;
  Index channels = 0;
  Mask mask;  // per patch

  Index width() const { return data.cols(); }

  // Mask over the P*C rows.
  Mask row_mask() const {
    Mask m;
    for (Index p = 0; p < patches; ++p) m.insert(m.end(), channels, mask[p]);
    return m;
  }

  Tensor<S> to_tensor() const {
    const Mat<S>& v = data.value();
    return Tensor<S>({patches, channels, width()}, std::vector<S>(v.data(), v.data() + v.size()));
  }
};

template <typename S>
ChannelStack<S> stack_channels(const std::vector<PatchGrid<S>>& grids) {
  if (grids.empty()) throw ShapeError("stack_channels: no channels");
  const Index P = grids.front().patches();
  for (const auto& g : grids) {
    if (g.patches() != P) throw ShapeError("stack_channels: patch count differs across channels");
    if (g.data.cols() != grids.front().data.cols()) throw ShapeError("stack_channels: width differs across channels");
  }
  std::vector<std::pair<Var<S>, Index>> rows;
  for (Index p = 0; p < P; ++p)
    for (const auto& g : grids) rows.emplace_back(g.data, p);
  return {gather_rows(rows), P, static_cast<Index>(grids.size()), grids.front().mask};
}

// (C*P) x D with channel c's patches in rows [c*P, (c+1)*P).
template <typename S>
Var<S> channel_major(const ChannelStack<S>& e) {
  std::vector<std::pair<Var<S>, Index>> rows;
  for (Index c = 0; c < e.channels; ++c)
    for (Index p = 0; p < e.patches; ++p) rows.emplace_back(e.data, p * e.channels + c);
  return gather_rows(rows);
}

template <typename S>
std::vector<PatchGrid<S>> unstack_channels(const ChannelStack<S>& e) {
  std::vector<PatchGrid<S>> out;
  for (Index c = 0; c < e.channels; ++c) {
    std::vector<std::pair<Var<S>, Index>> rows;
    for (Index p = 0; p < e.patches; ++p) rows.emplace_back(e.data, p * e.channels + c);
    out.push_back({gather_rows(rows), e.mask});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt attachment

// Prepends the (C*K) x D prompt to a channel's grid. Prompt rows are always
// attendable. With no prompt the grid is returned untouched.
template <typename S>
PatchGrid<S> attach_prompt(const std::optional<Var<S>>& prompt, const PatchGrid<S>& e) {
  if (!prompt || prompt->rows() == 0) return e;
  if (prompt->cols() != e.data.cols()) throw ShapeError("attach_prompt: prompt width differs from grid width");
  Mask mask(prompt->rows(), true);
  mask.insert(mask.end(), e.mask.begin(), e.mask.end());
  return {vstack<S>({*prompt, e.data}), std::move(mask)};
}

template <typename S>
PatchGrid<S> strip_prompt(const PatchGrid<S>& u, Index channels, Index k) {
  const Index n = channels * k;
  if (n == 0) return u;
  if (u.patches() < n) throw ShapeError("strip_prompt: fewer rows than prompt rows");
  return {slice_rows(u.data, n, u.patches() - n), Mask(u.mask.begin() + n, u.mask.end())};
}

// ---------------------------------------------------------------------------
// Prompt Module

// Maps the P x C x D channel stack to a (C*K) x D prompt (row c*K + k).
// Step 1 mixes channels with a transformer applied per patch; step 2
// aggregates over patches with a transformer + max-pool, an RNN, or an
// affine map over the padded patch axis. The constant variant ignores its
// input and returns a trainable table. One instance serves every backbone
// layer. No positional encoding is used anywhere in the module.
template <typename S>
class PromptModule {
 public:
  PromptModule() = default;
  PromptModule(Aggregator kind, int k, int channels, const BackboneConfig& cfg)
      : kind_(kind), k_(k), channels_(channels), width_(cfg.d_model), max_patches_(cfg.max_patches()) {
    if (k < 1) throw std::invalid_argument("prompt module: K must be >= 1");
    const Index D = cfg.d_model, KD = static_cast<Index>(k) * D;
    if (kind != Aggregator::kConstant)
      channel_mixer_ = TransformerBlock<S>("prompt.channel_mixer", D, cfg.d_ff, cfg.n_heads);
    switch (kind) {
      case Aggregator::kTransformer:
        patch_mixer_ = TransformerBlock<S>("prompt.patch_mixer", D, cfg.d_ff, cfg.n_heads);
        expand_ = Linear<S>("prompt.expand", D, KD);
        break;
      case Aggregator::kRnn:
        rnn_wx_ = Parameter<S>("prompt.rnn.wx", Mat<S>::Zero(D, KD));
        rnn_wh_ = Parameter<S>("prompt.rnn.wh", Mat<S>::Zero(KD, KD));
        rnn_b_ = Parameter<S>("prompt.rnn.bias", Mat<S>::Zero(1, KD), true);
        break;
      case Aggregator::kMlp:
        mlp_w_ = Parameter<S>("prompt.mlp.weight", Mat<S>::Zero(k, max_patches_));
        mlp_b_ = Parameter<S>("prompt.mlp.bias", Mat<S>::Zero(k, 1), true);
        break;
      case Aggregator::kConstant:
        table_ = Parameter<S>("prompt.table", Mat<S>::Zero(static_cast<Index>(channels) * k, D));
        break;
    }
  }

  void init(std::mt19937_64& rng) {
    if (kind_ != Aggregator::kConstant) channel_mixer_.init(rng);
    switch (kind_) {
      case Aggregator::kTransformer:
        patch_mixer_.init(rng);
        expand_.init(rng);
        break;
      case Aggregator::kRnn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(rnn_wh_.value.rows()));
        init_uniform(rnn_wx_.value, bound, rng);
        init_uniform(rnn_wh_.value, bound, rng);
        init_uniform(rnn_b_.value, bound, rng);
        break;
      }
      case Aggregator::kMlp: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(max_patches_));
        init_uniform(mlp_w_.value, bound, rng);
        init_uniform(mlp_b_.value, bound, rng);
        break;
      }
      case Aggregator::kConstant:
        init_normal(table_.value, 1.0, rng);
        break;
    }
  }

  Aggregator kind() const { return kind_; }
  int prompt_size() const { return k_; }

  // Step 1 only: a transformer over the channel axis, applied to every patch
  // independently. Output keeps the stack layout.
  ChannelStack<S> mix_channels(ForwardContext<S>& ctx, const ChannelStack<S>& e) {
    ChannelStack<S> out = e;
    out.data = channel_mixer_.forward(ctx, e.data, {}, std::vector<Index>(e.patches, e.channels));
    return out;
  }

  Var<S> forward(ForwardContext<S>& ctx, const ChannelStack<S>& e) {
    if (kind_ == Aggregator::kConstant) return ctx.tape.param(table_);
    if (e.width() != width_) throw ShapeError("prompt module: stack width differs from model width");
    const Index C = e.channels, P = e.patches, D = width_;
    if (kind_ == Aggregator::kMlp && P > max_patches_)
      throw std::invalid_argument("prompt module: patch count exceeds the MLP aggregator's P_max");

    const ChannelStack<S> mixed = mix_channels(ctx, e);
    switch (kind_) {
      case Aggregator::kTransformer: {
        // One sequence of P patches per channel; expand to K*D, max-pool over
        // real patches, and read the C x K*D result as (C*K) x D.
        const std::vector<Index> segments(C, P);
        Mask mask;
        for (Index c = 0; c < C; ++c) mask.insert(mask.end(), e.mask.begin(), e.mask.end());
        Var<S> h = patch_mixer_.forward(ctx, channel_major(mixed), mask, segments);
        Var<S> pooled = segment_max_rows(expand_.forward(ctx, h), segments, mask);
        return reshape(pooled, C * k_, D);
      }
      case Aggregator::kRnn: {
        // Elman recurrence over patches, all channels advanced together; the
        // state after the last real patch is the summary.
        Var<S> xs = affine(mixed.data, ctx.tape.param(rnn_wx_), ctx.tape.param(rnn_b_));
        Var<S> wh = ctx.tape.param(rnn_wh_);
        std::optional<Var<S>> h;
        for (Index p = 0; p < P && e.mask[p]; ++p) {
          Var<S> pre = slice_rows(xs, p * C, C);
          if (h) pre = add(pre, matmul(*h, wh));
          h = tanh(pre);
        }
        if (!h) throw ShapeError("prompt module: sequence has no real patches");
        return reshape(*h, C * k_, D);
      }
      case Aggregator::kMlp: {
        // Affine map over the patch axis (padded patches contribute zero).
        Var<S> flat = reshape(mask_rows(mixed.data, mixed.row_mask()), P, C * D);
        Var<S> w = slice_cols(ctx.tape.param(mlp_w_), 0, P);
        Var<S> out = reshape(add_col(matmul(w, flat), ctx.tape.param(mlp_b_)), k_ * C, D);  // row k*C + c
        std::vector<std::pair<Var<S>, Index>> rows;
        for (Index c = 0; c < C; ++c)
          for (Index k = 0; k < k_; ++k) rows.emplace_back(out, k * C + c);
        return gather_rows(rows);
      }
      case Aggregator::kConstant:
        break;
    }
    throw std::logic_error("prompt module: unreachable");
  }

  void collect(ParamRefs<S>& out) {
    if (kind_ != Aggregator::kConstant) channel_mixer_.collect(out);
    switch (kind_) {
      case Aggregator::kTransformer:
        patch_mixer_.collect(out);
        expand_.collect(out);
        break;
      case Aggregator::kRnn:
        out.push_back(&rnn_wx_);
        out.push_back(&rnn_wh_);
        out.push_back(&rnn_b_);
        break;
      case Aggregator::kMlp:
        out.push_back(&mlp_w_);
        out.push_back(&mlp_b_);
        break;
      case Aggregator::kConstant:
        out.push_back(&table_);
        break;
    }
  }

 private:
  Aggregator kind_ = Aggregator::kTransformer;
  int k_ = 1;
  int channels_ = 1;
  Index width_ = 0;
  Index max_patches_ = 0;
  TransformerBlock<S> channel_mixer_;
  TransformerBlock<S> patch_mixer_;
  Linear<S> expand_;
  Parameter<S> rnn_wx_, rnn_wh_, rnn_b_;
  Parameter<S> mlp_w_, mlp_b_;
  Parameter<S> table_;
};

// ---------------------------------------------------------------------------
// Forward paths. Each returns the final per-channel grids U_L^(c) and the
// per-channel normalisation statistics for the forecast head.

template <typename S>
struct Features {
  std::vector<PatchGrid<S>> grids;
  std::vector<NormState> norms;
};

template <typename S>
Features<S> embed_channels(ForwardContext<S>& ctx, Backbone<S>& backbone, const MultiSeries& x) {
  Features<S> f;
  for (const UniSeries& s : channel_split(x)) {
    Embedded<S> e = backbone.embed_series(ctx, s);
    f.grids.push_back(std::move(e.grid));
    f.norms.push_back(e.norm);
  }
  return f;
}

// Each channel runs through the backbone on its own (channels share a batched
// pass, but attention never crosses channel boundaries).
template <typename S>
Features<S> channel_independent_forward(ForwardContext<S>& ctx, Backbone<S>& backbone, const MultiSeries& x) {
  Features<S> f = embed_channels(ctx, backbone, x);
  for (int l = 0; l < backbone.num_layers(); ++l) f.grids = backbone.apply_layer(ctx, f.grids, l);
  return f;
}

// At every layer: restack the current channel grids, compute the prompt with
// the shared module, prepend it to each channel, apply the layer, drop the
// prompt rows. K = 0 skips the module entirely.
template <typename S>
Features<S> gen_p_forward(ForwardContext<S>& ctx, Backbone<S>& backbone, PromptModule<S>* module, int k,
                          const MultiSeries& x) {
  if (k > 0 && !module) throw std::invalid_argument("gen_p_forward: K > 0 requires a prompt module");
  Features<S> f = embed_channels(ctx, backbone, x);
  const Index C = static_cast<Index>(f.grids.size());
  for (int l = 0; l < backbone.num_layers(); ++l) {
    std::optional<Var<S>> prompt;
    if (k > 0) prompt = module->forward(ctx, stack_channels(f.grids));
    std::vector<PatchGrid<S>> in;
    for (const auto& g : f.grids) in.push_back(attach_prompt(prompt, g));
    std::vector<PatchGrid<S>> out = backbone.apply_layer(ctx, in, l);
    for (Index c = 0; c < C; ++c) f.grids[c] = strip_prompt(out[c], C, k);
  }
  return f;
}

// P-tuning v2: a single trainable (C*K) x D table prepended at every layer.
template <typename S>
Features<S> ptuning_v2_forward(ForwardContext<S>& ctx, Backbone<S>& backbone, Parameter<S>* table, int k,
                               const MultiSeries& x) {
  Features<S> f = embed_channels(ctx, backbone, x);
  const Index C = static_cast<Index>(f.grids.size());
  std::optional<Var<S>> prompt;
  if (k > 0) {
    if (!table) throw std::invalid_argument("ptuning_v2_forward: K > 0 requires a prompt table");
    if (table->value.rows() != C * k) throw ShapeError("ptuning_v2_forward: table rows must equal C*K");
    prompt = ctx.tape.param(*table);
  }
  for (int l = 0; l < backbone.num_layers(); ++l) {
    std::vector<PatchGrid<S>> in;
    for (const auto& g : f.grids) in.push_back(attach_prompt(prompt, g));
    std::vector<PatchGrid<S>> out = backbone.apply_layer(ctx, in, l);
    for (Index c = 0; c < C; ++c) f.grids[c] = strip_prompt(out[c], C, k);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Strategy-instantiated model

struct ParamReport {
  Index trainable = 0;
  Index total = 0;
  double fraction = 0.0;
  std::vector<std::pair<std::string, Index>> trainable_named;
};

template <typename S>
class AdaptedModel {
 public:
  // Takes ownership of the backbone, applies the strategy's trainability and
  // initialises new parameters from rng in a fixed order: LoRA adapters, prompt
  // parameters, head.
  AdaptedModel(Backbone<S> backbone, const StrategyConfig& strategy, const TaskSpec& task, std::mt19937_64& rng)
      : backbone_(std::move(backbone)), strategy_(strategy), task_(task) {
    strategy_.validate();
    task_.validate();
    const auto& cfg = backbone_.config();
    for (auto* p : backbone_.parameters()) p->trainable = strategy.kind == StrategyKind::kFull;
    const int k = strategy_.effective_k();
    if (strategy.kind == StrategyKind::kLora)
      backbone_.wrap_lora(strategy.lora_rank, strategy.lora_alpha, strategy.lora_dropout, rng);
    if (strategy.kind == StrategyKind::kGenP && k > 0) {
      module_.emplace(strategy.aggregator, k, task.channels, cfg);
      module_->init(rng);
    }
    if (strategy.kind == StrategyKind::kPTuning && k > 0) {
      table_.emplace("prompt.table", Mat<S>::Zero(static_cast<Index>(task.channels) * k, cfg.d_model));
      init_normal(table_->value, 1.0, rng);
    }
    if (task.kind == TaskKind::kClassify) {
      classify_.emplace(cfg.d_model, task.labels);
      classify_->proj.init(rng);
    } else {
      forecast_.emplace(task.patches, cfg.d_model, task.channels, task.horizon);
      forecast_->proj.init(rng);
    }
  }

  const StrategyConfig& strategy() const { return strategy_; }
  const TaskSpec& task() const { return task_; }
  Backbone<S>& backbone() { return backbone_; }
  PromptModule<S>* prompt_module() { return module_ ? &*module_ : nullptr; }
  Parameter<S>* prompt_table() { return table_ ? &*table_ : nullptr; }

  Features<S> features(ForwardContext<S>& ctx, const MultiSeries& x) {
    if (x.channels() != task_.channels) throw ShapeError("model: sample channel count differs from task");
    switch (strategy_.kind) {
      case StrategyKind::kGenP:
        return gen_p_forward(ctx, backbone_, prompt_module(), strategy_.effective_k(), x);
      case StrategyKind::kPTuning:
        return ptuning_v2_forward(ctx, backbone_, prompt_table(), strategy_.effective_k(), x);
      default:
        return channel_independent_forward(ctx, backbone_, x);
    }
  }

  // Logits (1 x M) or denormalised forecast (C x H).
  Var<S> forward(ForwardContext<S>& ctx, const MultiSeries& x) {
    Features<S> f = features(ctx, x);
    if (classify_) return classify_->forward(ctx, f.grids);
    return forecast_->forward(ctx, f.grids, f.norms);
  }

  ParamRefs<S> parameters() {
    ParamRefs<S> out = backbone_.parameters();
    if (module_) module_->collect(out);
    if (table_) out.push_back(&*table_);
    if (classify_) classify_->collect(out);
    if (forecast_) forecast_->collect(out);
    return out;
  }

  ParamRefs<S> trainable_parameters() {
    ParamRefs<S> out;
    for (auto* p : parameters())
      if (p->trainable) out.push_back(p);
    return out;
  }

  ParamRefs<S> head_parameters() {
    ParamRefs<S> out;
    if (classify_) classify_->collect(out);
    if (forecast_) forecast_->collect(out);
    return out;
  }

  ParamReport report() {
    ParamReport r;
    for (auto* p : parameters()) {
      r.total += p->numel();
      if (p->trainable) {
        r.trainable += p->numel();
        r.trainable_named.emplace_back(p->name, p->numel());
      }
    }
    r.fraction = r.total ? static_cast<double>(r.trainable) / static_cast<double>(r.total) : 0.0;
    return r;
  }

 private:
  Backbone<S> backbone_;
  StrategyConfig strategy_;
  TaskSpec task_;
  std::optional<PromptModule<S>> module_;
  std::optional<Parameter<S>> table_;
  std::optional<ClassifyHead<S>> classify_;
  std::optional<ForecastHead<S>> forecast_;
};

}  // namespace tsft
