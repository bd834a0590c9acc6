#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsft/autodiff.hpp"
#include "tsft/series.hpp"

namespace tsft {

struct BackboneConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 128;
  int patch_len = 8;
  int stride = 8;
  int max_T = 512;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
      throw std::invalid_argument("backbone config: d_model must be a positive multiple of n_heads");
    if (n_layers < 1) throw std::invalid_argument("backbone config: n_layers must be >= 1");
    if (d_ff < 1) throw std::invalid_argument("backbone config: d_ff must be >= 1");
    if (patch_len < 1) throw std::invalid_argument("backbone config: patch_len must be >= 1");
    if (stride < 1) throw std::invalid_argument("backbone config: stride must be >= 1");
    if (max_T < 1) throw std::invalid_argument("backbone config: max_T must be >= 1");
  }

  Index num_patches(Index T) const { return (T + stride - 1) / stride; }
  Index max_patches() const { return num_patches(max_T); }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

enum class TaskKind { kClassify, kForecast };

struct TaskSpec {
  TaskKind kind = TaskKind::kClassify;
  int labels = 1;    // M
  int horizon = 0;   // H
  int channels = 1;  // C
  int patches = 0;   // P seen by the forecast head (fixed lookback)

  void validate() const {
    if (channels < 1) throw std::invalid_argument("task: channels must be >= 1");
    if (kind == TaskKind::kClassify && labels < 1) throw std::invalid_argument("task: classify needs labels >= 1");
    if (kind == TaskKind::kForecast && horizon < 1) throw std::invalid_argument("task: forecast needs horizon >= 1");
    if (kind == TaskKind::kForecast && patches < 1) throw std::invalid_argument("task: forecast needs patches >= 1");
  }
};

// ---------------------------------------------------------------------------
// Reversible instance normalisation

struct NormState {
  double mean = 0.0;
  double std = 0.0;
  double eps = 1e-5;

  // Divisor used by normalize/denormalize; constant series fall back to eps.
  double scale() const { return std::max(std, eps); }
  double denormalize(double v) const { return v * scale() + mean; }
};

// Standardises by the mean and population standard deviation of the real
// (unpadded) values.
inline std::pair<UniSeries, NormState> instance_norm(const UniSeries& x, double eps = 1e-5) {
  if (x.length() < 1) throw std::invalid_argument("instance_norm: empty series");
  NormState st;
  st.eps = eps;
  const double n = static_cast<double>(x.length());
  double s = 0;
  for (Index i = 0; i < x.length(); ++i) s += x.values[i];
  st.mean = s / n;
  double v = 0;
  for (Index i = 0; i < x.length(); ++i) v += (x.values[i] - st.mean) * (x.values[i] - st.mean);
  st.std = std::sqrt(v / n);
  UniSeries out = x;
  for (Index i = 0; i < x.length(); ++i) out.values[i] = (x.values[i] - st.mean) / st.scale();
  return {std::move(out), st};
}

inline UniSeries instance_denorm(const UniSeries& x, const NormState& st) {
  UniSeries out = x;
  for (Index i = 0; i < x.length(); ++i) out.values[i] = st.denormalize(x.values[i]);
  return out;
}

struct Patches {
  Mat<double> data;  // P x patch_len
  Mask mask;         // true = holds at least one real value
};

// Splits into P = ceil(T' / stride) windows of patch_len values, where T' is
// the padded length; values past the real length read as zero.
inline Patches patchify(const UniSeries& x, int patch_len, int stride) {
  if (patch_len < 1) throw std::invalid_argument("patchify: patch_len must be >= 1");
  if (stride < 1) throw std::invalid_argument("patchify: stride must be >= 1");
  const Index T = x.length();
  if (T < 1) throw std::invalid_argument("patchify: empty series");
  const Index total = std::max(T, x.padded_length);
  const Index P = (total + stride - 1) / stride;
  Patches out{Mat<double>::Zero(P, patch_len), Mask(P)};
  for (Index p = 0; p < P; ++p) {
    for (Index j = 0; j < patch_len; ++j) {
      const Index t = p * stride + j;
      if (t < T) out.data(p, j) = x.values[t];
    }
    out.mask[p] = p * stride < T;
  }
  return out;
}

inline Patches patchify(const UniSeries& x, const BackboneConfig& cfg) {
  return patchify(x, cfg.patch_len, cfg.stride);
}

// ---------------------------------------------------------------------------
// Layers

template <typename S>
struct ForwardContext {
  Tape<S>& tape;
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

template <typename S>
void init_uniform(Mat<S>& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = S(u(rng));
}

template <typename S>
void init_normal(Mat<S>& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = S(n(rng));
}

// Low-rank update for a frozen m x n weight: W + (alpha / r) A B.
template <typename S>
struct LoraAdapter {
  Parameter<S> a;  // m x r
  Parameter<S> b;  // r x n
  double alpha = 16.0;
  double dropout = 0.0;

  int rank() const { return static_cast<int>(a.value.cols()); }
  S scaling() const { return S(alpha / rank()); }
};

template <typename S>
struct Linear {
  Parameter<S> weight;  // in x out
  Parameter<S> bias;    // 1 x out
  std::optional<LoraAdapter<S>> lora;

  Linear() = default;
  Linear(const std::string& name, Index in, Index out)
      : weight(name + ".weight", Mat<S>::Zero(in, out)), bias(name + ".bias", Mat<S>::Zero(1, out), true) {}

  Index in_features() const { return weight.value.rows(); }
  Index out_features() const { return weight.value.cols(); }

  void init(std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
    init_uniform(weight.value, bound, rng);
    init_uniform(bias.value, bound, rng);
  }

  // Effective weight with any LoRA update folded in.
  Mat<S> merged_weight() const {
    if (!lora) return weight.value;
    return weight.value + lora->scaling() * (lora->a.value * lora->b.value);
  }

  Var<S> forward(ForwardContext<S>& ctx, const Var<S>& x) {
    Var<S> y = affine(x, ctx.tape.param(weight), ctx.tape.param(bias));
    if (!lora) return y;
    Var<S> h = x;
    if (ctx.training && lora->dropout > 0) {
      if (!ctx.rng) throw std::logic_error("linear: dropout requires an rng");
      h = dropout(h, lora->dropout, *ctx.rng);
    }
    Var<S> low = matmul(matmul(h, ctx.tape.param(lora->a)), ctx.tape.param(lora->b));
    return add(y, scale(low, lora->scaling()));
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
    if (lora) {
      out.push_back(&lora->a);
      out.push_back(&lora->b);
    }
  }
};

template <typename S>
struct LayerNorm {
  Parameter<S> gamma;
  Parameter<S> beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Index width)
      : gamma(name + ".gamma", Mat<S>::Ones(1, width), true), beta(name + ".beta", Mat<S>::Zero(1, width), true) {}

  Var<S> forward(ForwardContext<S>& ctx, const Var<S>& x) {
    return layer_norm(x, ctx.tape.param(gamma), ctx.tape.param(beta));
  }
  void collect(ParamRefs<S>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// Pre-norm encoder block: x + MHA(LN(x)), then + FFN(LN(.)).
template <typename S>
struct TransformerBlock {
  int n_heads = 1;
  LayerNorm<S> ln1, ln2;
  Linear<S> wq, wk, wv, wo;
  Linear<S> ff1, ff2;

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, Index width, Index d_ff, int heads)
      : n_heads(heads),
        ln1(name + ".ln1", width),
        ln2(name + ".ln2", width),
        wq(name + ".attn.wq", width, width),
        wk(name + ".attn.wk", width, width),
        wv(name + ".attn.wv", width, width),
        wo(name + ".attn.wo", width, width),
        ff1(name + ".ff1", width, d_ff),
        ff2(name + ".ff2", d_ff, width) {}

  void init(std::mt19937_64& rng) {
    for (Linear<S>* l : {&wq, &wk, &wv, &wo, &ff1, &ff2}) l->init(rng);
  }

  // Self-attention sublayer without the residual; exposed for tests.
  Var<S> attend(ForwardContext<S>& ctx, const Var<S>& x, const Mask& mask, const std::vector<Index>& segments = {}) {
    Var<S> h = ln1.forward(ctx, x);
    Var<S> a = attention(wq.forward(ctx, h), wk.forward(ctx, h), wv.forward(ctx, h), mask, n_heads, segments);
    return wo.forward(ctx, a);
  }

  // `segments` splits the rows into independent sequences (see attention()).
  Var<S> forward(ForwardContext<S>& ctx, const Var<S>& x, const Mask& mask, const std::vector<Index>& segments = {}) {
    if (x.cols() != wq.in_features())
      throw ShapeError("transformer block: input width " + std::to_string(x.cols()) + " != " +
                       std::to_string(wq.in_features()));
    Var<S> x1 = add(x, attend(ctx, x, mask, segments));
    Var<S> h = ln2.forward(ctx, x1);
    return add(x1, ff2.forward(ctx, gelu(ff1.forward(ctx, h))));
  }

  void collect(ParamRefs<S>& out) {
    ln1.collect(out);
    for (Linear<S>* l : {&wq, &wk, &wv, &wo}) l->collect(out);
    ln2.collect(out);
    ff1.collect(out);
    ff2.collect(out);
  }
};

// ---------------------------------------------------------------------------
// Backbone

template <typename S>
struct PatchGrid {
  Var<S> data;  // P x D
  Mask mask;

  Index patches() const { return data.rows(); }
};

template <typename S>
struct Embedded {
  PatchGrid<S> grid;
  NormState norm;
};

// Univariate foundation model: instance norm, patching, linear patch embedding
// plus learned positional encoding, then a stack of transformer blocks.
template <typename S>
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    embed_ = Linear<S>("backbone.embed", cfg.patch_len, cfg.d_model);
    pos_ = Parameter<S>("backbone.pos", Mat<S>::Zero(cfg.max_patches(), cfg.d_model));
    for (int l = 0; l < cfg.n_layers; ++l)
      layers_.emplace_back("backbone.layer" + std::to_string(l), cfg.d_model, cfg.d_ff, cfg.n_heads);
  }

  static Backbone random(const BackboneConfig& cfg, std::mt19937_64& rng) {
    Backbone b(cfg);
    b.embed_.init(rng);
    init_normal(b.pos_.value, 0.02, rng);
    for (auto& l : b.layers_) l.init(rng);
    return b;
  }

  const BackboneConfig& config() const { return cfg_; }
  int num_layers() const { return static_cast<int>(layers_.size()); }
  TransformerBlock<S>& layer(int i) { return layers_.at(i); }
  Linear<S>& embed() { return embed_; }
  Parameter<S>& positional() { return pos_; }

  Embedded<S> embed_series(ForwardContext<S>& ctx, const UniSeries& x) {
    if (std::max(x.length(), x.padded_length) > cfg_.max_T)
      throw std::invalid_argument("backbone: series length exceeds max_T");
    auto [normed, st] = instance_norm(x);
    Patches p = patchify(normed, cfg_);
    return embed_patches(ctx, p.data.template cast<S>(), std::move(p.mask), st);
  }

  // Embedding of already normalised patch values (P x patch_len).
  Embedded<S> embed_patches(ForwardContext<S>& ctx, Mat<S> patches, Mask mask, NormState st = {}) {
    const Index P = patches.rows();
    Var<S> e = embed_.forward(ctx, ctx.tape.constant(std::move(patches)));
    Var<S> pos = slice_rows(ctx.tape.param(pos_), 0, P);
    return {PatchGrid<S>{add(e, pos), std::move(mask)}, st};
  }

  PatchGrid<S> apply_layer(ForwardContext<S>& ctx, const PatchGrid<S>& u, int index) {
    return {layers_.at(index).forward(ctx, u.data, u.mask), u.mask};
  }

  // Applies layer `index` to several independent grids in one pass: rows are
  // stacked and attention is confined to each grid's own rows.
  std::vector<PatchGrid<S>> apply_layer(ForwardContext<S>& ctx, const std::vector<PatchGrid<S>>& grids, int index) {
    if (grids.size() == 1) return {apply_layer(ctx, grids.front(), index)};
    std::vector<Var<S>> parts;
    std::vector<Index> segments;
    Mask mask;
    for (const auto& g : grids) {
      parts.push_back(g.data);
      segments.push_back(g.patches());
      mask.insert(mask.end(), g.mask.begin(), g.mask.end());
    }
    Var<S> out = layers_.at(index).forward(ctx, vstack(parts), mask, segments);
    std::vector<PatchGrid<S>> result;
    Index r0 = 0;
    for (const auto& g : grids) {
      result.push_back({slice_rows(out, r0, g.patches()), g.mask});
      r0 += g.patches();
    }
    return result;
  }

  // f_L o ... o f_1 o f_emb.
  Embedded<S> forward(ForwardContext<S>& ctx, const UniSeries& x) {
    Embedded<S> e = embed_series(ctx, x);
    for (int l = 0; l < num_layers(); ++l) e.grid = apply_layer(ctx, e.grid, l);
    return e;
  }

  ParamRefs<S> parameters() {
    ParamRefs<S> out;
    embed_.collect(out);
    out.push_back(&pos_);
    for (auto& l : layers_) l.collect(out);
    return out;
  }

  void freeze() {
    for (auto* p : parameters()) p->trainable = false;
  }

  // Wraps q, k, v and output projections of every layer with a LoRA adapter;
  // A ~ U(-1/sqrt(m), 1/sqrt(m)), B = 0.
  void wrap_lora(int rank, double alpha, double dropout, std::mt19937_64& rng) {
    for (auto& layer : layers_) {
      for (Linear<S>* lin : {&layer.wq, &layer.wk, &layer.wv, &layer.wo}) {
        const Index m = lin->in_features(), n = lin->out_features();
        if (rank < 1 || rank > std::min(m, n)) throw std::invalid_argument("lora: rank must lie in [1, min(m, n)]");
        const std::string base = lin->weight.name.substr(0, lin->weight.name.size() - std::string(".weight").size());
        LoraAdapter<S> ad{Parameter<S>(base + ".lora_a", Mat<S>::Zero(m, rank)),
                          Parameter<S>(base + ".lora_b", Mat<S>::Zero(rank, n)), alpha, dropout};
        init_uniform(ad.a.value, 1.0 / std::sqrt(static_cast<double>(m)), rng);
        lin->lora = std::move(ad);
      }
    }
  }

  // Copy with every parameter converted to another scalar type.
  template <typename T>
  Backbone<T> cast() const {
    Backbone<T> out(cfg_);
    auto& self = const_cast<Backbone&>(*this);
    if (self.layers_.front().wq.lora) {
      std::mt19937_64 dummy(0);
      const auto& ad = *self.layers_.front().wq.lora;
      out.wrap_lora(ad.rank(), ad.alpha, ad.dropout, dummy);
    }
    auto src = self.parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = cast_parameter<T>(*src[i]);
    return out;
  }

 private:
  BackboneConfig cfg_;
  Linear<S> embed_;
  Parameter<S> pos_;
  std::vector<TransformerBlock<S>> layers_;
};

// ---------------------------------------------------------------------------
// Prediction heads

// Mean over channels, masked mean over patches, then an affine map to M logits.
template <typename S>
struct ClassifyHead {
  Linear<S> proj;

  ClassifyHead() = default;
  ClassifyHead(Index d_model, int labels) : proj("head.classify", d_model, labels) {}

  Var<S> forward(ForwardContext<S>& ctx, const std::vector<PatchGrid<S>>& per_channel) {
    if (per_channel.empty()) throw ShapeError("classify head: no channels");
    std::vector<Var<S>> grids;
    for (const auto& g : per_channel) {
      if (g.patches() != per_channel.front().patches()) throw ShapeError("classify head: patch count differs across channels");
      grids.push_back(g.data);
    }
    Var<S> pooled = mean_rows(mean_of(grids), per_channel.front().mask);
    return proj.forward(ctx, pooled);
  }
  void collect(ParamRefs<S>& out) { proj.collect(out); }
};

// Mean over channels, flatten to 1 x (P*D), affine to C*H values, reshape to
// C x H and undo each channel's instance normalisation.
template <typename S>
struct ForecastHead {
  Linear<S> proj;
  int channels = 1;
  int horizon = 1;

  ForecastHead() = default;
  ForecastHead(Index patches, Index d_model, int c, int h)
      : proj("head.forecast", patches * d_model, static_cast<Index>(c) * h), channels(c), horizon(h) {}

  Var<S> forward(ForwardContext<S>& ctx, const std::vector<PatchGrid<S>>& per_channel,
                 const std::vector<NormState>& norms) {
    if (static_cast<int>(per_channel.size()) != channels || norms.size() != per_channel.size())
      throw ShapeError("forecast head: channel count mismatch");
    std::vector<Var<S>> grids;
    for (const auto& g : per_channel) {
      if (g.patches() != per_channel.front().patches()) throw ShapeError("forecast head: patch count differs across channels");
      grids.push_back(g.data);
    }
    Var<S> m = mean_of(grids);
    if (m.rows() * m.cols() != proj.in_features())
      throw ShapeError("forecast head: expected " + std::to_string(proj.in_features()) + " inputs, got " +
                       std::to_string(m.rows() * m.cols()));
    Var<S> out = reshape(proj.forward(ctx, reshape(m, 1, m.rows() * m.cols())), channels, horizon);
    std::vector<S> scales, shifts;
    for (const auto& st : norms) {
      scales.push_back(S(st.scale()));
      shifts.push_back(S(st.mean));
    }
    return row_affine(out, scales, shifts);
  }
  void collect(ParamRefs<S>& out) { proj.collect(out); }
};

}  // namespace tsft
