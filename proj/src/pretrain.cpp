#include "tsft/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tsft/optim.hpp"

namespace tsft {
namespace {

struct MaskedExample {
  Mat<float> input;   // P x patch_len, masked patches zeroed
  Mat<float> target;  // masked patches' original values
  std::vector<Index> masked;
  Mask pad_mask;
};

MaskedExample make_example(const UniSeries& s, const BackboneConfig& cfg, double ratio, std::mt19937_64& rng) {
  auto [normed, st] = instance_norm(s);
  Patches p = patchify(normed, cfg);
  std::vector<Index> real;
  for (Index i = 0; i < static_cast<Index>(p.mask.size()); ++i)
    if (p.mask[i]) real.push_back(i);
  const auto n_mask = std::max<Index>(1, static_cast<Index>(std::llround(ratio * static_cast<double>(real.size()))));
  std::shuffle(real.begin(), real.end(), rng);
  real.resize(std::min<Index>(n_mask, static_cast<Index>(real.size())));
  std::sort(real.begin(), real.end());

  MaskedExample ex;
  ex.input = p.data.cast<float>();
  ex.target.resize(static_cast<Index>(real.size()), cfg.patch_len);
  for (std::size_t i = 0; i < real.size(); ++i) {
    ex.target.row(static_cast<Index>(i)) = ex.input.row(real[i]);
    ex.input.row(real[i]).setZero();
  }
  ex.masked = std::move(real);
  ex.pad_mask = std::move(p.mask);
  return ex;
}

Var<float> reconstruction_loss(ForwardContext<float>& ctx, Backbone<float>& bb, Linear<float>& decoder,
                               const MaskedExample& ex) {
  Embedded<float> e = bb.embed_patches(ctx, ex.input, ex.pad_mask);
  PatchGrid<float> g = e.grid;
  for (int l = 0; l < bb.num_layers(); ++l) g = bb.apply_layer(ctx, g, l);
  std::vector<std::pair<Var<float>, Index>> rows;
  for (Index i : ex.masked) rows.emplace_back(g.data, i);
  return mse_loss(decoder.forward(ctx, gather_rows(rows)), ex.target);
}

}  // namespace

PretrainResult pretrain(const std::vector<UniSeries>& corpus, const BackboneConfig& cfg, const PretrainConfig& pcfg) {
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
  if (pcfg.mask_ratio <= 0 || pcfg.mask_ratio >= 1) throw std::invalid_argument("pretrain: mask ratio must lie in (0, 1)");
  cfg.validate();
  std::mt19937_64 rng(pcfg.seed);
  PretrainResult out{Backbone<float>::random(cfg, rng), {}};
  Backbone<float>& bb = out.backbone;
  Linear<float> decoder("pretrain.decoder", cfg.d_model, cfg.patch_len);
  decoder.init(rng);

  ParamRefs<float> params = bb.parameters();
  decoder.collect(params);
  AdamW<float> opt(params, AdamWConfig{.weight_decay = pcfg.weight_decay});

  // Fixed masks for the reported loss curve.
  std::mt19937_64 eval_rng(pcfg.seed ^ 0x9e3779b97f4a7c15ull);
  const std::size_t n_eval = std::min<std::size_t>(corpus.size(), 256);
  std::vector<MaskedExample> eval_set;
  for (std::size_t i = 0; i < n_eval; ++i) eval_set.push_back(make_example(corpus[i], cfg, pcfg.mask_ratio, eval_rng));
  auto eval_loss = [&]() {
    double s = 0;
    for (const auto& ex : eval_set) {
      Tape<float> tape;
      ForwardContext<float> ctx{tape};
      s += reconstruction_loss(ctx, bb, decoder, ex).value()(0, 0);
    }
    return s / static_cast<double>(eval_set.size());
  };

  out.losses.push_back(eval_loss());
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = pcfg.batch_size > 0 ? static_cast<std::size_t>(pcfg.batch_size) : corpus.size();
  for (int epoch = 0; epoch < pcfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      opt.zero_grad();
      Tape<float> tape;
      ForwardContext<float> ctx{tape, true, &rng};
      std::vector<Var<float>> losses;
      for (std::size_t i = start; i < end; ++i)
        losses.push_back(reconstruction_loss(ctx, bb, decoder, make_example(corpus[order[i]], cfg, pcfg.mask_ratio, rng)));
      Var<float> total = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
      tape.backward(scale(total, 1.0f / static_cast<float>(losses.size())));
      opt.step(pcfg.lr);
    }
    out.losses.push_back(eval_loss());
  }
  bb.freeze();
  return out;
}

}  // namespace tsft
