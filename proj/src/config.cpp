#include "tsft/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "tsft/checkpoint.hpp"

namespace tsft {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw std::invalid_argument("config: unknown key " + (where.empty() ? k : where + "." + k));
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string task_kind_str(TaskKind k) { return k == TaskKind::kClassify ? "classify" : "forecast"; }

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  reject_unknown(j, "", {"backbone", "data", "task", "strategy", "train", "pretrain"});

  if (j.contains("backbone")) cfg.backbone = backbone_config_from_json(j["backbone"]);

  if (j.contains("data")) {
    const json& d = j["data"];
    reject_unknown(d, "data", {"source", "path", "n_samples", "channels", "length", "noise", "schema", "defaults", "split", "seed"});
    auto& dc = cfg.data;
    get_if(d, "source", dc.source);
    if (dc.source != "channel-mix" && dc.source != "forecast" && dc.source != "csv")
      throw std::invalid_argument("config: data.source must be channel-mix, forecast or csv");
    get_if(d, "path", dc.path);
    get_if(d, "n_samples", dc.n_samples);
    get_if(d, "channels", dc.channels);
    get_if(d, "length", dc.length);
    get_if(d, "noise", dc.noise);
    get_if(d, "seed", dc.seed);
    get_if(d, "defaults", dc.defaults);
    if (d.contains("schema")) {
      const json& s = d["schema"];
      reject_unknown(s, "data.schema", {"channels", "labels", "category_orders", "hours_channel"});
      get_if(s, "channels", dc.schema.channels);
      get_if(s, "labels", dc.schema.labels);
      get_if(s, "category_orders", dc.schema.category_orders);
      get_if(s, "hours_channel", dc.schema.hours_channel);
    }
    if (d.contains("split")) {
      const auto r = d["split"].get<std::vector<double>>();
      if (r.size() != 3) throw std::invalid_argument("config: data.split must have three ratios");
      dc.split = {r[0], r[1], r[2]};
    }
  }

  if (j.contains("task")) {
    const json& t = j["task"];
    reject_unknown(t, "task", {"kind", "labels", "horizon", "lookback", "window_stride"});
    if (t.contains("kind")) {
      const auto k = t["kind"].get<std::string>();
      if (k == "classify") cfg.task.kind = TaskKind::kClassify;
      else if (k == "forecast") cfg.task.kind = TaskKind::kForecast;
      else throw std::invalid_argument("config: task.kind must be classify or forecast");
    }
    get_if(t, "labels", cfg.task.labels);
    get_if(t, "horizon", cfg.task.horizon);
    get_if(t, "lookback", cfg.task.lookback);
    get_if(t, "window_stride", cfg.task.window_stride);
  }
  if (cfg.task.kind == TaskKind::kForecast) {
    if (cfg.task.lookback < 1) throw std::invalid_argument("config: task.lookback is required for forecasting");
    if (cfg.task.horizon < 1) throw std::invalid_argument("config: task.horizon is required for forecasting");
  }

  // Prompt size default depends on the task (16 forecasting, 4 classification).
  cfg.strategy.prompt_size = cfg.task.kind == TaskKind::kForecast ? 16 : 4;
  if (j.contains("strategy")) {
    const json& s = j["strategy"];
    reject_unknown(s, "strategy", {"kind", "K", "aggregator", "lora_rank", "lora_alpha", "lora_dropout"});
    if (s.contains("kind")) cfg.strategy.kind = parse_strategy(s["kind"].get<std::string>());
    get_if(s, "K", cfg.strategy.prompt_size);
    if (s.contains("aggregator")) cfg.strategy.aggregator = parse_aggregator(s["aggregator"].get<std::string>());
    get_if(s, "lora_rank", cfg.strategy.lora_rank);
    get_if(s, "lora_alpha", cfg.strategy.lora_alpha);
    get_if(s, "lora_dropout", cfg.strategy.lora_dropout);
    cfg.strategy.validate();
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, "train", {"epochs", "lr", "max_lr", "weight_decay", "batch_size", "warmup_frac"});
    get_if(t, "epochs", cfg.train.epochs);
    get_if(t, "lr", cfg.train.lr);
    get_if(t, "max_lr", cfg.train.max_lr);
    get_if(t, "weight_decay", cfg.train.weight_decay);
    get_if(t, "batch_size", cfg.train.batch_size);
    get_if(t, "warmup_frac", cfg.train.warmup_frac);
  }

  if (j.contains("pretrain")) {
    const json& p = j["pretrain"];
    reject_unknown(p, "pretrain", {"epochs", "mask_ratio", "batch_size", "lr", "weight_decay", "seed", "corpus_size"});
    get_if(p, "epochs", cfg.pretrain.epochs);
    get_if(p, "mask_ratio", cfg.pretrain.mask_ratio);
    get_if(p, "batch_size", cfg.pretrain.batch_size);
    get_if(p, "lr", cfg.pretrain.lr);
    get_if(p, "weight_decay", cfg.pretrain.weight_decay);
    get_if(p, "seed", cfg.pretrain.seed);
    get_if(p, "corpus_size", cfg.pretrain_corpus);
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json j;
  j["backbone"] = to_json(c.backbone);
  j["data"] = {{"source", c.data.source},
               {"path", c.data.path},
               {"n_samples", c.data.n_samples},
               {"channels", c.data.channels},
               {"length", c.data.length},
               {"noise", c.data.noise},
               {"schema",
                {{"channels", c.data.schema.channels},
                 {"labels", c.data.schema.labels},
                 {"category_orders", c.data.schema.category_orders},
                 {"hours_channel", c.data.schema.hours_channel}}},
               {"defaults", c.data.defaults},
               {"split", {c.data.split.train, c.data.split.val, c.data.split.test}},
               {"seed", c.data.seed}};
  j["task"] = {{"kind", task_kind_str(c.task.kind)},
               {"labels", c.task.labels},
               {"horizon", c.task.horizon},
               {"lookback", c.task.lookback},
               {"window_stride", c.task.window_stride}};
  j["strategy"] = {{"kind", to_string(c.strategy.kind)},
                   {"K", c.strategy.prompt_size},
                   {"aggregator", to_string(c.strategy.aggregator)},
                   {"lora_rank", c.strategy.lora_rank},
                   {"lora_alpha", c.strategy.lora_alpha},
                   {"lora_dropout", c.strategy.lora_dropout}};
  j["train"] = {{"epochs", c.train.epochs},         {"lr", c.train.lr},
                {"max_lr", c.train.max_lr},         {"weight_decay", c.train.weight_decay},
                {"batch_size", c.train.batch_size}, {"warmup_frac", c.train.warmup_frac}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},   {"mask_ratio", c.pretrain.mask_ratio},
                   {"batch_size", c.pretrain.batch_size}, {"lr", c.pretrain.lr},
                   {"weight_decay", c.pretrain.weight_decay}, {"seed", c.pretrain.seed},
                   {"corpus_size", c.pretrain_corpus}};
  return j;
}

std::string config_hash(const RunConfig& cfg) { return fnv1a_hex(to_json(cfg).dump()); }

void apply_env_overrides(RunConfig& cfg) {
  if (const char* s = std::getenv("TSFT_SEED"); s && *s) {
    try {
      std::size_t used = 0;
      cfg.data.seed = std::stoull(s, &used);
      if (used != std::string(s).size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("TSFT_SEED is not an unsigned integer: ") + s);
    }
  }
}

PreparedData prepare_data(const RunConfig& cfg) {
  const auto& dc = cfg.data;
  std::vector<MultiSeries> samples;
  TaskSpec task;
  task.kind = cfg.task.kind;
  if (dc.source == "channel-mix") {
    samples = synth_channel_mix(dc.n_samples, dc.channels, dc.length, dc.seed, ChannelMixOptions{.noise = dc.noise});
  } else if (dc.source == "forecast") {
    for (const auto& s : synth_forecast(dc.n_samples, dc.channels, dc.length, dc.seed)) {
      auto w = make_windows(s, cfg.task.lookback, cfg.task.horizon, cfg.task.window_stride);
      samples.insert(samples.end(), w.begin(), w.end());
    }
  } else {
    if (dc.path.empty()) throw std::invalid_argument("config: data.path is required for csv source");
    for (const auto& s : load_csv(dc.path, dc.schema)) {
      MultiSeries clean = impute(s, dc.defaults);
      if (cfg.task.kind == TaskKind::kForecast) {
        auto w = make_windows(clean, cfg.task.lookback, cfg.task.horizon, cfg.task.window_stride);
        samples.insert(samples.end(), w.begin(), w.end());
      } else {
        samples.push_back(std::move(clean));
      }
    }
  }
  if (samples.empty()) throw std::invalid_argument("data: no samples");
  task.channels = static_cast<int>(samples.front().channels());
  for (const auto& s : samples)
    if (s.channels() != task.channels) throw std::invalid_argument("data: samples disagree on channel count");
  if (task.kind == TaskKind::kClassify) {
    task.labels = static_cast<int>(samples.front().y.size());
    if (task.labels < 1) throw std::invalid_argument("data: classification samples carry no labels");
  } else {
    task.horizon = cfg.task.horizon;
    task.patches = static_cast<int>(cfg.backbone.num_patches(cfg.task.lookback));
  }
  task.validate();
  return {split(samples, dc.split, dc.seed), task};
}

std::vector<UniSeries> pretraining_corpus(const RunConfig& cfg) {
  const auto& dc = cfg.data;
  const std::uint64_t seed = dc.seed + 0x5eedull;
  std::vector<UniSeries> corpus;
  if (dc.source == "channel-mix") {
    const Index n = std::max<Index>(1, cfg.pretrain_corpus / std::max<Index>(1, dc.channels));
    corpus = univariate_corpus(synth_channel_mix(n, dc.channels, dc.length, seed, ChannelMixOptions{.noise = dc.noise}));
  } else if (dc.source == "forecast") {
    const Index len = cfg.task.lookback > 0 ? cfg.task.lookback : std::min<Index>(dc.length, cfg.backbone.max_T);
    const Index n = std::max<Index>(1, cfg.pretrain_corpus / std::max<Index>(1, dc.channels));
    corpus = univariate_corpus(synth_forecast(n, dc.channels, len, seed));
  } else {
    std::vector<MultiSeries> clean;
    for (const auto& s : load_csv(dc.path, dc.schema)) clean.push_back(impute(s, dc.defaults));
    for (auto& u : univariate_corpus(clean)) {
      if (u.length() > cfg.backbone.max_T) u.values.conservativeResize(cfg.backbone.max_T);
      corpus.push_back(std::move(u));
      if (static_cast<Index>(corpus.size()) >= cfg.pretrain_corpus) break;
    }
  }
  if (static_cast<Index>(corpus.size()) > cfg.pretrain_corpus) corpus.resize(cfg.pretrain_corpus);
  return corpus;
}

}  // namespace tsft
