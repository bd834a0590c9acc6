#include "tsft/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "tsft/checkpoint.hpp"
#include "tsft/config.hpp"
#include "tsft/gradcheck_suite.hpp"

namespace fs = std::filesystem;

namespace tsft {

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Artifacts are written into a sibling staging path and moved into place on
// commit(); anything left uncommitted is deleted.
class Staged {
 public:
  explicit Staged(fs::path target) : target_(std::move(target)) {
    if (target_.filename().empty()) target_ = target_.parent_path();
    staging_ = target_;
    staging_ += ".partial-" + std::to_string(::getpid());
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  ~Staged() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }
  Staged(const Staged&) = delete;
  Staged& operator=(const Staged&) = delete;

  const fs::path& path() const { return staging_; }

  void commit() {
    fs::remove_all(target_);
    fs::rename(staging_, target_);
    committed_ = true;
  }

 private:
  fs::path target_, staging_;
  bool committed_ = false;
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

json metrics_json(const std::map<std::string, double>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

RunConfig read_run_config(const std::string& path) {
  RunConfig cfg = load_config(path);
  apply_env_overrides(cfg);
  return cfg;
}

StrategyKind strategy_flag(const std::string& s) {
  try {
    return parse_strategy(s);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string config, out;
};

void cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
  RunConfig cfg = read_run_config(a.config);
  Staged dir(a.out);
  PretrainResult r = pretrain(pretraining_corpus(cfg), cfg.backbone, cfg.pretrain);
  save_backbone(dir.path(), r.backbone, {{"config_hash", config_hash(cfg)}, {"losses", r.losses}});
  dir.commit();
  out << "pretrain: loss " << r.losses.front() << " -> " << r.losses.back() << "\n";
}

struct FinetuneArgs {
  std::string backbone, config, strategy, out, aggregator;
  int k = -1;
};

void cmd_finetune(const FinetuneArgs& a, std::ostream& out) {
  RunConfig cfg = read_run_config(a.config);
  if (!a.strategy.empty()) cfg.strategy.kind = strategy_flag(a.strategy);
  if (!a.aggregator.empty()) {
    try {
      cfg.strategy.aggregator = parse_aggregator(a.aggregator);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  if (a.k >= 0) cfg.strategy.prompt_size = a.k;
  cfg.strategy.validate();

  Backbone<float> backbone = load_backbone(a.backbone);
  cfg.backbone = backbone.config();  // the checkpoint defines the architecture
  const PreparedData data = prepare_data(cfg);
  Staged dir(a.out);

  std::mt19937_64 rng(cfg.data.seed);
  AdaptedModel<float> model(std::move(backbone), cfg.strategy, data.task, rng);
  const ParamReport rep = model.report();
  const TrainLog log = train_model(model, data.split.train, data.split.val, cfg.train, rng);

  json meta = {{"kind", "strategy"},
               {"backbone_path", fs::absolute(a.backbone).lexically_normal().string()},
               {"backbone_hash", file_hash(fs::path(a.backbone) / "weights.bin")},
               {"config", to_json(cfg)},
               {"config_hash", config_hash(cfg)},
               {"trainable_params", rep.trainable},
               {"total_params", rep.total}};
  save_checkpoint(dir.path(), to_named_tensors(model.trainable_parameters()), meta);

  json metrics = {{"config_hash", config_hash(cfg)},
                  {"strategy", to_string(cfg.strategy.kind)},
                  {"best_epoch", log.best_epoch},
                  {"train_loss", log.train_loss},
                  {"val_loss", log.val_loss}};
  if (!data.split.val.empty()) metrics["val"] = metrics_json(evaluate(model, data.split.val));
  metrics["test"] = metrics_json(evaluate(model, data.split.test));
  write_text(dir.path() / "metrics.json", metrics.dump(2) + "\n");
  dir.commit();
  out << metrics["test"].dump() << "\n";
}

struct EvalArgs {
  std::string run, split = "test", out;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.split != "train" && a.split != "val" && a.split != "test")
    throw UsageError("--split must be train, val or test");
  const Checkpoint ckpt = load_checkpoint(a.run);
  const json& m = ckpt.manifest;
  if (m.value("kind", "") != "strategy") throw std::runtime_error(a.run + " is not a fine-tuning run");
  // The stored config already carries any seed override, so the environment is
  // not consulted again.
  const RunConfig cfg = parse_config(m.at("config"));
  const fs::path bb_dir = m.at("backbone_path").get<std::string>();
  if (file_hash(bb_dir / "weights.bin") != m.at("backbone_hash").get<std::string>())
    throw std::runtime_error("backbone at " + bb_dir.string() + " does not match the run's content hash");

  const PreparedData data = prepare_data(cfg);
  std::mt19937_64 rng(cfg.data.seed);
  AdaptedModel<float> model(load_backbone(bb_dir), cfg.strategy, data.task, rng);
  assign_from(ckpt, model.trainable_parameters());
  const auto& samples = a.split == "train" ? data.split.train : a.split == "val" ? data.split.val : data.split.test;
  if (samples.empty()) throw std::runtime_error("split " + a.split + " is empty");
  const std::string text = metrics_json(evaluate(model, samples)).dump(2) + "\n";
  if (!a.out.empty()) {
    const fs::path tmp = fs::path(a.out).string() + ".partial";
    write_text(tmp, text);
    fs::rename(tmp, a.out);
  }
  out << text;
}

struct BenchArgs {
  std::string config, strategies = "full,lora,linear,ptuning,gen-p", out, backbone, k_sweep;
  int seeds = 5;
  int jobs = 1;
};

std::vector<ExperimentCell> bench_cells(const RunConfig& cfg, const BenchArgs& a) {
  std::vector<int> ks;
  for (const auto& s : split_list(a.k_sweep)) {
    try {
      std::size_t used = 0;
      ks.push_back(std::stoi(s, &used));
      if (used != s.size() || ks.back() < 0) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw UsageError("--k-sweep expects non-negative integers, got '" + s + "'");
    }
  }
  std::vector<ExperimentCell> cells;
  std::set<std::string> seen;
  for (const auto& name : split_list(a.strategies)) {
    StrategyConfig sc = cfg.strategy;
    sc.kind = strategy_flag(name);
    const bool prompted = sc.kind == StrategyKind::kGenP || sc.kind == StrategyKind::kPTuning;
    if (!seen.insert(name).second) throw UsageError("strategy listed twice: " + name);
    if (prompted && !ks.empty()) {
      for (int k : ks) {
        sc.prompt_size = k;
        sc.validate();
        cells.push_back({name + "[K=" + std::to_string(k) + "]", sc});
      }
    } else {
      sc.validate();
      cells.push_back({name, sc});
    }
  }
  if (cells.empty()) throw UsageError("--strategies is empty");
  return cells;
}

std::string summary_table_csv(const ExperimentSummary& s) {
  std::set<std::string> metrics;
  for (const auto& [_, m] : s.table)
    for (const auto& [name, __] : m) metrics.insert(name);
  std::ostringstream out;
  out << std::setprecision(17) << "strategy";
  for (const auto& name : metrics) out << ',' << name << "_mean," << name << "_std";
  out << '\n';
  for (const auto& [strategy, m] : s.table) {
    out << strategy;
    for (const auto& name : metrics) {
      auto it = m.find(name);
      if (it == m.end()) out << ",,";
      else out << ',' << it->second.mean << ',' << it->second.std;
    }
    out << '\n';
  }
  return out.str();
}

void cmd_bench(const BenchArgs& a, std::ostream& out) {
  if (a.seeds < 1) throw UsageError("--seeds must be positive");
  if (a.jobs < 1) throw UsageError("--jobs must be positive");
  RunConfig cfg = read_run_config(a.config);
  const std::vector<ExperimentCell> cells = bench_cells(cfg, a);

  std::optional<Backbone<float>> backbone;
  if (!a.backbone.empty()) {
    backbone = load_backbone(a.backbone);
    cfg.backbone = backbone->config();
  } else {
    backbone = pretrain(pretraining_corpus(cfg), cfg.backbone, cfg.pretrain).backbone;
  }
  const PreparedData data = prepare_data(cfg);
  Staged dir(a.out);

  ExperimentSpec spec{std::move(*backbone), data.task, cells, {}, cfg.train, a.jobs};
  for (int i = 0; i < a.seeds; ++i) spec.seeds.push_back(cfg.data.seed + static_cast<std::uint64_t>(i));
  const auto results = run_experiment(spec, data.split);
  const ExperimentSummary summary = summarize(results);

  write_text(dir.path() / "results.csv", results_csv(results));
  write_text(dir.path() / "summary.json", summary_json(summary, config_hash(cfg)));
  write_text(dir.path() / "summary.csv", summary_table_csv(summary));
  write_text(dir.path() / "config.json", to_json(cfg).dump(2) + "\n");
  dir.commit();

  const std::string key = data.task.kind == TaskKind::kClassify ? "auroc" : "mse";
  for (const auto& [strategy, m] : summary.table) {
    auto it = m.find(key);
    if (it != m.end()) out << strategy << ' ' << key << ' ' << it->second.mean << " +- " << it->second.std << '\n';
  }
  for (const auto& f : summary.failures) out << "failed: " << f << '\n';
}

struct GradcheckArgs {
  std::string config;
  int draws = 10;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  BackboneConfig bc;
  if (!a.config.empty()) bc = read_run_config(a.config).backbone;
  GradCheckSuiteOptions opts;
  opts.draws = a.draws;
  const auto results = run_gradcheck_suite(bc, opts);
  std::map<std::string, std::pair<double, bool>> worst;
  bool ok = true;
  for (const auto& r : results) {
    auto& w = worst.try_emplace(r.name, 0.0, true).first->second;
    w.first = std::max(w.first, r.max_rel_error);
    w.second = w.second && r.passed;
    ok = ok && r.passed;
  }
  for (const auto& [name, w] : worst)
    out << (w.second ? "ok   " : "FAIL ") << name << " max_rel_error " << w.first << '\n';
  return ok ? 0 : 1;
}

struct SynthArgs {
  std::string kind, out;
  Index n = 0, channels = 2, length = 0;
  std::uint64_t seed = 0;
  double noise = 0.5;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.channels < 1) throw UsageError("--channels must be positive");
  std::vector<MultiSeries> data;
  std::vector<std::string> labels;
  if (a.kind == "channel-mix") {
    data = synth_channel_mix(a.n > 0 ? a.n : 1000, a.channels, a.length > 0 ? a.length : 64, a.seed,
                             ChannelMixOptions{.noise = a.noise});
    labels = {"label"};
  } else {
    data = synth_forecast(a.n > 0 ? a.n : 1, a.channels, a.length > 0 ? a.length : 2048, a.seed);
  }
  const fs::path tmp = fs::path(a.out).string() + ".partial";
  try {
    write_csv(tmp, data, labels);
    fs::rename(tmp, a.out);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  out << "synth: wrote " << data.size() << " series to " << a.out << '\n';
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parameter-efficient fine-tuning of a patch transformer for multivariate series", "tsft"};
  app.require_subcommand(1);

  PretrainArgs pa;
  auto* pre = app.add_subcommand("pretrain", "Masked-patch pretraining of a univariate backbone");
  pre->add_option("--config", pa.config, "Run config (JSON)")->required();
  pre->add_option("--out", pa.out, "Checkpoint directory")->required();

  FinetuneArgs fa;
  auto* fin = app.add_subcommand("finetune", "Fine-tune a pretrained backbone with one strategy");
  fin->add_option("--backbone", fa.backbone, "Backbone checkpoint directory")->required();
  fin->add_option("--config", fa.config, "Run config (JSON)")->required();
  fin->add_option("--strategy", fa.strategy, "full|lora|linear|ptuning|gen-p (overrides config)");
  fin->add_option("--aggregator", fa.aggregator, "transformer|rnn|mlp|constant (overrides config)");
  fin->add_option("--K", fa.k, "Prompt size per channel (overrides config)");
  fin->add_option("--out", fa.out, "Run directory")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Recompute metrics of a fine-tuning run");
  ev->add_option("--run", ea.run, "Run directory")->required();
  ev->add_option("--split", ea.split, "train|val|test");
  ev->add_option("--out", ea.out, "Also write the metrics JSON here");

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "Multi-seed comparison of strategies");
  be->add_option("--config", ba.config, "Run config (JSON)")->required();
  be->add_option("--strategies", ba.strategies, "Comma-separated strategy list");
  be->add_option("--seeds", ba.seeds, "Number of seeds, starting at the config seed");
  be->add_option("--out", ba.out, "Results directory")->required();
  be->add_option("--backbone", ba.backbone, "Pretrained backbone (pretrained from the config if absent)");
  be->add_option("--k-sweep", ba.k_sweep, "Comma-separated prompt sizes for prompt-based strategies");
  be->add_option("--jobs", ba.jobs, "Worker threads");

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks in double precision");
  gc->add_option("--config", ga.config, "Run config (JSON); its backbone section is used");
  gc->add_option("--draws", ga.draws, "Random draws per component");

  SynthArgs sa;
  auto* sy = app.add_subcommand("synth", "Write a synthetic dataset as CSV");
  sy->add_option("--kind", sa.kind, "channel-mix|forecast")->required()->check(CLI::IsMember({"channel-mix", "forecast"}));
  sy->add_option("--out", sa.out, "Output CSV")->required();
  sy->add_option("--n", sa.n, "Number of samples (channel-mix) or series (forecast)");
  sy->add_option("--channels", sa.channels, "Channels per sample");
  sy->add_option("--length", sa.length, "Time steps per sample");
  sy->add_option("--seed", sa.seed, "Random seed");
  sy->add_option("--noise", sa.noise, "Coupling noise (channel-mix)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "tsft: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*pre) cmd_pretrain(pa, out);
    else if (*fin) cmd_finetune(fa, out);
    else if (*ev) cmd_eval(ea, out);
    else if (*be) cmd_bench(ba, out);
    else if (*gc) return cmd_gradcheck(ga, out);
    else if (*sy) cmd_synth(sa, out);
    return 0;
  } catch (const UsageError& e) {
    err << "tsft: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "tsft: error: " << one_line(e.what()) << '\n';
    return 1;
  }
}

}  // namespace tsft
