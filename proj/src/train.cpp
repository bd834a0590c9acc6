#include "tsft/train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tsft/metrics.hpp"

namespace tsft {

double compute_loss(const Mat<double>& pred, const Mat<double>& target, const TaskSpec& task) {
  Tape<double> tape;
  return compute_loss(tape.constant(pred), target, task).value()(0, 0);
}

namespace {

std::vector<Mat<float>> snapshot(const ParamRefs<float>& params) {
  std::vector<Mat<float>> out;
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

void restore(const ParamRefs<float>& params, const std::vector<Mat<float>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

Mat<float> target_of(const MultiSeries& s) { return s.y.cast<float>(); }

}  // namespace

double mean_loss(AdaptedModel<float>& model, const std::vector<MultiSeries>& samples) {
  if (samples.empty()) throw std::invalid_argument("mean_loss: no samples");
  double s = 0;
  for (const auto& x : samples) {
    Tape<float> tape;
    ForwardContext<float> ctx{tape};
    s += compute_loss(model.forward(ctx, x), target_of(x), model.task()).value()(0, 0);
  }
  return s / static_cast<double>(samples.size());
}

TrainLog train_model(AdaptedModel<float>& model, const std::vector<MultiSeries>& train,
                     const std::vector<MultiSeries>& val, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (train.empty()) throw std::invalid_argument("train: empty training set");
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  const ParamRefs<float> params = model.trainable_parameters();
  AdamW<float> opt(params, AdamWConfig{.weight_decay = cfg.weight_decay});
  const std::size_t n = train.size();
  const std::size_t batch = cfg.batch_size > 0 ? std::min<std::size_t>(cfg.batch_size, n) : n;
  const long per_epoch = static_cast<long>((n + batch - 1) / batch);
  const OneCycleSchedule sched{per_epoch * cfg.epochs, cfg.lr, cfg.max_lr, 1e4, cfg.warmup_frac};

  TrainLog log;
  log.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<Mat<float>> best;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(order[i], order[pick(rng)]);
    }
    double epoch_loss = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      opt.zero_grad();
      Tape<float> tape;
      ForwardContext<float> ctx{tape, true, &rng};
      std::optional<Var<float>> total;
      for (std::size_t i = start; i < end; ++i) {
        const MultiSeries& x = train[order[i]];
        Var<float> l = compute_loss(model.forward(ctx, x), target_of(x), model.task());
        total = total ? add(*total, l) : l;
      }
      Var<float> loss = scale(*total, 1.0f / static_cast<float>(end - start));
      tape.backward(loss);
      opt.step(sched(log.steps++));
      epoch_loss += loss.value()(0, 0) * static_cast<double>(end - start);
    }
    log.train_loss.push_back(epoch_loss / static_cast<double>(n));
    if (!val.empty()) {
      const double v = mean_loss(model, val);
      log.val_loss.push_back(v);
      if (v < log.best_val_loss) {
        log.best_val_loss = v;
        log.best_epoch = epoch;
        best = snapshot(params);
      }
    }
  }
  if (!best.empty()) restore(params, best);
  return log;
}

Mat<double> predict(AdaptedModel<float>& model, const std::vector<MultiSeries>& samples) {
  const TaskSpec& task = model.task();
  const Index width = task.kind == TaskKind::kClassify ? task.labels : static_cast<Index>(task.channels) * task.horizon;
  Mat<double> out(static_cast<Index>(samples.size()), width);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Tape<float> tape;
    ForwardContext<float> ctx{tape};
    Var<float> y = model.forward(ctx, samples[i]);
    if (task.kind == TaskKind::kClassify) y = sigmoid(y);
    const Mat<float>& v = y.value();
    out.row(static_cast<Index>(i)) = Eigen::Map<const RowVec<float>>(v.data(), v.size()).cast<double>();
  }
  return out;
}

Mat<double> stack_targets(const std::vector<MultiSeries>& samples) {
  if (samples.empty()) return {};
  const Index w = samples.front().y.size();
  Mat<double> out(static_cast<Index>(samples.size()), w);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].y.size() != w) throw ShapeError("stack_targets: target sizes differ");
    out.row(static_cast<Index>(i)) = Eigen::Map<const RowVec<double>>(samples[i].y.data(), w);
  }
  return out;
}

std::map<std::string, double> evaluate(AdaptedModel<float>& model, const std::vector<MultiSeries>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  const Mat<double> pred = predict(model, samples);
  const Mat<double> target = stack_targets(samples);
  auto m = model.task().kind == TaskKind::kClassify ? classification_metrics(pred, target) : forecast_metrics(pred, target);
  m["loss"] = mean_loss(model, samples);
  return m;
}

RunResult run_cell(const ExperimentSpec& spec, const ExperimentCell& cell, std::uint64_t seed, const DatasetSplit& data) {
  RunResult r;
  r.strategy = cell.label;
  r.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    std::mt19937_64 rng(seed);
    AdaptedModel<float> model(spec.backbone, cell.strategy, spec.task, rng);
    const ParamReport rep = model.report();
    r.trainable_params = rep.trainable;
    r.trainable_fraction = rep.fraction;
    const TrainLog log = train_model(model, data.train, data.val, spec.train, rng);
    r.metrics = evaluate(model, data.test);
    r.metrics["test_loss"] = r.metrics["loss"];
    r.metrics.erase("loss");
    if (!log.val_loss.empty()) r.metrics["val_loss"] = log.best_val_loss;
  } catch (const std::exception& e) {
    r.error = e.what();
    r.metrics.clear();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<RunResult> run_experiment(const ExperimentSpec& spec, const DatasetSplit& data) {
  std::vector<std::pair<std::size_t, std::uint64_t>> jobs;
  for (std::size_t c = 0; c < spec.cells.size(); ++c)
    for (auto s : spec.seeds) jobs.emplace_back(c, s);
  std::vector<RunResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i; (i = next++) < jobs.size();)
      results[i] = run_cell(spec, spec.cells[jobs[i].first], jobs[i].second, data);
  };
  const int n_threads = std::max(1, std::min<int>(spec.jobs, static_cast<int>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

ExperimentSummary summarize(const std::vector<RunResult>& results) {
  ExperimentSummary s;
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  for (const auto& r : results) {
    if (!r.ok()) {
      s.failures.push_back(r.strategy + " seed " + std::to_string(r.seed) + ": " + r.error);
      continue;
    }
    for (const auto& [k, v] : r.metrics) values[r.strategy][k].push_back(v);
    values[r.strategy]["trainable_params"].push_back(static_cast<double>(r.trainable_params));
    values[r.strategy]["trainable_fraction"].push_back(r.trainable_fraction);
  }
  for (const auto& [strategy, metrics] : values) {
    for (const auto& [name, xs] : metrics) {
      MetricSummary m;
      m.count = static_cast<int>(xs.size());
      for (double x : xs) m.mean += x;
      m.mean /= m.count;
      double var = 0;
      for (double x : xs) var += (x - m.mean) * (x - m.mean);
      m.std = std::sqrt(var / m.count);
      s.table[strategy][name] = m;
    }
  }
  return s;
}

std::string results_csv(const std::vector<RunResult>& results) {
  std::ostringstream out;
  out << std::setprecision(17) << "strategy,seed,metric,value\n";
  for (const auto& r : results) {
    if (!r.ok()) continue;
    for (const auto& [k, v] : r.metrics) out << r.strategy << ',' << r.seed << ',' << k << ',' << v << '\n';
    out << r.strategy << ',' << r.seed << ",trainable_params," << r.trainable_params << '\n';
    out << r.strategy << ',' << r.seed << ",runtime_seconds," << r.seconds << '\n';
  }
  return out.str();
}

std::string summary_json(const ExperimentSummary& summary, const std::string& config_hash) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [strategy, metrics] : summary.table)
    for (const auto& [name, m] : metrics) j[strategy][name] = {{"mean", m.mean}, {"std", m.std}, {"n", m.count}};
  j["_meta"] = {{"std", "population"}, {"config_hash", config_hash}, {"failures", summary.failures}};
  return j.dump(2) + "\n";
}

}  // namespace tsft
