#include "tsft/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace tsft {
namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

double parse_number(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("csv: cannot parse " + what + " '" + s + "'");
  }
  if (used != s.size()) throw std::invalid_argument("csv: cannot parse " + what + " '" + s + "'");
  return v;
}

// AR(1) driven by unit Gaussian noise, started from its stationary law.
Eigen::VectorXd ar1(Index length, double phi, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd z(length);
  double prev = n(rng) / std::sqrt(1.0 - phi * phi);
  for (Index t = 0; t < length; ++t) {
    prev = phi * prev + n(rng);
    z[t] = prev;
  }
  return z;
}

}  // namespace

std::vector<MultiSeries> load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: empty file " + path.string());
  std::vector<std::string> header = split_line(line);
  for (auto& h : header) h = trim(h);
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "time")
    throw std::invalid_argument("csv: header must start with sample_id,time and name at least one channel");

  const std::set<std::string> label_set(schema.labels.begin(), schema.labels.end());
  std::vector<std::string> channels = schema.channels;
  if (channels.empty())
    for (std::size_t i = 2; i < header.size(); ++i)
      if (!label_set.count(header[i])) channels.push_back(header[i]);

  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t i = 2; i < header.size(); ++i) {
    if (col_of.count(header[i])) throw std::invalid_argument("csv: duplicate column " + header[i]);
    col_of[header[i]] = i;
    if (!label_set.count(header[i]) && std::find(channels.begin(), channels.end(), header[i]) == channels.end())
      throw std::invalid_argument("csv: unknown column " + header[i]);
  }
  for (const auto& c : channels)
    if (!col_of.count(c)) throw std::invalid_argument("csv: channel column " + c + " missing from header");
  for (const auto& l : schema.labels)
    if (!col_of.count(l)) throw std::invalid_argument("csv: label column " + l + " missing from header");
  for (const auto& [name, order] : schema.category_orders)
    if (!col_of.count(name)) throw std::invalid_argument("csv: categorical column " + name + " missing from header");

  struct Row {
    double time;
    std::vector<std::string> cells;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Row>> rows;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw std::invalid_argument("csv: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                  " cells, expected " + std::to_string(header.size()));
    for (auto& c : cells) c = trim(c);
    const double t = parse_number(cells[1], "time");
    if (!std::isfinite(t)) throw std::invalid_argument("csv: non-finite time on line " + std::to_string(line_no));
    auto [it, fresh] = rows.try_emplace(cells[0]);
    if (fresh) order.push_back(cells[0]);
    it->second.push_back({t, std::move(cells)});
  }

  std::vector<MultiSeries> out;
  for (const auto& id : order) {
    auto& rs = rows[id];
    std::stable_sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.time < b.time; });
    for (std::size_t i = 1; i < rs.size(); ++i)
      if (rs[i].time == rs[i - 1].time)
        throw std::invalid_argument("csv: duplicated (sample_id, time) = (" + id + ", " + rs[i].cells[1] + ")");

    const Index T = static_cast<Index>(rs.size());
    const Index C = static_cast<Index>(channels.size()) + (schema.hours_channel ? 1 : 0);
    MultiSeries s;
    s.sample_id = id;
    s.channel_names = channels;
    if (schema.hours_channel) s.channel_names.push_back(kHoursChannel);
    s.x = Mat<double>::Constant(C, T, kMissing);
    for (std::size_t c = 0; c < channels.size(); ++c) {
      const std::size_t col = col_of[channels[c]];
      auto cat = schema.category_orders.find(channels[c]);
      if (cat != schema.category_orders.end()) {
        std::vector<std::optional<std::string>> raw;
        for (const auto& r : rs) raw.push_back(r.cells[col].empty() ? std::nullopt : std::optional(r.cells[col]));
        const auto enc = encode_ordinal(raw, cat->second);
        for (Index t = 0; t < T; ++t) s.x(c, t) = enc[t];
      } else {
        for (Index t = 0; t < T; ++t)
          if (!rs[t].cells[col].empty()) s.x(c, t) = parse_number(rs[t].cells[col], channels[c]);
      }
    }
    if (schema.hours_channel)
      for (Index t = 0; t < T; ++t) s.x(C - 1, t) = rs[t].time - rs[0].time;

    s.y = Mat<double>::Zero(1, static_cast<Index>(schema.labels.size()));
    for (std::size_t l = 0; l < schema.labels.size(); ++l) {
      const std::size_t col = col_of[schema.labels[l]];
      auto hit = std::find_if(rs.begin(), rs.end(), [&](const Row& r) { return !r.cells[col].empty(); });
      if (hit == rs.end()) throw std::invalid_argument("csv: sample " + id + " has no value for label " + schema.labels[l]);
      s.y(0, static_cast<Index>(l)) = parse_number(hit->cells[col], schema.labels[l]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const std::vector<MultiSeries>& samples,
               const std::vector<std::string>& label_names) {
  if (samples.empty()) throw std::invalid_argument("write_csv: no samples");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
  out << "sample_id,time";
  for (const auto& n : samples.front().channel_names) out << ',' << n;
  for (const auto& n : label_names) out << ',' << n;
  out << '\n' << std::setprecision(17);
  for (const auto& s : samples) {
    if (static_cast<Index>(label_names.size()) != s.y.size() && !label_names.empty())
      throw std::invalid_argument("write_csv: label count mismatch for sample " + s.sample_id);
    for (Index t = 0; t < s.length(); ++t) {
      out << s.sample_id << ',' << t;
      for (Index c = 0; c < s.channels(); ++c) {
        out << ',';
        if (std::isfinite(s.x(c, t))) out << s.x(c, t);
      }
      for (std::size_t l = 0; l < label_names.size(); ++l) out << ',' << s.y.data()[l];
      out << '\n';
    }
  }
}

MultiSeries impute(const MultiSeries& x, const std::map<std::string, double>& defaults) {
  MultiSeries out = x;
  for (Index c = 0; c < out.channels(); ++c) {
    const std::string name = c < static_cast<Index>(out.channel_names.size()) ? out.channel_names[c] : std::to_string(c);
    std::optional<double> last;
    for (Index t = 0; t < out.length(); ++t) {
      double& v = out.x(c, t);
      if (std::isfinite(v)) {
        last = v;
        continue;
      }
      if (!last) {
        auto it = defaults.find(name);
        if (it == defaults.end())
          throw std::invalid_argument("impute: channel " + name + " starts missing and has no default value");
        last = it->second;
      }
      v = *last;
    }
  }
  return out;
}

std::vector<double> encode_ordinal(const std::vector<std::optional<std::string>>& values,
                                   const std::vector<std::string>& order) {
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& v : values) {
    if (!v) {
      out.push_back(kMissing);
      continue;
    }
    auto it = std::find(order.begin(), order.end(), *v);
    if (it == order.end()) throw std::invalid_argument("encode_ordinal: unseen category '" + *v + "'");
    out.push_back(static_cast<double>(it - order.begin()));
  }
  return out;
}

DatasetSplit split(const std::vector<MultiSeries>& dataset, SplitRatios ratios, std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (n < 3) throw std::invalid_argument("split: need at least 3 samples");
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw std::invalid_argument("split: ratios must be non-negative and sum to 1");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(idx[i], idx[pick(rng)]);
  }
  // Tiny epsilon keeps e.g. 0.6 * 10 from flooring to 5.
  const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * static_cast<double>(n) + 1e-9));
  DatasetSplit out;
  out.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = dataset[idx[i]];
    if (i < n_train)
      out.train.push_back(s);
    else if (i < n_train + n_val)
      out.val.push_back(s);
    else
      out.test.push_back(s);
  }
  return out;
}

std::vector<MultiSeries> make_windows(const MultiSeries& series, Index lookback, Index horizon, Index stride) {
  if (lookback < 1 || horizon < 1 || stride < 1) throw std::invalid_argument("make_windows: lookback, horizon, stride must be >= 1");
  const Index total = series.length();
  if (total < lookback + horizon)
    throw std::invalid_argument("make_windows: series of length " + std::to_string(total) + " is shorter than lookback + horizon = " +
                                std::to_string(lookback + horizon));
  const Index count = (total - lookback - horizon) / stride + 1;
  std::vector<MultiSeries> out;
  out.reserve(count);
  for (Index w = 0; w < count; ++w) {
    const Index start = w * stride;
    MultiSeries s;
    s.x = series.x.middleCols(start, lookback);
    s.y = series.x.middleCols(start + lookback, horizon);
    s.channel_names = series.channel_names;
    s.sample_id = series.sample_id + "@" + std::to_string(start);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<MultiSeries> synth_channel_mix(Index n_samples, Index channels, Index length, std::uint64_t seed,
                                           ChannelMixOptions opts) {
  if (channels < 2) throw std::invalid_argument("synth_channel_mix: need at least 2 channels");
  if (length < 1 || n_samples < 0) throw std::invalid_argument("synth_channel_mix: bad size");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> noise(0.0, opts.noise);
  std::vector<MultiSeries> out;
  out.reserve(n_samples);
  for (Index i = 0; i < n_samples; ++i) {
    MultiSeries s;
    s.sample_id = "mix" + std::to_string(i);
    s.x.resize(channels, length);
    const bool positive = coin(rng);
    const double sign = positive ? 1.0 : -1.0;
    const Eigen::VectorXd driver = ar1(length, opts.smoothing, rng);
    s.x.row(0) = driver.transpose();
    for (Index t = 0; t < length; ++t) s.x(1, t) = sign * driver[t] + noise(rng);
    for (Index c = 2; c < channels; ++c) s.x.row(c) = ar1(length, opts.smoothing, rng).transpose();
    for (Index c = 0; c < channels; ++c) s.channel_names.push_back("ch" + std::to_string(c));
    s.y = Mat<double>::Constant(1, 1, positive ? 1.0 : 0.0);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<MultiSeries> synth_forecast(Index n_series, Index channels, Index length, std::uint64_t seed) {
  if (channels < 1 || length < 1 || n_series < 0) throw std::invalid_argument("synth_forecast: bad size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(0.2, 1.0), phase(0.0, 2 * M_PI), lag(0.0, 0.5);
  std::normal_distribution<double> noise(0.0, 0.1);
  const double periods[3] = {52.0, 13.0, 7.0};
  std::vector<MultiSeries> out;
  for (Index i = 0; i < n_series; ++i) {
    MultiSeries s;
    s.sample_id = "fc" + std::to_string(i);
    s.x.resize(channels, length);
    double a[3], ph[3], dl[3];
    for (int j = 0; j < 3; ++j) {
      a[j] = amp(rng);
      ph[j] = phase(rng);
      dl[j] = lag(rng);
    }
    for (Index c = 0; c < channels; ++c) {
      s.channel_names.push_back("ch" + std::to_string(c));
      for (Index t = 0; t < length; ++t) {
        double v = 0;
        for (int j = 0; j < 3; ++j) v += a[j] * std::sin(2 * M_PI * static_cast<double>(t) / periods[j] + ph[j] + static_cast<double>(c) * dl[j]);
        s.x(c, t) = v + noise(rng);
      }
    }
    s.y = Mat<double>(0, 0);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<UniSeries> univariate_corpus(const std::vector<MultiSeries>& data) {
  std::vector<UniSeries> out;
  for (const auto& s : data)
    for (Index c = 0; c < s.channels(); ++c) out.push_back(UniSeries{s.x.row(c).transpose(), 0});
  return out;
}

}  // namespace tsft
