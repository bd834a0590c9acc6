#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "tsft/data.hpp"

namespace tsft {
namespace {

namespace fs = std::filesystem;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("tsft_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir_;
};

using Csv = TempDir;

TEST_F(Csv, OneSampleTwoChannels) {
  auto p = write("a.csv", "sample_id,time,hr,bp,mortality\ns1,0,80,120,1\ns1,1,,118,1\ns1,2,82,,1\n");
  CsvSchema schema;
  schema.labels = {"mortality"};
  auto samples = load_csv(p, schema);
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_EQ(samples[0].x.rows(), 2);
  EXPECT_EQ(samples[0].x.cols(), 3);
  EXPECT_EQ(samples[0].y.size(), 1);
  EXPECT_EQ(samples[0].y(0, 0), 1.0);
  EXPECT_TRUE(std::isnan(samples[0].x(0, 1)));
  EXPECT_EQ(samples[0].channel_names, (std::vector<std::string>{"hr", "bp"}));
}

TEST_F(Csv, RowsAreSortedByTimePerSample) {
  auto p = write("a.csv", "sample_id,time,v\nb,2,20\na,1,1\nb,0,0\nb,1,10\n");
  auto s = load_csv(p, {});
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].sample_id, "b");
  EXPECT_EQ(s[0].x, (Mat<double>(1, 3) << 0, 10, 20).finished());
}

TEST_F(Csv, ContractViolations) {
  CsvSchema schema;
  schema.channels = {"v"};
  EXPECT_THROW(load_csv(write("dup.csv", "sample_id,time,v\na,0,1\na,0,2\n"), schema), std::invalid_argument);
  EXPECT_THROW(load_csv(write("unk.csv", "sample_id,time,v,w\na,0,1,2\n"), schema), std::invalid_argument);
  EXPECT_THROW(load_csv(write("time.csv", "sample_id,time,v\na,noon,1\n"), schema), std::invalid_argument);
  EXPECT_THROW(load_csv(write("miss.csv", "sample_id,time,w\na,0,1\n"), schema), std::invalid_argument);
  EXPECT_THROW(load_csv(dir_ / "absent.csv", schema), std::runtime_error);
}

TEST_F(Csv, CategoricalColumnsAreOrdinal) {
  auto p = write("c.csv", "sample_id,time,gcs\na,0,low\na,1,high\na,2,low\n");
  CsvSchema schema;
  schema.category_orders["gcs"] = {"low", "high"};
  auto s = load_csv(p, schema);
  EXPECT_EQ(s[0].x, (Mat<double>(1, 3) << 0, 1, 0).finished());
}

TEST_F(Csv, HoursChannelIsAppended) {
  auto p = write("h.csv", "sample_id,time,v\na,5,1\na,7.5,2\n");
  CsvSchema schema;
  schema.hours_channel = true;
  auto s = load_csv(p, schema);
  ASSERT_EQ(s[0].x.rows(), 2);
  EXPECT_EQ(s[0].x.row(1), (RowVec<double>(2) << 0, 2.5).finished());
  EXPECT_EQ(s[0].channel_names.back(), kHoursChannel);
}

TEST_F(Csv, WriteThenLoadRoundTrips) {
  auto data = synth_channel_mix(4, 2, 9, 3);
  write_csv(dir_ / "rt.csv", data, {"label"});
  CsvSchema schema;
  schema.labels = {"label"};
  auto back = load_csv(dir_ / "rt.csv", schema);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].x, data[i].x);
    EXPECT_EQ(back[i].y, data[i].y);
  }
}

MultiSeries row(std::initializer_list<double> v) {
  MultiSeries s;
  s.x = Mat<double>(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double d : v) s.x(0, i++) = d;
  s.channel_names = {"v"};
  return s;
}

TEST(Impute, ForwardFill) {
  EXPECT_EQ(impute(row({1, kNaN, kNaN, 4}), {}).x, row({1, 1, 1, 4}).x);
}

TEST(Impute, LeadingGapTakesDefault) {
  EXPECT_EQ(impute(row({kNaN, 2}), {{"v", 0.0}}).x, row({0, 2}).x);
  EXPECT_THROW(impute(row({kNaN, 2}), {}), std::invalid_argument);
}

TEST(Impute, ObservedInputUnchanged) {
  MultiSeries s = row({3, 1, 4});
  EXPECT_EQ(impute(s, {}).x, s.x);
}

TEST(EncodeOrdinal, Examples) {
  EXPECT_EQ(encode_ordinal({"low", "high", "low"}, {"low", "high"}), (std::vector<double>{0, 1, 0}));
  EXPECT_EQ(encode_ordinal({"a", "a"}, {"a"}), (std::vector<double>{0, 0}));
  EXPECT_THROW(encode_ordinal({"mid"}, {"low", "high"}), std::invalid_argument);
  auto withMissing = encode_ordinal({std::nullopt, "high"}, {"low", "high"});
  EXPECT_TRUE(std::isnan(withMissing[0]));
}

std::vector<MultiSeries> numbered(int n) {
  std::vector<MultiSeries> out;
  for (int i = 0; i < n; ++i) {
    MultiSeries s = row({static_cast<double>(i)});
    s.sample_id = "s" + std::to_string(i);
    out.push_back(s);
  }
  return out;
}

TEST(Split, Counts) {
  auto s = split(numbered(100), {}, 1);
  EXPECT_EQ(s.train.size(), 60u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 30u);
  auto t = split(numbered(10), {}, 1);
  EXPECT_EQ(t.train.size(), 6u);
  EXPECT_EQ(t.val.size(), 1u);
  EXPECT_EQ(t.test.size(), 3u);
}

TEST(Split, DisjointCoverAndDeterministic) {
  for (int n : {3, 7, 50, 101}) {
    auto a = split(numbered(n), {}, 42), b = split(numbered(n), {}, 42);
    std::multiset<std::string> ids;
    for (const auto* part : {&a.train, &a.val, &a.test})
      for (const auto& s : *part) ids.insert(s.sample_id);
    EXPECT_EQ(ids.size(), static_cast<std::size_t>(n));
    EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].sample_id, b.train[i].sample_id);
  }
  auto c = split(numbered(50), {}, 43), d = split(numbered(50), {}, 42);
  bool differs = false;
  for (std::size_t i = 0; i < c.train.size(); ++i) differs |= c.train[i].sample_id != d.train[i].sample_id;
  EXPECT_TRUE(differs);
}

TEST(Split, Contract) {
  EXPECT_THROW(split(numbered(2), {}, 0), std::invalid_argument);
  EXPECT_THROW(split(numbered(10), {0.5, 0.1, 0.1}, 0), std::invalid_argument);
}

MultiSeries ramp(Index C, Index T) {
  MultiSeries s;
  s.x = Mat<double>(C, T);
  for (Index c = 0; c < C; ++c)
    for (Index t = 0; t < T; ++t) s.x(c, t) = 1000.0 * c + t;
  return s;
}

TEST(Windows, Counts) {
  EXPECT_EQ(make_windows(ramp(2, 200), 104, 60, 1).size(), 37u);
  EXPECT_EQ(make_windows(ramp(2, 164), 104, 60, 1).size(), 1u);
  EXPECT_EQ(make_windows(ramp(2, 200), 104, 60, 4).size(), 10u);
  EXPECT_THROW(make_windows(ramp(2, 163), 104, 60, 1), std::invalid_argument);
}

TEST(Windows, ConcatenationReproducesSource) {
  const MultiSeries src = ramp(3, 50);
  const auto w = make_windows(src, 12, 5, 3);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Index start = static_cast<Index>(i) * 3;
    ASSERT_EQ(w[i].x.cols(), 12);
    ASSERT_EQ(w[i].y.rows(), 3);
    ASSERT_EQ(w[i].y.cols(), 5);
    EXPECT_EQ(w[i].x, src.x.middleCols(start, 12));
    EXPECT_EQ(w[i].y, src.x.middleCols(start + 12, 5));
  }
}

TEST(ChannelMix, MarginalsMatchAcrossClasses) {
  const auto data = synth_channel_mix(1000, 2, 64, 7);
  for (Index c = 0; c < 2; ++c) {
    std::vector<double> pos, neg;
    for (const auto& s : data) (s.y(0, 0) > 0.5 ? pos : neg).push_back(s.x.row(c).mean());
    auto stats = [](const std::vector<double>& v) {
      double m = 0, q = 0;
      for (double x : v) m += x;
      m /= v.size();
      for (double x : v) q += (x - m) * (x - m);
      return std::pair{m, q / (v.size() - 1)};
    };
    auto [mp, vp] = stats(pos);
    auto [mn, vn] = stats(neg);
    const double se = std::sqrt(vp / pos.size() + vn / neg.size());
    EXPECT_LT(std::abs(mp - mn), 3 * se) << "channel " << c;
  }
}

TEST(ChannelMix, CorrelationSignEncodesLabel) {
  const auto data = synth_channel_mix(1000, 2, 64, 8);
  int agree = 0;
  for (const auto& s : data) {
    const auto a = s.x.row(0).array() - s.x.row(0).mean();
    const auto b = s.x.row(1).array() - s.x.row(1).mean();
    agree += ((a * b).sum() > 0) == (s.y(0, 0) > 0.5);
  }
  EXPECT_GE(agree, 950);
}

TEST(Generators, DeterministicAndShaped) {
  auto a = synth_channel_mix(5, 3, 16, 1), b = synth_channel_mix(5, 3, 16, 1);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].x, b[i].x);
  EXPECT_EQ(a[0].x.rows(), 3);
  auto f = synth_forecast(2, 4, 100, 3), g = synth_forecast(2, 4, 100, 3);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].x.rows(), 4);
  EXPECT_EQ(f[0].x.cols(), 100);
  EXPECT_EQ(f[1].x, g[1].x);
  for (const auto& s : f) EXPECT_LT(s.x.cwiseAbs().maxCoeff(), 3.0 + 1.0);  // 3 unit sinusoids + noise
  EXPECT_EQ(univariate_corpus(f).size(), 8u);
}

}  // namespace
}  // namespace tsft
