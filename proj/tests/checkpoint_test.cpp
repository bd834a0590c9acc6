#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "tsft/checkpoint.hpp"
#include "tsft/peft.hpp"

namespace tsft {
namespace {

namespace fs = std::filesystem;
using testing::bit_equal;
using testing::random_series;

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("tsft_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  std::vector<NamedTensor> ts{{"a", Tensor<float>({2, 3}, {1.5f, -0.0f, 3e-38f, 1e30f, -7.25f, 0.1f})},
                              {"b", Tensor<float>({4}, {1, 2, 3, 4})}};
  save_checkpoint(dir_, ts, {{"note", "x"}});
  Checkpoint ck = load_checkpoint(dir_);
  ASSERT_EQ(ck.tensors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(ck.tensors[i].name, ts[i].name);
    EXPECT_EQ(ck.tensors[i].tensor.shape(), ts[i].tensor.shape());
    EXPECT_EQ(std::memcmp(ck.tensors[i].tensor.data().data(), ts[i].tensor.data().data(), 4 * ts[i].tensor.data().size()), 0);
  }
  EXPECT_EQ(ck.manifest["note"], "x");
}

TEST_F(CheckpointTest, WeightsAreLittleEndianF32AtRecordedOffsets) {
  save_checkpoint(dir_, {{"a", Tensor<float>({1}, {1.0f})}, {"b", Tensor<float>({2}, {-2.0f, 0.5f})}});
  const std::string bin = read_bytes(dir_ / "weights.bin");
  ASSERT_EQ(bin.size(), 12u);
  // 1.0f = 0x3f800000
  EXPECT_EQ(static_cast<unsigned char>(bin[0]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(bin[3]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(bin[2]), 0x80);
  Checkpoint ck = load_checkpoint(dir_);
  EXPECT_EQ(ck.manifest["tensors"][0]["byte_offset"], 0);
  EXPECT_EQ(ck.manifest["tensors"][1]["byte_offset"], 4);
  EXPECT_EQ(ck.manifest["tensors"][1]["dtype"], "f32");
  EXPECT_EQ(ck.tensors[1].tensor.data()[0], -2.0f);
}

TEST_F(CheckpointTest, BackboneForwardSurvivesSaveLoad) {
  std::mt19937_64 rng(1);
  BackboneConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.patch_len = 4;
  cfg.stride = 4;
  cfg.max_T = 32;
  auto bb = Backbone<float>::random(cfg, rng);
  save_backbone(dir_, bb);
  auto back = load_backbone(dir_);
  EXPECT_EQ(back.config(), cfg);
  const auto x = channel_split(random_series(1, 29, rng))[0];
  Tape<float> t1, t2;
  ForwardContext<float> c1{t1}, c2{t2};
  EXPECT_TRUE(bit_equal(bb.forward(c1, x).grid.data.value(), back.forward(c2, x).grid.data.value()));
}

TEST_F(CheckpointTest, CorruptedWeightsAreRejected) {
  save_checkpoint(dir_, {{"a", Tensor<float>({2}, {1, 2})}});
  std::string bin = read_bytes(dir_ / "weights.bin");
  bin[5] ^= 1;
  std::ofstream(dir_ / "weights.bin", std::ios::binary) << bin;
  EXPECT_THROW(load_checkpoint(dir_), std::runtime_error);
}

TEST_F(CheckpointTest, AssignRequiresEveryTensor) {
  save_checkpoint(dir_, {{"a", Tensor<float>({1, 2}, {1, 2})}});
  Checkpoint ck = load_checkpoint(dir_);
  Parameter<float> a("a", Mat<float>::Zero(1, 2)), b("b", Mat<float>::Zero(1, 1)), wrong("a", Mat<float>::Zero(2, 1));
  EXPECT_THROW(assign_from<float>(ck, {&a, &b}), std::runtime_error);
  assign_from<float>(ck, {&a, &b}, true);
  EXPECT_EQ(a.value(0, 1), 2.0f);
  EXPECT_THROW(assign_from<float>(ck, {&wrong}), ShapeError);
}

TEST_F(CheckpointTest, MissingFilesAndMalformedManifest) {
  EXPECT_THROW(load_checkpoint(dir_), std::runtime_error);
  save_checkpoint(dir_, {});
  std::ofstream(dir_ / "manifest.json") << "{not json";
  EXPECT_THROW(load_checkpoint(dir_), std::runtime_error);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

}  // namespace
}  // namespace tsft
