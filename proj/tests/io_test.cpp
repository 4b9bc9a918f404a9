/*
 * Copyright 2026 The shapfuse Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "shapfuse/io.hpp"

#include <cstring>
#include <limits>
#include <random>

#include <gtest/gtest.h>

namespace shapfuse::io {
namespace {

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("shapfuse_io_" + std::string(::testing::UnitTest::GetInstance()
                                             ->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

bool BitEqual(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

TEST_F(IoTest, SmallMatrixRoundTrip) {
  Matrix m(3, 2);
  m << 1.5, -2.0, 0.1, 1e-300, 3.0, 7.25;
  MatrixManifest mm;
  mm.seed = 42;
  mm.producer = "test";
  SaveMatrix(dir_ / "m.csv", m, mm, {"a", "b"});
  MatrixManifest back;
  EXPECT_TRUE(BitEqual(LoadMatrix(dir_ / "m.csv", &back), m));
  EXPECT_EQ(back.rows, 3u);
  EXPECT_EQ(back.cols, 2u);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.producer, "test");
  EXPECT_EQ(ReadText(dir_ / "m.csv").substr(0, 4), "a,b\n");
}

// Property: random 512-column matrices with values spread over the whole
// exponent range round-trip with zero ULP drift.
TEST_F(IoTest, WideMatricesRoundTripBitExact) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::uint64_t> bits;
  for (int trial = 0; trial < 5; ++trial) {
    Matrix m(6, 512);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double v;
      do {
        const std::uint64_t b = bits(rng);
        std::memcpy(&v, &b, sizeof v);
      } while (!std::isfinite(v));
      m.data()[i] = v;
    }
    m(0, 0) = -0.0;
    m(0, 1) = std::numeric_limits<double>::denorm_min();
    SaveMatrix(dir_ / "w.csv", m, {});
    EXPECT_TRUE(BitEqual(LoadMatrix(dir_ / "w.csv"), m));
  }
}

TEST_F(IoTest, ShapeMismatchWithManifestIsRejected) {
  Matrix m = Matrix::Ones(3, 2);
  SaveMatrix(dir_ / "m.csv", m, {});
  WriteText(dir_ / "m.csv", ReadText(dir_ / "m.csv") + "1,1\n");
  EXPECT_THROW(LoadMatrix(dir_ / "m.csv"), IoError);
}

TEST_F(IoTest, MalformedInputsAreRejected) {
  SaveMatrix(dir_ / "m.csv", Matrix::Ones(2, 2), {});
  WriteText(dir_ / "m.csv", "c0,c1\n1,abc\n2,3\n");
  EXPECT_THROW(LoadMatrix(dir_ / "m.csv"), IoError);
  WriteText(dir_ / "m.csv", "c0,c1\n1\n2,3\n");
  EXPECT_THROW(LoadMatrix(dir_ / "m.csv"), IoError);
  fs::remove(ManifestPathFor(dir_ / "m.csv"));
  EXPECT_THROW(LoadMatrix(dir_ / "m.csv"), IoError);
  EXPECT_THROW(LoadMatrix(dir_ / "missing.csv"), IoError);
  EXPECT_THROW(FormatDouble(std::numeric_limits<double>::infinity()), IoError);
  EXPECT_THROW(ParseDouble("1.0x"), IoError);
  EXPECT_THROW(ParseDouble(""), IoError);
}

TEST(Sha256Test, KnownVectors) {
  EXPECT_EQ(Sha256Hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(Sha256Hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_F(IoTest, CohortAndSplitRoundTrip) {
  data::SynthConfig cfg;
  cfg.num_patients = 24;
  const data::Cohort c = data::GenerateSyntheticCohort(cfg);
  SaveCohort(dir_ / "cohort", c);
  const data::Cohort back = LoadCohort(dir_ / "cohort");
  ASSERT_EQ(back.patients.size(), c.patients.size());
  for (std::size_t i = 0; i < c.patients.size(); ++i) {
    EXPECT_EQ(back.patients[i].id, c.patients[i].id);
    for (const auto& [m, bag] : c.patients[i].bags)
      EXPECT_TRUE(BitEqual(back.patients[i].bags.at(m).instances, bag.instances));
  }
  const auto split = data::StratifiedSplit(c, {0.5, 0.25, 0.25}, 4);
  const auto split_back = SplitFromJson(SplitToJson(split));
  EXPECT_EQ(split_back.part_of, split.part_of);
  EXPECT_EQ(split_back.seed, split.seed);
}

}  // namespace
}  // namespace shapfuse::io
