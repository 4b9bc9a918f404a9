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

#include "shapfuse/verify.hpp"

#include <random>

#include <gtest/gtest.h>

namespace shapfuse::verify {
namespace {

TEST(VerifyTest, PropertySuitePassesOnReducedBudget) {
  SuiteOptions o;
  o.random_forests = 20;
  o.gradient_samples = 40;
  const VerifyReport r = RunPropertySuite(o);
  EXPECT_TRUE(r.ok()) << FormatReport(r);
  EXPECT_GE(r.passed(), 10);
  for (const auto& p : r.results) EXPECT_GT(p.checks, 0) << p.name;
}

TEST(VerifyTest, RandomEnsemblesAreValid) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto e = RandomEnsemble(rng, 5, 4, 8, 3);
    EXPECT_NO_THROW(e.Validate());
    EXPECT_LE(e.trees.size(), 5u);
    for (const auto& t : e.trees) EXPECT_LE(t.Depth(), 4);
  }
  const auto raw = RandomEnsemble(rng, 3, 3, 4, 2, false);
  EXPECT_NO_THROW(raw.ValidateStructure());
}

TEST(VerifyTest, ArtifactCheckOnEmptyDirectoryFails) {
  const auto dir = std::filesystem::temp_directory_path() / "shapfuse_verify_empty";
  std::filesystem::create_directories(dir);
  EXPECT_FALSE(VerifyArtifacts(dir).ok());
  std::filesystem::remove_all(dir);
}

TEST(VerifyTest, ReportFormatting) {
  VerifyReport r;
  r.results.push_back({"a", true, 3, 0, 0.0, "", 0.1});
  r.results.push_back({"b", false, 3, 1, 0.5, "off by 0.5", 0.1});
  EXPECT_EQ(r.passed(), 1);
  EXPECT_EQ(r.failed(), 1);
  const std::string s = FormatReport(r);
  EXPECT_NE(s.find("PASS"), std::string::npos);
  EXPECT_NE(s.find("FAIL"), std::string::npos);
  EXPECT_NE(s.find("off by 0.5"), std::string::npos);
}

}  // namespace
}  // namespace shapfuse::verify
