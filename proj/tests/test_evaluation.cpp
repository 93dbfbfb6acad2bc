// Copyright 2026 The Visage Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "visage/evaluation/metrics.hpp"
#include "visage/evaluation/report.hpp"
#include "visage/features/synthetic.hpp"
#include "visage/model/model.hpp"

namespace ve = visage::evaluation;
namespace vf = visage::features;
namespace vm = visage::model;

TEST(Rmse, KnownValuesAndErrors)
{
    const std::vector<double> x{0.1, 0.7, 0.3};
    EXPECT_EQ(ve::rmse(x, x), 0.0);
    EXPECT_DOUBLE_EQ(ve::rmse(std::vector<double>{0, 0}, std::vector<double>{1, 1}), 1.0);
    EXPECT_THROW((void)ve::rmse(std::vector<double>{1}, std::vector<double>{1, 2}), visage::Error);
    EXPECT_THROW((void)ve::rmse(std::vector<double>{}, std::vector<double>{}), visage::Error);
}

TEST(Pcc, KnownValuesAndUndefined)
{
    const std::vector<double> x{0.1, 0.7, 0.3, 0.9};
    std::vector<double> neg, affine;
    for (double v : x) {
        neg.push_back(-v);
        affine.push_back(3.0 * v + 2.0);
    }
    EXPECT_NEAR(*ve::pcc(x, x), 1.0, 1e-15);
    EXPECT_NEAR(*ve::pcc(x, neg), -1.0, 1e-15);
    EXPECT_NEAR(*ve::pcc(x, affine), 1.0, 1e-15);
    EXPECT_FALSE(ve::pcc(x, std::vector<double>(4, 0.5)).has_value());
    EXPECT_FALSE(ve::pcc(std::vector<double>(4, 0.2), x).has_value());
    EXPECT_THROW((void)ve::pcc(std::vector<double>{1}, std::vector<double>{1}), visage::Error);
}

TEST(Activation, StrictThreshold)
{
    EXPECT_EQ(ve::activation(std::vector<double>{0.5, 0.51, 0.0, 1.0}), (std::vector<std::uint8_t>{0, 1, 0, 1}));
    EXPECT_EQ(ve::activation(std::vector<double>(5, 0.0)), std::vector<std::uint8_t>(5, 0));
}

TEST(HitRatios, HandCountedPairs)
{
    // 10 frames, truth activated on 4
    const std::vector<double> truth{0.9, 0.1, 0.8, 0.2, 0.7, 0.1, 0.6, 0.0, 0.3, 0.4};
    const std::vector<double> five{0.9, 0.6, 0.8, 0.2, 0.7, 0.1, 0.6, 0.0, 0.3, 0.4};
    EXPECT_DOUBLE_EQ(*ve::ahr(truth, truth), 100.0);
    EXPECT_DOUBLE_EQ(*ve::nahr(truth, truth), 100.0);
    EXPECT_DOUBLE_EQ(*ve::ahr(five, truth), 125.0);
    const std::vector<double> all(10, 0.95);
    EXPECT_DOUBLE_EQ(*ve::ahr(all, truth), 250.0);
    EXPECT_DOUBLE_EQ(*ve::nahr(all, truth), 0.0);
    EXPECT_FALSE(ve::ahr(truth, std::vector<double>(10, 0.5)).has_value());
    EXPECT_FALSE(ve::nahr(truth, std::vector<double>(10, 0.9)).has_value());
}

TEST(Metrics, AgreeWithBruteForceOracles)
{
    std::mt19937_64 rng(31);
    const auto agreement = visage::testing::metric_oracle_agreement(rng, 1000);
    EXPECT_LE(agreement.max_diff, 1e-12);
    EXPECT_EQ(agreement.definedness_mismatches, 0u);
    EXPECT_GT(agreement.undefined_cases, 0u);
}

TEST(Metrics, SymmetryBoundsAndAffineInvariance)
{
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(2 + rng() % 50), b(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = u(rng);
            b[i] = u(rng);
        }
        EXPECT_EQ(ve::rmse(a, b), ve::rmse(b, a));
        EXPECT_GT(ve::rmse(a, b), 0.0);
        const double r = *ve::pcc(a, b);
        EXPECT_LE(std::abs(r), 1.0);
        std::vector<double> scaled;
        for (double v : a) {
            scaled.push_back(2.5 * v - 7.0);
        }
        EXPECT_NEAR(*ve::pcc(scaled, b), r, 1e-12);
    }
}

TEST(Score, SelfComparisonAndRotationNA)
{
    const auto corpus = vf::overfit_corpus();
    std::vector<ve::Streams> truths;
    for (const auto& ipu : corpus) {
        truths.push_back(ve::truth_curves(ipu));
    }
    for (auto agg : {ve::Aggregation::concatenated, ve::Aggregation::per_ipu_mean}) {
        const auto report = ve::score(truths, truths, 9, agg);
        ASSERT_EQ(report.streams.size(), 9u);
        for (std::size_t j = 0; j < 9; ++j) {
            const auto& s = report.streams[j];
            EXPECT_EQ(s.rmse, 0.0);
            EXPECT_NEAR(*s.pcc, 1.0, 1e-12);
            if (j < 6) {
                EXPECT_DOUBLE_EQ(*s.ahr, 100.0) << s.stream;
                EXPECT_DOUBLE_EQ(*s.nahr, 100.0) << s.stream;
            } else {
                EXPECT_FALSE(s.ahr.has_value());
                EXPECT_FALSE(s.nahr.has_value());
            }
        }
        const auto j = ve::report_to_json(report);
        EXPECT_EQ(j["streams"][7]["ahr"], "NA");
        const auto csv = ve::report_to_csv(report);
        EXPECT_EQ(csv.substr(0, csv.find('\n')), "stream,RMSE,PCC,AHR,NAHR");
        EXPECT_NE(csv.find("\nRY,0,1,NA,NA\n"), std::string::npos) << csv;
    }
    EXPECT_THROW((void)ve::score(std::vector<ve::Streams>{}, std::vector<ve::Streams>{}), visage::Error);
}

TEST(Score, AggregationModesDiffer)
{
    std::vector<ve::Streams> pred(2), truth(2);
    for (std::size_t j = 0; j < 9; ++j) {
        truth[0][j] = {0.1, 0.9};
        pred[0][j] = {0.1, 0.9};
        truth[1][j] = {0.2, 0.4, 0.6, 0.8};
        pred[1][j] = {0.4, 0.6, 0.8, 1.0};
    }
    const auto concat = ve::score(pred, truth);
    const auto mean = ve::score(pred, truth, 9, ve::Aggregation::per_ipu_mean);
    EXPECT_NEAR(concat.streams[0].rmse, std::sqrt(4 * 0.04 / 6.0), 1e-15);
    EXPECT_NEAR(mean.streams[0].rmse, (0.0 + 0.2) / 2.0, 1e-15);
}

TEST(Evaluate, UsesGenerationAndTagsTheRun)
{
    auto cfg = vm::ModelConfig::toy();
    cfg.ablation = vm::Ablation::text;
    vm::Model model(cfg, 3);
    const auto corpus = vf::overfit_corpus({.ipus = 2});
    const auto report = ve::evaluate(model, corpus, ve::Condition::si);
    EXPECT_EQ(report.condition, ve::Condition::si);
    EXPECT_EQ(report.ablation, vm::Ablation::text);
    EXPECT_EQ(report.ipus, 2u);
    EXPECT_EQ(report.streams[0].frames, corpus[0].frame_count() + corpus[1].frame_count());
    const auto table = ve::report_to_table(report);
    EXPECT_NE(table.find("condition SI, ablation text"), std::string::npos);
    EXPECT_THROW((void)ve::evaluate(model, std::vector<vf::Ipu>{}, ve::Condition::sd), visage::Error);
    EXPECT_THROW((void)ve::parse_condition("xx"), visage::Error);
}
