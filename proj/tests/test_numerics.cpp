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
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <vector>

#include "visage/numerics/gradcheck.hpp"
#include "visage/numerics/ops.hpp"
#include "visage/numerics/weights.hpp"

namespace vn = visage::numerics;

namespace {

vn::Tensor random_param(vn::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> values(vn::shape_numel(shape));
    for (double& v : values) {
        v = dist(rng);
    }
    return vn::Tensor::parameter(std::move(shape), std::move(values));
}

// Central differences computed directly, independent of gradcheck.hpp.
std::vector<double> numeric_gradient(const std::function<double()>& f, vn::Tensor& p, double h = 1e-6)
{
    std::vector<double> out(p.numel());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double up = f();
        values[i] = saved - h;
        const double down = f();
        values[i] = saved;
        out[i] = (up - down) / (2.0 * h);
    }
    return out;
}

// Builds loss = sum(op(...) * probe) and checks every input's gradient.
void expect_gradients_match(const std::function<vn::Tensor()>& build, std::vector<vn::Tensor> inputs,
                            double tol = 1e-4)
{
    for (auto& t : inputs) {
        t.zero_grad();
    }
    vn::backward(build());
    for (auto& t : inputs) {
        std::vector<double> analytic(t.grad().begin(), t.grad().end());
        auto numeric = numeric_gradient(
            [&] {
                vn::NoGradGuard guard;
                return build().item();
            },
            t);
        double max_err = 0.0;
        double scale = 1e-8;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            max_err = std::max(max_err, std::abs(numeric[i] - analytic[i]));
            scale = std::max({scale, std::abs(numeric[i]), std::abs(analytic[i])});
        }
        EXPECT_LT(max_err / scale, tol);
    }
}

vn::Tensor weighted_sum(const vn::Tensor& x, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> w(x.numel());
    for (double& v : w) {
        v = dist(rng);
    }
    return vn::sum(vn::mul(x, vn::Tensor::from(x.shape(), w)));
}

} // namespace

TEST(Softmax, UniformInputGivesUniformProbabilities)
{
    for (double c : {-7.5, 0.0, 3.0, 1e3}) {
        auto y = vn::softmax(vn::Tensor::full({1, 3}, c));
        for (double v : y.data()) {
            EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
        }
    }
}

TEST(Softmax, RowsSumToOneAndIgnoreAdditiveShift)
{
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_param({4, 6}, rng, -10.0, 10.0);
        auto y = vn::softmax(x);
        std::vector<double> shifted(x.data().begin(), x.data().end());
        for (std::size_t i = 0; i < shifted.size(); ++i) {
            shifted[i] += 2.5 * static_cast<double>(i / 6);
        }
        auto ys = vn::softmax(vn::Tensor::from({4, 6}, shifted));
        for (std::size_t r = 0; r < 4; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < 6; ++c) {
                total += y.at(r, c);
                EXPECT_NEAR(y.at(r, c), ys.at(r, c), 1e-12);
            }
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
    }
}

TEST(Softmax, NegativeInfinityGetsExactlyZero)
{
    const double inf = std::numeric_limits<double>::infinity();
    auto y = vn::softmax(vn::Tensor::from({1, 3}, {0.3, -inf, 1.2}));
    EXPECT_EQ(y[1], 0.0);
    EXPECT_NEAR(y[0] + y[2], 1.0, 1e-15);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance)
{
    std::mt19937_64 rng(3);
    auto x = random_param({5, 16}, rng, -4.0, 4.0);
    auto y = vn::layer_norm(x, vn::Tensor::full({16}, 1.0), vn::Tensor::zeros({16}), 0.0);
    for (std::size_t r = 0; r < 5; ++r) {
        double mean = 0.0;
        double sq = 0.0;
        for (std::size_t c = 0; c < 16; ++c) {
            mean += y.at(r, c);
            sq += y.at(r, c) * y.at(r, c);
        }
        EXPECT_NEAR(mean / 16.0, 0.0, 1e-12);
        EXPECT_NEAR(sq / 16.0, 1.0, 1e-12);
    }
}

TEST(Conv1d, CenteredIdentityKernelCopiesInput)
{
    auto x = vn::Tensor::from({5, 1}, {1.0, -2.0, 3.5, 0.25, 4.0});
    auto w = vn::Tensor::from({1, 1, 3}, {0.0, 1.0, 0.0});
    auto y = vn::conv1d(x, w, vn::Tensor::zeros({1}));
    ASSERT_EQ(y.shape(), (vn::Shape{5, 1}));
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(y[i], x[i]);
    }
}

TEST(Conv1d, HandEvaluatedSmallCase)
{
    // Two input channels, kernel [1,2,3] on channel 0 and [0,0,1] on channel 1.
    auto x = vn::Tensor::from({3, 2}, {1.0, 10.0, 2.0, 20.0, 3.0, 30.0});
    auto w = vn::Tensor::from({1, 2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 1.0});
    auto y = vn::conv1d(x, w, vn::Tensor::from({1}, {0.5}));
    // t=0: 0*1 + 1*2 + 2*3 + 20 = 28.5 ; t=1: 1+4+9+30 = 44.5 ; t=2: 2+6+0+0 = 8.5
    EXPECT_DOUBLE_EQ(y[0], 28.5);
    EXPECT_DOUBLE_EQ(y[1], 44.5);
    EXPECT_DOUBLE_EQ(y[2], 8.5);
}

TEST(Conv1d, CausalOutputIgnoresFuture)
{
    std::mt19937_64 rng(11);
    auto x = random_param({6, 2}, rng);
    auto w = random_param({3, 2, 3}, rng);
    auto b = random_param({3}, rng);
    auto y = vn::conv1d(x, w, b, vn::Padding::causal);
    std::vector<double> changed(x.data().begin(), x.data().end());
    changed[4 * 2] += 5.0;
    auto y2 = vn::conv1d(vn::Tensor::from({6, 2}, changed), w, b, vn::Padding::causal);
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t o = 0; o < 3; ++o) {
            EXPECT_EQ(y.at(t, o), y2.at(t, o));
        }
    }
    EXPECT_NE(y.at(4, 0), y2.at(4, 0));
}

TEST(Conv1d, SegmentsMatchSeparateCalls)
{
    std::mt19937_64 rng(5);
    auto x = random_param({7, 2}, rng);
    auto w = random_param({2, 2, 3}, rng);
    auto b = random_param({2}, rng);
    const std::vector<std::size_t> seg{3, 4};
    auto joint = vn::conv1d(x, w, b, vn::Padding::same, seg);
    auto first = vn::conv1d(vn::slice_rows(x, 0, 3), w, b);
    auto second = vn::conv1d(vn::slice_rows(x, 3, 7), w, b);
    for (std::size_t i = 0; i < first.numel(); ++i) {
        EXPECT_DOUBLE_EQ(joint[i], first[i]);
    }
    for (std::size_t i = 0; i < second.numel(); ++i) {
        EXPECT_DOUBLE_EQ(joint[first.numel() + i], second[i]);
    }
}

TEST(Backward, SumGivesOnes)
{
    auto x = vn::Tensor::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
    vn::backward(vn::sum(x));
    for (double g : x.grad()) {
        EXPECT_EQ(g, 1.0);
    }
}

TEST(Backward, SumOfSquaresGivesTwiceInput)
{
    auto x = vn::Tensor::parameter({4}, {-1.5, 0.0, 2.0, 3.25});
    vn::backward(vn::sum(vn::mul(x, x)));
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(x.grad()[i], 2.0 * x[i]);
    }
}

TEST(Backward, SecondCallOnSameGraphThrows)
{
    auto x = vn::Tensor::parameter({2}, {1.0, 2.0});
    auto loss = vn::sum(vn::scale(x, 3.0));
    vn::backward(loss);
    EXPECT_THROW(vn::backward(loss), visage::Error);
}

TEST(Backward, NonScalarLossThrows)
{
    auto x = vn::Tensor::parameter({2}, {1.0, 2.0});
    EXPECT_THROW(vn::backward(vn::scale(x, 2.0)), visage::ShapeError);
}

TEST(Backward, DisconnectedLeafKeepsZeroGradient)
{
    auto x = vn::Tensor::parameter({2}, {1.0, 2.0});
    auto unused = vn::Tensor::parameter({3}, {1.0, 2.0, 3.0});
    vn::backward(vn::sum(x));
    ASSERT_EQ(unused.grad().size(), 3u);
    for (double g : unused.grad()) {
        EXPECT_EQ(g, 0.0);
    }
}

TEST(Backward, SharedSubexpressionAccumulates)
{
    auto x = vn::Tensor::parameter({1}, {3.0});
    auto y = vn::mul(x, x);
    vn::backward(vn::sum(vn::add(y, y)));
    EXPECT_EQ(x.grad()[0], 12.0);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes)
{
    auto a = vn::Tensor::zeros({2, 3});
    auto b = vn::Tensor::zeros({2, 3});
    try {
        (void)vn::matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const visage::ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    }
}

TEST(Ops, EmbeddingIndexOutOfRangeThrows)
{
    auto table = vn::Tensor::zeros({4, 2});
    std::vector<int> idx{0, 4};
    EXPECT_THROW((void)vn::embedding_lookup(table, idx), visage::Error);
}

TEST(Ops, DropoutIdentityAtInferenceAndUnbiasedAtTrain)
{
    std::mt19937_64 rng(1);
    auto x = vn::Tensor::full({100, 100}, 1.0);
    auto same = vn::dropout(x, 0.1, false, rng);
    EXPECT_EQ(same.node(), x.node());
    auto dropped = vn::dropout(x, 0.1, true, rng);
    double mean = 0.0;
    std::size_t zeros = 0;
    for (double v : dropped.data()) {
        mean += v;
        zeros += v == 0.0 ? 1 : 0;
    }
    EXPECT_NEAR(mean / 1e4, 1.0, 0.02);
    EXPECT_NEAR(static_cast<double>(zeros) / 1e4, 0.1, 0.01);
}

TEST(Ops, CrossEntropyOfUniformLogitsIsLogClasses)
{
    auto logits = vn::Tensor::zeros({3, 256});
    std::vector<int> targets{0, 17, 255};
    std::vector<std::uint8_t> ignore{0, 0, 0};
    EXPECT_NEAR(vn::cross_entropy(logits, targets, ignore).item(), std::log(256.0), 1e-12);
}

TEST(Ops, CrossEntropyAllIgnoredThrows)
{
    auto logits = vn::Tensor::zeros({2, 4});
    std::vector<int> targets{0, 1};
    std::vector<std::uint8_t> ignore{1, 1};
    EXPECT_THROW((void)vn::cross_entropy(logits, targets, ignore), visage::Error);
}

// Every op's backward rule against central differences on random shapes.
TEST(GradientProperty, EveryOpMatchesFiniteDifferences)
{
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> dim(1, 5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t m = dim(rng);
        const std::size_t k = dim(rng);
        const std::size_t n = dim(rng) + 1;
        std::mt19937_64 probe(static_cast<std::uint64_t>(trial));
        auto a = random_param({m, k}, rng);
        auto b = random_param({k, n}, rng);
        auto c = random_param({m, n}, rng);
        auto bias = random_param({n}, rng);
        auto gain = random_param({n}, rng, 0.5, 1.5);

        auto seeded = [&](auto fn) {
            return [&, fn] {
                std::mt19937_64 r(static_cast<std::uint64_t>(trial));
                return weighted_sum(fn(), r);
            };
        };
        expect_gradients_match(seeded([&] { return vn::matmul(a, b); }), {a, b});
        expect_gradients_match(seeded([&] { return vn::transpose(a); }), {a});
        expect_gradients_match(seeded([&] { return vn::add(c, vn::mul(c, c)); }), {c});
        expect_gradients_match(seeded([&] { return vn::add_bias(c, bias); }), {c, bias});
        expect_gradients_match(seeded([&] { return vn::scale(c, -1.7); }), {c});
        expect_gradients_match(seeded([&] { return vn::concat({c, vn::matmul(a, b)}, 0); }), {a, b, c});
        expect_gradients_match(seeded([&] { return vn::concat({c, c}, 1); }), {c});
        expect_gradients_match(seeded([&] { return vn::slice_cols(c, 1, n); }), {c});
        expect_gradients_match(seeded([&] { return vn::relu(vn::add_bias(c, bias)); }), {c, bias});
        expect_gradients_match(seeded([&] { return vn::softmax(c, 1); }), {c});
        expect_gradients_match(seeded([&] { return vn::softmax(c, 0); }), {c});
        expect_gradients_match(seeded([&] { return vn::layer_norm(c, gain, bias); }), {c, gain, bias});

        std::vector<std::uint8_t> mask(m * n, 0);
        for (std::size_t i = 0; i < m; ++i) {
            mask[i * n + n - 1] = 1;
        }
        expect_gradients_match(seeded([&] { return vn::softmax(vn::masked_fill(c, mask, -1e300)); }), {c});

        auto table = random_param({6, n}, rng);
        std::vector<int> idx{0, 5, 2, 5};
        expect_gradients_match(seeded([&] { return vn::embedding_lookup(table, idx); }), {table});

        auto x = random_param({m + 4, 3}, rng);
        auto w = random_param({n, 3, 3}, rng);
        const std::vector<std::size_t> segs{2, m + 2};
        expect_gradients_match(seeded([&] { return vn::conv1d(x, w, bias, vn::Padding::same, segs); }), {x, w, bias});
        expect_gradients_match(seeded([&] { return vn::conv1d(x, w, bias, vn::Padding::causal); }), {x, w, bias});
        const std::vector<std::size_t> pool{0, m + 1, 3};
        expect_gradients_match(seeded([&] { return vn::segment_mean(x, pool); }), {x});

        std::vector<int> targets(m);
        std::vector<std::uint8_t> ignore(m, 0);
        for (std::size_t i = 0; i < m; ++i) {
            targets[i] = static_cast<int>((i * 7) % n);
        }
        ignore[0] = m > 1 ? 1 : 0;
        expect_gradients_match([&] { return vn::cross_entropy(c, targets, ignore); }, {c});
        expect_gradients_match([&] { return vn::cross_entropy(c, targets, ignore, vn::Reduction::sum); }, {c});
        (void)probe;
    }
}

TEST(GradCheck, LinearFunctionIsExactToNoiseFloor)
{
    auto w = vn::Tensor::parameter({3}, {0.5, -1.0, 2.0});
    auto x = vn::Tensor::from({3}, {1.0, 2.0, 3.0});
    auto report = vn::finite_difference_check([&] { return vn::sum(vn::mul(w, x)); }, {{"w", w}});
    ASSERT_EQ(report.entries.size(), 1u);
    EXPECT_LT(report.entries[0].rel_error, 1e-9);
    EXPECT_TRUE(report.ok());
}

TEST(GradCheck, FlagsParametersAboveTolerance)
{
    auto w = vn::Tensor::parameter({2}, {0.3, 0.7});
    auto report = vn::finite_difference_check([&] { return vn::sum(vn::softmax(vn::mul(w, w))); },
                                              {{"w", w}}, 1e-3, 0.0);
    EXPECT_FALSE(report.ok());
    ASSERT_EQ(report.flagged.size(), 1u);
    EXPECT_EQ(report.flagged[0], "w");
}

TEST(Determinism, RepeatedForwardBackwardIsBitIdentical)
{
    auto run = [] {
        std::mt19937_64 rng(99);
        auto a = random_param({4, 5}, rng);
        auto b = random_param({5, 3}, rng);
        auto y = vn::dropout(vn::softmax(vn::matmul(a, b)), 0.3, true, rng);
        vn::backward(vn::sum(vn::mul(y, y)));
        std::vector<double> out(y.data().begin(), y.data().end());
        out.insert(out.end(), a.grad().begin(), a.grad().end());
        out.insert(out.end(), b.grad().begin(), b.grad().end());
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST(Weights, RoundTripPreservesNamesShapesValuesAndMeta)
{
    const auto path = std::filesystem::temp_directory_path() / "visage_weights_test.bin";
    vn::WeightFile file;
    file.meta["step"] = "42";
    file.tensors.push_back({"enc.w", vn::Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6.5})});
    file.tensors.push_back({"enc.b", vn::Tensor::from({3}, {-0.1, 0.0, 1e-300})});
    vn::save_weights(path, file);
    auto loaded = vn::load_weights(path);
    EXPECT_EQ(loaded.meta.at("step"), "42");
    ASSERT_EQ(loaded.tensors.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(loaded.tensors[i].name, file.tensors[i].name);
        EXPECT_EQ(loaded.tensors[i].tensor.shape(), file.tensors[i].tensor.shape());
        EXPECT_TRUE(std::equal(loaded.tensors[i].tensor.data().begin(), loaded.tensors[i].tensor.data().end(),
                               file.tensors[i].tensor.data().begin()));
    }
    std::filesystem::remove(path);
}

TEST(Weights, RejectsForeignFiles)
{
    const auto path = std::filesystem::temp_directory_path() / "visage_not_weights.bin";
    std::ofstream(path) << "hello world";
    EXPECT_THROW((void)vn::load_weights(path), visage::Error);
    std::filesystem::remove(path);
}
