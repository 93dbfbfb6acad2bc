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
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "visage/features/synthetic.hpp"
#include "visage/model/checkpoint.hpp"
#include "visage/model/model.hpp"

namespace vm = visage::model;
namespace vf = visage::features;
using visage::numerics::Tensor;

namespace {

vm::ModelConfig small_config()
{
    auto c = vm::ModelConfig::tiny();
    c.n_heads = 2;
    return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

void expect_rows_are_distributions(const vm::AttentionRecord& rec)
{
    for (std::size_t r = 0; r < rec.rows; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < rec.cols; ++c) {
            const double p = rec.probs[r * rec.cols + c];
            EXPECT_GE(p, 0.0);
            if (rec.masked[r * rec.cols + c] != 0) {
                EXPECT_EQ(p, 0.0) << rec.block;
            }
            total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-12) << rec.block;
    }
}

} // namespace

TEST(PositionalEncoding, KnownValues)
{
    auto pe = vm::positional_encoding(50, 16);
    for (std::size_t c = 0; c < 16; ++c) {
        EXPECT_EQ(pe.at(0, c), c % 2 == 0 ? 0.0 : 1.0);
    }
    EXPECT_NEAR(pe.at(1, 0), 0.841471, 1e-6);
    EXPECT_DOUBLE_EQ(pe.at(1, 0), std::sin(1.0));
    // column 3 uses the same frequency as column 2: 10000^(2/16)
    EXPECT_DOUBLE_EQ(pe.at(7, 3), std::cos(7.0 / std::pow(10000.0, 2.0 / 16.0)));
    for (double v : pe.data()) {
        EXPECT_LE(std::abs(v), 1.0);
    }
    EXPECT_THROW((void)vm::positional_encoding(0, 4), visage::Error);
}

TEST(F0Encode, ShapeAndPaddingInvariance)
{
    const auto cfg = small_config();
    vm::Model model(cfg, 1);
    std::mt19937_64 rng(2);
    auto ipu = visage::testing::random_ipu(cfg, rng, 3, 5);
    ipu.words[1].f0_length = 3;
    const Tensor base = model.f0_encode(ipu);
    EXPECT_EQ(base.shape(), (visage::numerics::Shape{3, cfg.d_model}));
    // garbage beyond each word's true length must not matter
    for (auto& w : ipu.words) {
        for (std::size_t k = w.f0_length; k < w.f0.size(); ++k) {
            w.f0[k] = 42.0 + static_cast<double>(k);
        }
    }
    EXPECT_EQ(max_abs_diff(base, model.f0_encode(ipu)), 0.0);
}

TEST(F0Encode, EmptyWordIsZeroAndZerosAreDeterministic)
{
    const auto cfg = small_config();
    vm::Model model(cfg, 1);
    std::mt19937_64 rng(3);
    auto ipu = visage::testing::random_ipu(cfg, rng, 2, 4);
    ipu.words[1].f0_length = 0;
    const Tensor out = model.f0_encode(ipu);
    for (std::size_t c = 0; c < cfg.d_model; ++c) {
        EXPECT_EQ(out.at(1, c), 0.0);
    }
    std::fill(ipu.words[0].f0.begin(), ipu.words[0].f0.end(), 0.0);
    const Tensor a = model.f0_encode(ipu);
    const Tensor b = model.f0_encode(ipu);
    EXPECT_EQ(max_abs_diff(a, b), 0.0);
    // only biases reach the output; the conv biases start at zero
    const Tensor proj_bias = model.params().get("f0.proj.b");
    for (std::size_t c = 0; c < cfg.d_model; ++c) {
        EXPECT_EQ(a.at(0, c), proj_bias[c]);
    }
}

TEST(Encoder, ShapeMaskingAndSingleWord)
{
    const auto cfg = small_config();
    vm::Model model(cfg, 4);
    std::mt19937_64 rng(5);
    auto ipu = vf::pad_words(visage::testing::random_ipu(cfg, rng, 3, 4), 5, cfg.max_f0_len);
    vm::Trace trace;
    vm::ForwardContext ctx;
    ctx.trace = &trace;
    auto mem = model.encode(ipu, ctx);
    EXPECT_EQ(mem.z.shape(), (visage::numerics::Shape{5, cfg.d_model}));
    EXPECT_EQ(mem.fused.shape(), mem.z.shape());
    ASSERT_FALSE(trace.attention.empty());
    for (const auto& rec : trace.attention) {
        expect_rows_are_distributions(rec);
        for (std::size_t r = 0; r < rec.rows; ++r) {
            EXPECT_EQ(rec.probs[r * rec.cols + 3], 0.0);
            EXPECT_EQ(rec.probs[r * rec.cols + 4], 0.0);
        }
    }

    auto single = visage::testing::random_ipu(cfg, rng, 1, 4);
    trace.attention.clear();
    (void)model.encode(single, ctx);
    for (const auto& rec : trace.attention) {
        if (rec.block.starts_with("encoder")) {
            EXPECT_EQ(rec.probs, std::vector<double>{1.0});
        }
    }
}

TEST(Encoder, AllPaddingIsAnError)
{
    const auto cfg = small_config();
    vm::Model model(cfg, 4);
    std::vector<std::uint8_t> padding{1, 1};
    try {
        (void)model.encoder_forward(Tensor::zeros({2, cfg.d_model}), padding);
        FAIL();
    } catch (const visage::Error& e) {
        EXPECT_NE(std::string(e.what()).find("empty IPU"), std::string::npos);
    }
}

TEST(Cmam, BothModalitiesAreLive)
{
    const auto cfg = small_config();
    vm::Model model(cfg, 6);
    std::mt19937_64 rng(7);
    const auto ipu = visage::testing::random_ipu(cfg, rng, 3, 4);
    const std::vector<std::uint8_t> padding(3, 0);
    std::vector<double> emb;
    for (const auto& w : ipu.words) {
        emb.insert(emb.end(), w.embedding.begin(), w.embedding.end());
    }
    const Tensor text = Tensor::from({3, cfg.d_emb}, emb);
    const auto mem = model.encode(ipu);
    const Tensor fused = model.cmam_forward(text, mem.z, padding);
    EXPECT_EQ(fused.shape(), (visage::numerics::Shape{3, cfg.d_model}));
    EXPECT_EQ(max_abs_diff(fused, mem.fused), 0.0);
    EXPECT_GT(max_abs_diff(fused, model.cmam_forward(text, Tensor::zeros({3, cfg.d_model}), padding)), 1e-6);
    EXPECT_GT(max_abs_diff(fused, model.cmam_forward(Tensor::zeros({3, cfg.d_emb}), mem.z, padding)), 1e-6);
    EXPECT_THROW((void)model.cmam_forward(Tensor::zeros({2, cfg.d_emb}), mem.z, padding), visage::ShapeError);
}

TEST(Decoder, CausalPerturbation)
{
    const auto cfg = small_config();
    vm::Model model(cfg, 8);
    std::mt19937_64 rng(9);
    const auto ipu = visage::testing::random_ipu(cfg, rng, 2, 6);
    const auto mem = model.encode(ipu);
    std::vector<int> tokens{cfg.bos(), 1, 5, 2, 7, 3};
    const Tensor base = model.decoder_forward(0, tokens, mem);
    EXPECT_EQ(base.shape(), (visage::numerics::Shape{6, cfg.d_model}));
    for (std::size_t p = 1; p < tokens.size(); ++p) {
        auto changed = tokens;
        changed[p] = (changed[p] + 3) % cfg.n_bins;
        const Tensor out = model.decoder_forward(0, changed, mem);
        for (std::size_t r = 0; r < p; ++r) {
            for (std::size_t c = 0; c < cfg.d_model; ++c) {
                EXPECT_EQ(out.at(r, c), base.at(r, c));
            }
        }
        EXPECT_GT(std::abs(out.at(p, 0) - base.at(p, 0)) + std::abs(out.at(p, 1) - base.at(p, 1)), 0.0);
    }
    tokens[2] = cfg.pad() + 1;
    EXPECT_THROW((void)model.decoder_forward(0, tokens, mem), visage::Error);
}

TEST(CausalMask, Definition)
{
    const auto m = vm::causal_mask(4);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t k = 0; k < 4; ++k) {
            EXPECT_EQ(m[i * 4 + k] == 0, k <= i);
        }
    }
}

TEST(AurDecoder, ProbabilitiesShapesAndAblationProbe)
{
    const auto cfg = small_config();
    vm::Model model(cfg, 10);
    std::mt19937_64 rng(11);
    const auto ipu = visage::testing::random_ipu(cfg, rng, 2, 5);
    const auto tf = model.forward_teacher_forced(ipu);
    ASSERT_EQ(tf.logits.size(), 9u);
    for (const auto& l : tf.logits) {
        EXPECT_EQ(l.shape(), (visage::numerics::Shape{5, static_cast<std::size_t>(cfg.n_bins)}));
        const Tensor p = visage::numerics::softmax(l, 1);
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < p.cols(); ++c) {
                total += p.at(r, c);
            }
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
    }

    auto ablated_cfg = cfg;
    ablated_cfg.ablation = vm::Ablation::aur_decoder;
    vm::Model ablated(ablated_cfg, 10);
    vm::copy_shared_params(model.params(), ablated.params());
    const auto tf2 = ablated.forward_teacher_forced(ipu);
    EXPECT_GT(max_abs_diff(tf.logits[0], tf2.logits[0]), 1e-6);

    std::vector<Tensor> uneven{Tensor::zeros({3, cfg.d_model}), Tensor::zeros({4, cfg.d_model})};
    uneven.resize(9, Tensor::zeros({3, cfg.d_model}));
    EXPECT_THROW((void)model.aur_decode(uneven), visage::ShapeError);
}

TEST(TeacherForced, ShiftedInputsAndDeterminism)
{
    const auto cfg = small_config();
    vm::Model model(cfg, 12);
    const std::vector<int> y{3, 1, 4, 1};
    const std::vector<std::uint8_t> pad{0, 0, 1, 1};
    EXPECT_EQ(model.shifted_inputs(y, pad), (std::vector<int>{cfg.bos(), 3, 1, cfg.pad()}));

    std::mt19937_64 rng(13);
    const auto ipu = visage::testing::random_ipu(cfg, rng, 2, 6);
    const auto a = model.forward_teacher_forced(ipu);
    const auto b = model.forward_teacher_forced(ipu);
    for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_EQ(max_abs_diff(a.logits[j], b.logits[j]), 0.0);
    }
    auto empty = ipu;
    for (auto& s : empty.targets) {
        s.clear();
    }
    empty.frame_padding.clear();
    EXPECT_THROW((void)model.forward_teacher_forced(empty), visage::Error);
}

TEST(TeacherForced, PaddingIsTransparent)
{
    const auto cfg = small_config();
    vm::Model model(cfg, 14);
    std::mt19937_64 rng(15);
    const auto ipu = visage::testing::random_ipu(cfg, rng, 3, 5);
    const auto padded = vf::pad_words(vf::pad_frames(ipu, 8), 5, cfg.max_f0_len);
    const auto a = model.forward_teacher_forced(ipu);
    const auto b = model.forward_teacher_forced(padded);
    for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_LE(max_abs_diff(a.logits[j], visage::numerics::slice_rows(b.logits[j], 0, 5)), 1e-12);
    }
    EXPECT_NEAR(model.loss(ipu).item(), model.loss(padded).item(), 1e-12);
}

TEST(TeacherForced, UntrainedLossNearUniform)
{
    vm::Model model(vm::ModelConfig{}, 2024);
    std::mt19937_64 rng(16);
    const auto ipu = visage::testing::random_ipu(model.config(), rng, 4, 12);
    EXPECT_NEAR(model.loss(ipu).item(), std::log(256.0), 0.3);
}

TEST(Generate, LengthsAndNoTargetLeakage)
{
    const auto cfg = small_config();
    vm::Model model(cfg, 17);
    std::mt19937_64 rng(18);
    const auto ipu = visage::testing::random_ipu(cfg, rng, 2, 6);
    const auto gen = model.generate(ipu, 6);
    ASSERT_EQ(gen.bins.size(), 9u);
    for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_EQ(gen.bins[j].size(), 6u);
        EXPECT_EQ(gen.curves[j].size(), 6u);
        for (int b : gen.bins[j]) {
            EXPECT_GE(b, 0);
            EXPECT_LT(b, cfg.n_bins);
        }
    }
    auto stripped = ipu;
    for (auto& s : stripped.targets) {
        s.clear();
    }
    stripped.frame_padding.clear();
    EXPECT_EQ(model.generate(stripped, 6).bins, gen.bins);
    EXPECT_THROW((void)model.generate(ipu, cfg.max_out_len + 1), visage::Error);
}

TEST(Generate, GreedyMatchesTeacherForcingOnItsOwnOutput)
{
    // feeding the greedy output back as targets must reproduce each argmax
    const auto cfg = small_config();
    vm::Model model(cfg, 19);
    std::mt19937_64 rng(20);
    auto ipu = visage::testing::random_ipu(cfg, rng, 2, 5);
    const auto gen = model.generate(ipu, 5);
    for (std::size_t j = 0; j < 9; ++j) {
        ipu.targets[j] = gen.curves[j];
    }
    const auto tf = model.forward_teacher_forced(ipu);
    for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_EQ(visage::numerics::argmax_rows(tf.logits[j]), gen.bins[j]);
    }
}

TEST(ParamCount, TinyConfigHandCount)
{
    vm::ModelConfig c;
    c.d_model = 8;
    c.n_enc_layers = 1;
    c.n_dec_layers = 1;
    c.n_heads = 1;
    c.d_ff = 16;
    c.n_bins = 4;
    c.conv_filters = 4;
    c.d_emb = 6;
    // F0 convs 1->4, 4->4, 4->4 (k=3) and a 4->8 projection
    const std::size_t f0 = (12 + 4) + (48 + 4) + (48 + 4) + (32 + 8);
    const std::size_t text = 6 * 8 + 8;
    const std::size_t mha = 4 * (64 + 8);
    const std::size_t ffn = (8 * 16 + 16) + (16 * 8 + 8);
    const std::size_t enc = mha + ffn + 2 * 16;
    const std::size_t dec = 2 * mha + ffn + 3 * 16;
    const std::size_t decoders = 9 * (6 * 8 + dec); // vocab = 4 bins + BOS + PAD
    const std::size_t aur = (72 * 4 * 3 + 4) + 2 * (48 + 4) + 9 * (4 * 4 + 4);
    const std::size_t expected = f0 + text + enc + dec + decoders + aur;
    EXPECT_EQ(expected, 11440u);
    EXPECT_EQ(vm::Model(c, 1).param_count(), expected);
    EXPECT_EQ(vm::Model(c, 99).param_count(), expected);
}

TEST(ParamCount, DefaultConfigAndGrouping)
{
    vm::ModelConfig c;
    const std::size_t f0 = 256 + 2 * 12352 + 4160;
    const std::size_t encoder = 4 * 68560;
    const std::size_t text = 768 * 64 + 64;
    const std::size_t cmam = 4 * 85328;
    const std::size_t one_decoder = 258 * 64 + 4 * 85328;
    const std::size_t aur = (576 * 64 * 3 + 64) + 2 * 12352 + 9 * (64 * 256 + 256);
    const std::size_t expected = f0 + encoder + text + cmam + 9 * one_decoder + aur;
    EXPECT_EQ(expected, 4199424u);
    EXPECT_EQ(vm::Model(c).param_count(), expected);
    c.decoder_of_stream = {0, 0, 0, 0, 0, 0, 1, 1, 1};
    EXPECT_EQ(c.n_decoders(), 2u);
    EXPECT_EQ(vm::Model(c).param_count(), expected - 7 * one_decoder);
    c.decoder_of_stream = {0, 0, 0, 0, 0, 0, 2, 2, 2};
    EXPECT_THROW(c.validate(), visage::Error);
}

TEST(Ablation, RemovesTheBlockParameters)
{
    const auto base = vm::ModelConfig::toy();
    const std::size_t full = vm::Model(base).param_count();
    auto with = [&](vm::Ablation a) {
        auto c = base;
        c.ablation = a;
        return vm::Model(c);
    };
    EXPECT_FALSE(with(vm::Ablation::speech).params().contains("f0.proj.w"));
    EXPECT_FALSE(with(vm::Ablation::text).params().contains("text_proj.w"));
    EXPECT_TRUE(with(vm::Ablation::text).params().contains("cmam.0.cross.q.w"));
    EXPECT_FALSE(with(vm::Ablation::cmam).params().contains("cmam.0.cross.q.w"));
    EXPECT_FALSE(with(vm::Ablation::aur_decoder).params().contains("aur.conv0.w"));
    for (auto a : {vm::Ablation::speech, vm::Ablation::text, vm::Ablation::cmam, vm::Ablation::aur_decoder}) {
        EXPECT_LT(with(a).param_count(), full) << vm::ablation_name(a);
        std::mt19937_64 rng(21);
        const auto ipu = visage::testing::random_ipu(base, rng, 3, 6);
        const double loss = with(a).loss(ipu).item();
        EXPECT_TRUE(std::isfinite(loss));
    }
}

TEST(Checkpoint, RoundTripPreservesOutputs)
{
    const auto dir = visage::testing::scratch_dir("checkpoint");
    const auto cfg = small_config();
    vm::Model model(cfg, 22);
    vm::save_model(dir / "m.vsgw", model);
    const vm::Model loaded = vm::load_model(dir / "m.vsgw");
    EXPECT_EQ(loaded.param_count(), model.param_count());
    std::mt19937_64 rng(23);
    const auto ipu = visage::testing::random_ipu(cfg, rng, 2, 4);
    EXPECT_EQ(loaded.loss(ipu).item(), model.loss(ipu).item());

    vm::write_model_card(dir / "card.json", model);
    const auto card = vm::json::parse(std::ifstream(dir / "card.json"));
    EXPECT_EQ(card["param_count"].get<std::size_t>(), model.param_count());
    EXPECT_EQ(card["config"]["d_model"].get<std::size_t>(), cfg.d_model);

    auto file = vm::to_weight_file(model);
    file.tensors.push_back({"stray", Tensor::zeros({1})});
    EXPECT_THROW((void)vm::from_weight_file(file), visage::Error);
}

TEST(Config, JsonRejectsUnknownKeys)
{
    const auto c = vm::config_from_json(vm::json::parse(R"({"d_model": 32, "ablation": "cmam"})"));
    EXPECT_EQ(c.d_model, 32u);
    EXPECT_EQ(c.ablation, vm::Ablation::cmam);
    EXPECT_THROW((void)vm::config_from_json(vm::json::parse(R"({"d_modle": 32})")), visage::Error);
    EXPECT_THROW((void)vm::config_from_json(vm::json::parse(R"({"d_model": 30, "n_heads": 4})")), visage::Error);
    const auto back = vm::config_from_json(vm::config_to_json(vm::ModelConfig::toy()));
    EXPECT_EQ(vm::config_to_json(back), vm::config_to_json(vm::ModelConfig::toy()));
}
