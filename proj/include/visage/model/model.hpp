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

// The speech+text to face/head motion network.
//
//   F0 per word --conv x3, mean-pool, linear--> word vectors --encoder--> Z
//   word embeddings --linear--> text --CMAM(text queries, Z keys)--> fused
//   per stream: previous bins --decoder(causal, cross to fused)--> latents
//   all latents --concat, causal conv x3, per-stream dense--> bin logits

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "visage/error.hpp"
#include "visage/features/features.hpp"
#include "visage/model/config.hpp"
#include "visage/model/layers.hpp"
#include "visage/numerics/ops.hpp"

namespace visage::model {

namespace ops = numerics;

struct EncoderMemory {
    Tensor z;                                ///< encoder output [n_words x d_model]
    Tensor fused;                            ///< CMAM output, or Z when that block is ablated
    std::vector<std::uint8_t> word_padding;  ///< 1 marks a padding word
};

/// Teacher-forced outputs for one IPU.
struct TeacherForced {
    std::vector<Tensor> logits;             ///< per stream [N x n_bins]
    std::vector<std::vector<int>> targets;  ///< per stream quantized targets
    std::vector<std::uint8_t> ignore;       ///< per frame, 1 for padding
    std::size_t valid_tokens() const
    {
        std::size_t n = 0;
        for (auto b : ignore) {
            n += b == 0 ? 1 : 0;
        }
        return n * logits.size();
    }
};

struct GenerateOptions {
    bool sample = false;        ///< draw from the softmax instead of argmax
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

struct Generation {
    std::vector<std::vector<int>> bins;      ///< per stream
    std::vector<std::vector<double>> curves; ///< dequantized, in [0, 1]
};

/// Frames to generate for an IPU: its span at the target frame rate, capped.
inline std::size_t output_length(const features::Ipu& ipu, std::size_t max_out_len)
{
    const auto frames = features::frames_between(ipu.start_s(), ipu.end_s(), 1.0 / features::kTargetFps).size();
    return std::min(frames, max_out_len);
}

class Model {
public:
    explicit Model(ModelConfig config, std::uint64_t seed = 0) : config_(std::move(config)), params_(seed)
    {
        config_.validate();
        build();
    }

    const ModelConfig& config() const { return config_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }
    std::size_t param_count() const { return params_.scalar_count(); }

    features::QuantizerSpec quantizer() const { return {0.0, 1.0, config_.n_bins}; }

    /// One vector per word from its unpadded F0 frames; words without frames
    /// map to a zero row.
    Tensor f0_encode(const features::Ipu& ipu) const
    {
        const std::size_t n = ipu.words.size();
        const std::size_t d = config_.d_model;
        std::vector<double> frames;
        std::vector<std::size_t> lengths;
        std::vector<double> keep(n * d, 0.0);
        for (std::size_t w = 0; w < n; ++w) {
            const auto& word = ipu.words[w];
            const std::size_t len = word.is_padding ? 0 : std::min(word.f0_length, config_.max_f0_len);
            if (len > word.f0.size()) {
                throw Error("f0_encode: word \"" + word.text + "\" has " + std::to_string(word.f0.size())
                            + " F0 values but length " + std::to_string(len));
            }
            frames.insert(frames.end(), word.f0.begin(), word.f0.begin() + static_cast<std::ptrdiff_t>(len));
            lengths.push_back(len);
            if (len > 0) {
                std::fill(keep.begin() + static_cast<std::ptrdiff_t>(w * d),
                          keep.begin() + static_cast<std::ptrdiff_t>((w + 1) * d), 1.0);
            }
        }
        if (frames.empty()) {
            return Tensor::zeros({n, d});
        }
        const std::size_t total = frames.size();
        Tensor x = Tensor::from({total, 1}, std::move(frames));
        for (const auto& conv : f0_convs_) {
            x = ops::relu(conv(x, ops::Padding::same, lengths));
        }
        const Tensor pooled = ops::segment_mean(x, lengths);
        return ops::mul(f0_proj_(pooled), Tensor::from({n, d}, std::move(keep)));
    }

    /// Self-attention stack over word vectors; padding words are never keys.
    Tensor encoder_forward(const Tensor& word_vectors, std::span<const std::uint8_t> word_padding,
                           const ForwardContext& ctx = {}) const
    {
        const std::size_t n = word_vectors.rows();
        require_words(n, word_padding, "encoder");
        Tensor x = maybe_dropout(ops::add(word_vectors, positional_encoding(n, config_.d_model)), config_.dropout, ctx);
        const AttentionMask mask = padding_mask(n, word_padding);
        for (std::size_t l = 0; l < encoder_.size(); ++l) {
            const auto& layer = encoder_[l];
            x = layer.ln1(ops::add(x, sublayer(layer.self(x, x, mask, ctx, "encoder." + std::to_string(l) + ".self"), ctx)));
            x = layer.ln2(ops::add(x, sublayer(layer.ff(x), ctx)));
        }
        return x;
    }

    /// Text-led fusion: queries come from the projected word embeddings,
    /// keys and values from the speech encoding.
    Tensor cmam_forward(const Tensor& text_embeddings, const Tensor& z, std::span<const std::uint8_t> word_padding,
                        const ForwardContext& ctx = {}) const
    {
        if (config_.ablation == Ablation::cmam) {
            throw Error("cmam_forward: the CMAM block is ablated in this model");
        }
        const std::size_t n = z.rows();
        if (text_embeddings.rows() != n) {
            throw ShapeError("cmam_forward: " + std::to_string(text_embeddings.rows()) + " text rows vs "
                             + std::to_string(n) + " speech rows");
        }
        require_words(n, word_padding, "cmam");
        const Tensor pe = positional_encoding(n, config_.d_model);
        Tensor x = config_.ablation == Ablation::text ? pe : ops::add(text_proj_(text_embeddings), pe);
        x = maybe_dropout(x, config_.dropout, ctx);
        const AttentionMask mask = padding_mask(n, word_padding);
        for (std::size_t l = 0; l < cmam_.size(); ++l) {
            const auto& layer = cmam_[l];
            const std::string name = "cmam." + std::to_string(l);
            x = layer.ln1(ops::add(x, sublayer(layer.self(x, x, mask, ctx, name + ".self"), ctx)));
            x = layer.ln2(ops::add(x, sublayer(layer.cross(x, z, mask, ctx, name + ".cross"), ctx)));
            x = layer.ln3(ops::add(x, sublayer(layer.ff(x), ctx)));
        }
        return x;
    }

    EncoderMemory encode(const features::Ipu& ipu, const ForwardContext& ctx = {}) const
    {
        const std::size_t n = ipu.words.size();
        EncoderMemory mem;
        mem.word_padding.resize(n);
        for (std::size_t w = 0; w < n; ++w) {
            mem.word_padding[w] = ipu.words[w].is_padding ? 1 : 0;
        }
        require_words(n, mem.word_padding, "encode");
        const Tensor speech = config_.ablation == Ablation::speech ? Tensor::zeros({n, config_.d_model}) : f0_encode(ipu);
        mem.z = encoder_forward(speech, mem.word_padding, ctx);
        mem.fused = config_.ablation == Ablation::cmam ? mem.z
                                                       : cmam_forward(text_matrix(ipu), mem.z, mem.word_padding, ctx);
        return mem;
    }

    /// Latents for one stream from its previous tokens.
    Tensor decoder_forward(std::size_t stream, std::span<const int> tokens, const EncoderMemory& memory,
                           const ForwardContext& ctx = {}) const
    {
        if (stream >= config_.n_streams) {
            throw Error("decoder_forward: stream " + std::to_string(stream) + " out of range");
        }
        const std::size_t t = tokens.size();
        if (t == 0 || t > config_.max_out_len) {
            throw Error("decoder_forward: " + std::to_string(t) + " tokens, expected 1.."
                        + std::to_string(config_.max_out_len));
        }
        const std::size_t dec = config_.decoder_for(stream);
        const auto& decoder = decoders_[dec];
        Tensor x = ops::add(ops::embedding_lookup(decoder.embedding, tokens), positional_encoding(t, config_.d_model));
        x = maybe_dropout(x, config_.dropout, ctx);
        const AttentionMask self_mask = causal_mask(t);
        const AttentionMask cross_mask = padding_mask(t, memory.word_padding);
        for (std::size_t l = 0; l < decoder.layers.size(); ++l) {
            const auto& layer = decoder.layers[l];
            const std::string name = "decoder." + std::to_string(stream) + "." + std::to_string(l);
            x = layer.ln1(ops::add(x, sublayer(layer.self(x, x, self_mask, ctx, name + ".self"), ctx)));
            x = layer.ln2(ops::add(x, sublayer(layer.cross(x, memory.fused, cross_mask, ctx, name + ".cross"), ctx)));
            x = layer.ln3(ops::add(x, sublayer(layer.ff(x), ctx)));
        }
        return x;
    }

    /// Joint output head: frame t sees frames <= t of every stream.
    std::vector<Tensor> aur_decode(std::span<const Tensor> latents) const
    {
        if (latents.size() != config_.n_streams) {
            throw ShapeError("aur_decode: " + std::to_string(latents.size()) + " streams, expected "
                             + std::to_string(config_.n_streams));
        }
        for (const auto& l : latents) {
            if (l.rows() != latents[0].rows()) {
                throw ShapeError("aur_decode: stream lengths differ (" + std::to_string(l.rows()) + " vs "
                                 + std::to_string(latents[0].rows()) + ")");
            }
        }
        std::vector<Tensor> out;
        out.reserve(latents.size());
        if (config_.ablation == Ablation::aur_decoder) {
            for (std::size_t j = 0; j < latents.size(); ++j) {
                out.push_back(dense_[j](latents[j]));
            }
            return out;
        }
        Tensor x = latents.size() == 1 ? latents[0] : ops::concat(latents, 1);
        for (const auto& conv : aur_convs_) {
            x = ops::relu(conv(x, ops::Padding::causal));
        }
        for (std::size_t j = 0; j < latents.size(); ++j) {
            out.push_back(dense_[j](x));
        }
        return out;
    }

    /// Decoder inputs for teacher forcing: BOS then each previous target,
    /// with PAD standing in after a padded frame.
    std::vector<int> shifted_inputs(std::span<const int> targets, std::span<const std::uint8_t> padding) const
    {
        std::vector<int> in(targets.size());
        if (!in.empty()) {
            in[0] = config_.bos();
        }
        for (std::size_t f = 1; f < in.size(); ++f) {
            in[f] = padding[f - 1] != 0 ? config_.pad() : targets[f - 1];
        }
        return in;
    }

    TeacherForced forward_teacher_forced(const features::Ipu& ipu, const ForwardContext& ctx = {}) const
    {
        const std::size_t n = ipu.frame_count();
        if (n == 0) {
            throw Error("forward_teacher_forced: IPU \"" + ipu.id + "\" has no target frames");
        }
        if (n > config_.max_out_len) {
            throw Error("forward_teacher_forced: IPU \"" + ipu.id + "\" has " + std::to_string(n)
                        + " frames, more than max_out_len " + std::to_string(config_.max_out_len));
        }
        const auto q = quantizer();
        TeacherForced out;
        out.ignore = ipu.frame_padding;
        const EncoderMemory mem = encode(ipu, ctx);
        std::vector<Tensor> latents;
        for (std::size_t j = 0; j < config_.n_streams; ++j) {
            if (ipu.targets[j].size() != n) {
                throw ShapeError("forward_teacher_forced: stream " + std::string(features::kStreamNames[j]) + " has "
                                 + std::to_string(ipu.targets[j].size()) + " frames, expected " + std::to_string(n));
            }
            std::vector<int> y = features::quantize_stream(ipu.targets[j], q);
            latents.push_back(decoder_forward(j, shifted_inputs(y, ipu.frame_padding), mem, ctx));
            out.targets.push_back(std::move(y));
        }
        out.logits = aur_decode(latents);
        return out;
    }

    /// Summed token cross-entropy over every stream and unpadded frame.
    static Tensor nll_sum(const TeacherForced& tf)
    {
        Tensor total;
        for (std::size_t j = 0; j < tf.logits.size(); ++j) {
            Tensor ce = ops::cross_entropy(tf.logits[j], tf.targets[j], tf.ignore, ops::Reduction::sum);
            total = j == 0 ? ce : ops::add(total, ce);
        }
        return total;
    }

    /// Mean per-token cross-entropy of one IPU.
    Tensor loss(const features::Ipu& ipu, const ForwardContext& ctx = {}) const
    {
        const TeacherForced tf = forward_teacher_forced(ipu, ctx);
        const std::size_t tokens = tf.valid_tokens();
        if (tokens == 0) {
            throw Error("loss: IPU \"" + ipu.id + "\" has only padded frames");
        }
        return ops::scale(nll_sum(tf), 1.0 / static_cast<double>(tokens));
    }

    /// Autoregressive decoding of `length` frames per stream from BOS. Reads
    /// only words, F0 and embeddings, never targets.
    Generation generate(const features::Ipu& ipu, std::size_t length, const GenerateOptions& opt = {}) const
    {
        if (length == 0 || length > config_.max_out_len) {
            throw Error("generate: requested " + std::to_string(length) + " frames, expected 1.."
                        + std::to_string(config_.max_out_len));
        }
        numerics::NoGradGuard no_grad;
        std::mt19937_64 rng(opt.seed);
        const EncoderMemory mem = encode(ipu);
        const std::size_t s = config_.n_streams;
        std::vector<std::vector<int>> inputs(s, std::vector<int>{config_.bos()});
        Generation out;
        out.bins.assign(s, {});
        for (std::size_t step = 0; step < length; ++step) {
            std::vector<Tensor> latents;
            latents.reserve(s);
            for (std::size_t j = 0; j < s; ++j) {
                latents.push_back(decoder_forward(j, inputs[j], mem));
            }
            const auto logits = aur_decode(latents);
            for (std::size_t j = 0; j < s; ++j) {
                const Tensor last = ops::slice_rows(logits[j], step, step + 1);
                const int bin = opt.sample ? sample_row(last, opt.temperature, rng) : ops::argmax_rows(last)[0];
                out.bins[j].push_back(bin);
                if (step + 1 < length) {
                    inputs[j].push_back(bin);
                }
            }
        }
        const auto q = quantizer();
        for (const auto& bins : out.bins) {
            std::vector<double> curve;
            curve.reserve(bins.size());
            for (int b : bins) {
                curve.push_back(features::dequantize(b, q));
            }
            out.curves.push_back(std::move(curve));
        }
        return out;
    }

    Generation generate(const features::Ipu& ipu, const GenerateOptions& opt = {}) const
    {
        return generate(ipu, output_length(ipu, config_.max_out_len), opt);
    }

private:
    struct EncoderLayer {
        MultiHeadAttention self;
        LayerNorm ln1;
        FeedForward ff;
        LayerNorm ln2;
    };

    struct DecoderLayer {
        MultiHeadAttention self;
        LayerNorm ln1;
        MultiHeadAttention cross;
        LayerNorm ln2;
        FeedForward ff;
        LayerNorm ln3;
    };

    struct StreamDecoder {
        Tensor embedding; // [vocab x d_model]
        std::vector<DecoderLayer> layers;
    };

    DecoderLayer make_decoder_layer(const std::string& name)
    {
        const std::size_t d = config_.d_model;
        DecoderLayer layer;
        layer.self = MultiHeadAttention::make(params_, name + ".self", d, config_.n_heads);
        layer.ln1 = LayerNorm::make(params_, name + ".ln1", d);
        layer.cross = MultiHeadAttention::make(params_, name + ".cross", d, config_.n_heads);
        layer.ln2 = LayerNorm::make(params_, name + ".ln2", d);
        layer.ff = FeedForward::make(params_, name + ".ff", d, config_.d_ff);
        layer.ln3 = LayerNorm::make(params_, name + ".ln3", d);
        return layer;
    }

    void build()
    {
        const std::size_t d = config_.d_model;
        const std::size_t f = config_.conv_filters;
        const std::size_t k = config_.conv_kernel;
        if (config_.ablation != Ablation::speech) {
            for (std::size_t i = 0; i < config_.n_conv_layers; ++i) {
                f0_convs_.push_back(Conv1d::make(params_, "f0.conv" + std::to_string(i), i == 0 ? 1 : f, f, k));
            }
            f0_proj_ = Linear::make(params_, "f0.proj", f, d);
        }
        for (std::size_t l = 0; l < config_.n_enc_layers; ++l) {
            const std::string name = "encoder." + std::to_string(l);
            EncoderLayer layer;
            layer.self = MultiHeadAttention::make(params_, name + ".self", d, config_.n_heads);
            layer.ln1 = LayerNorm::make(params_, name + ".ln1", d);
            layer.ff = FeedForward::make(params_, name + ".ff", d, config_.d_ff);
            layer.ln2 = LayerNorm::make(params_, name + ".ln2", d);
            encoder_.push_back(std::move(layer));
        }
        if (config_.ablation != Ablation::cmam) {
            if (config_.ablation != Ablation::text) {
                text_proj_ = Linear::make(params_, "text_proj", config_.d_emb, d);
            }
            for (std::size_t l = 0; l < config_.n_dec_layers; ++l) {
                cmam_.push_back(make_decoder_layer("cmam." + std::to_string(l)));
            }
        }
        for (std::size_t i = 0; i < config_.n_decoders(); ++i) {
            const std::string name = "decoder." + std::to_string(i);
            StreamDecoder dec;
            dec.embedding = params_.glorot(name + ".embed", {config_.vocab(), d}, config_.vocab(), d);
            for (std::size_t l = 0; l < config_.n_dec_layers; ++l) {
                dec.layers.push_back(make_decoder_layer(name + "." + std::to_string(l)));
            }
            decoders_.push_back(std::move(dec));
        }
        const auto bins = static_cast<std::size_t>(config_.n_bins);
        std::size_t head_in = d;
        if (config_.ablation != Ablation::aur_decoder) {
            for (std::size_t i = 0; i < config_.n_conv_layers; ++i) {
                const std::size_t in = i == 0 ? config_.n_streams * d : f;
                aur_convs_.push_back(Conv1d::make(params_, "aur.conv" + std::to_string(i), in, f, k));
            }
            head_in = f;
        }
        for (std::size_t j = 0; j < config_.n_streams; ++j) {
            dense_.push_back(
                Linear::make(params_, "aur.dense." + std::string(features::kStreamNames[j]), head_in, bins));
        }
    }

    Tensor sublayer(const Tensor& x, const ForwardContext& ctx) const
    {
        return maybe_dropout(x, config_.dropout, ctx);
    }

    Tensor text_matrix(const features::Ipu& ipu) const
    {
        const std::size_t n = ipu.words.size();
        const std::size_t e = config_.d_emb;
        std::vector<double> values(n * e, 0.0);
        for (std::size_t w = 0; w < n; ++w) {
            const auto& emb = ipu.words[w].embedding;
            if (ipu.words[w].is_padding && emb.empty()) {
                continue;
            }
            if (emb.size() != e) {
                throw ShapeError("word \"" + ipu.words[w].text + "\" in IPU \"" + ipu.id + "\" has a "
                                 + std::to_string(emb.size()) + "-dim embedding, model expects " + std::to_string(e));
            }
            std::copy(emb.begin(), emb.end(), values.begin() + static_cast<std::ptrdiff_t>(w * e));
        }
        return Tensor::from({n, e}, std::move(values));
    }

    static void require_words(std::size_t n, std::span<const std::uint8_t> padding, const char* where)
    {
        if (padding.size() != n) {
            throw ShapeError(std::string(where) + ": padding flags for " + std::to_string(padding.size())
                             + " words, got " + std::to_string(n) + " rows");
        }
        if (std::find(padding.begin(), padding.end(), std::uint8_t{0}) == padding.end()) {
            throw Error(std::string(where) + ": empty IPU (no unpadded word)");
        }
    }

    static int sample_row(const Tensor& logits, double temperature, std::mt19937_64& rng)
    {
        if (temperature <= 0.0) {
            throw Error("generate: temperature must be positive");
        }
        const Tensor p = ops::softmax(ops::scale(logits, 1.0 / temperature), 1);
        double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            u -= p[i];
            if (u < 0.0) {
                return static_cast<int>(i);
            }
        }
        return static_cast<int>(p.numel() - 1);
    }

    ModelConfig config_;
    ParamStore params_;
    std::vector<Conv1d> f0_convs_;
    Linear f0_proj_;
    Linear text_proj_;
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> cmam_;
    std::vector<StreamDecoder> decoders_;
    std::vector<Conv1d> aur_convs_;
    std::vector<Linear> dense_;
};

} // namespace visage::model
