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

#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "visage/error.hpp"
#include "visage/features/features.hpp"

namespace visage::model {

using json = nlohmann::ordered_json;

/// Variants with one block removed.
enum class Ablation {
    none,
    speech,      ///< F0 path replaced by zeros
    text,        ///< CMAM queries carry position only
    cmam,        ///< decoders attend to the encoder output directly
    aur_decoder, ///< per-stream dense directly on decoder latents
};

inline std::string_view ablation_name(Ablation a)
{
    switch (a) {
    case Ablation::none: return "none";
    case Ablation::speech: return "speech";
    case Ablation::text: return "text";
    case Ablation::cmam: return "cmam";
    case Ablation::aur_decoder: return "aur-decoder";
    }
    return "none";
}

inline Ablation parse_ablation(std::string_view s)
{
    for (auto a : {Ablation::none, Ablation::speech, Ablation::text, Ablation::cmam, Ablation::aur_decoder}) {
        if (s == ablation_name(a)) {
            return a;
        }
    }
    throw Error("unknown ablation \"" + std::string(s) + "\" (expected speech, text, cmam or aur-decoder)");
}

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t n_enc_layers = 4;
    std::size_t n_dec_layers = 4; ///< also the CMAM depth
    std::size_t n_heads = 4;
    std::size_t d_ff = 400;
    double dropout = 0.1;
    std::size_t conv_filters = 64;
    std::size_t conv_kernel = 3;
    std::size_t n_conv_layers = 3;
    std::size_t d_emb = 768;
    int n_bins = 256;
    std::size_t n_streams = features::kStreamCount;
    std::size_t max_f0_len = features::kMaxF0Len;
    std::size_t max_out_len = features::kMaxOutLen;
    /// Decoder index per stream; empty gives every stream its own decoder.
    std::vector<std::size_t> decoder_of_stream;
    Ablation ablation = Ablation::none;

    int bos() const { return n_bins; }
    int pad() const { return n_bins + 1; }
    std::size_t vocab() const { return static_cast<std::size_t>(n_bins) + 2; }

    std::size_t decoder_for(std::size_t stream) const
    {
        return decoder_of_stream.empty() ? stream : decoder_of_stream[stream];
    }

    std::size_t n_decoders() const
    {
        if (decoder_of_stream.empty()) {
            return n_streams;
        }
        return std::set<std::size_t>(decoder_of_stream.begin(), decoder_of_stream.end()).size();
    }

    void validate() const
    {
        auto positive = [](std::size_t v, const char* name) {
            if (v == 0) {
                throw Error(std::string("model config: ") + name + " must be positive");
            }
        };
        positive(d_model, "d_model");
        positive(n_enc_layers, "n_enc_layers");
        positive(n_dec_layers, "n_dec_layers");
        positive(n_heads, "n_heads");
        positive(d_ff, "d_ff");
        positive(conv_filters, "conv_filters");
        positive(conv_kernel, "conv_kernel");
        positive(n_conv_layers, "n_conv_layers");
        positive(d_emb, "d_emb");
        positive(n_streams, "n_streams");
        positive(max_f0_len, "max_f0_len");
        positive(max_out_len, "max_out_len");
        if (n_bins <= 0) {
            throw Error("model config: n_bins must be positive");
        }
        if (d_model % n_heads != 0) {
            throw Error("model config: d_model " + std::to_string(d_model) + " is not divisible by n_heads "
                        + std::to_string(n_heads));
        }
        if (conv_kernel % 2 == 0) {
            throw Error("model config: conv_kernel must be odd for centered F0 convolutions");
        }
        if (n_streams > features::kStreamCount) {
            throw Error("model config: at most " + std::to_string(features::kStreamCount) + " streams");
        }
        if (dropout < 0.0 || dropout >= 1.0) {
            throw Error("model config: dropout must be in [0, 1)");
        }
        if (!decoder_of_stream.empty()) {
            if (decoder_of_stream.size() != n_streams) {
                throw Error("model config: decoder_of_stream needs one entry per stream");
            }
            // decoder ids must be 0..k-1 with none skipped
            const std::set<std::size_t> ids(decoder_of_stream.begin(), decoder_of_stream.end());
            if (*ids.rbegin() + 1 != ids.size()) {
                throw Error("model config: decoder_of_stream must use contiguous ids from 0");
            }
        }
    }

    /// Memorization-scale model used by the overfit experiments.
    static ModelConfig toy()
    {
        ModelConfig c;
        c.d_model = 16;
        c.n_enc_layers = 1;
        c.n_dec_layers = 1;
        c.n_heads = 2;
        c.d_ff = 32;
        c.dropout = 0.0;
        c.conv_filters = 32; // the AU/R head funnels all nine streams through these channels
        c.d_emb = 16;
        c.n_bins = 16;
        c.max_f0_len = 64;
        c.max_out_len = 32;
        return c;
    }

    /// Smallest useful model, sized for finite-difference checks.
    static ModelConfig tiny()
    {
        ModelConfig c;
        c.d_model = 8;
        c.n_enc_layers = 1;
        c.n_dec_layers = 1;
        c.n_heads = 1;
        c.d_ff = 16;
        c.dropout = 0.0;
        c.conv_filters = 4;
        c.d_emb = 6;
        c.n_bins = 8;
        c.max_f0_len = 8;
        c.max_out_len = 8;
        return c;
    }
};

inline json config_to_json(const ModelConfig& c)
{
    json j;
    j["d_model"] = c.d_model;
    j["n_enc_layers"] = c.n_enc_layers;
    j["n_dec_layers"] = c.n_dec_layers;
    j["n_heads"] = c.n_heads;
    j["d_ff"] = c.d_ff;
    j["dropout"] = c.dropout;
    j["conv_filters"] = c.conv_filters;
    j["conv_kernel"] = c.conv_kernel;
    j["n_conv_layers"] = c.n_conv_layers;
    j["d_emb"] = c.d_emb;
    j["n_bins"] = c.n_bins;
    j["n_streams"] = c.n_streams;
    j["max_f0_len"] = c.max_f0_len;
    j["max_out_len"] = c.max_out_len;
    j["decoder_of_stream"] = c.decoder_of_stream;
    j["ablation"] = ablation_name(c.ablation);
    return j;
}

/// Reads the keys present in `j` on top of `base`. Unknown keys are an error
/// so that typos do not silently fall back to defaults.
inline ModelConfig config_from_json(const json& j, ModelConfig base = {})
{
    if (!j.is_object()) {
        throw Error("model config: expected a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "d_model") base.d_model = value.get<std::size_t>();
            else if (key == "n_enc_layers") base.n_enc_layers = value.get<std::size_t>();
            else if (key == "n_dec_layers") base.n_dec_layers = value.get<std::size_t>();
            else if (key == "n_heads") base.n_heads = value.get<std::size_t>();
            else if (key == "d_ff") base.d_ff = value.get<std::size_t>();
            else if (key == "dropout") base.dropout = value.get<double>();
            else if (key == "conv_filters") base.conv_filters = value.get<std::size_t>();
            else if (key == "conv_kernel") base.conv_kernel = value.get<std::size_t>();
            else if (key == "n_conv_layers") base.n_conv_layers = value.get<std::size_t>();
            else if (key == "d_emb") base.d_emb = value.get<std::size_t>();
            else if (key == "n_bins") base.n_bins = value.get<int>();
            else if (key == "n_streams") base.n_streams = value.get<std::size_t>();
            else if (key == "max_f0_len") base.max_f0_len = value.get<std::size_t>();
            else if (key == "max_out_len") base.max_out_len = value.get<std::size_t>();
            else if (key == "decoder_of_stream") base.decoder_of_stream = value.get<std::vector<std::size_t>>();
            else if (key == "ablation") base.ablation = parse_ablation(value.get<std::string>());
            else throw Error("model config: unknown key \"" + key + "\"");
        } catch (const nlohmann::json::exception& e) {
            throw Error("model config: bad value for \"" + key + "\": " + e.what());
        }
    }
    base.validate();
    return base;
}

} // namespace visage::model
