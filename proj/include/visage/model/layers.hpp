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

// Transformer building blocks on top of the autodiff tensor.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "visage/error.hpp"
#include "visage/numerics/gradcheck.hpp"
#include "visage/numerics/ops.hpp"
#include "visage/numerics/tensor.hpp"

namespace visage::model {

using numerics::NamedTensor;
using numerics::Shape;
using numerics::Tensor;

/// Ordered, named collection of trainable tensors. Registration order is the
/// checkpoint order.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

    /// Glorot-uniform tensor with explicit fan-in and fan-out.
    Tensor glorot(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out)
    {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::vector<double> values(numerics::shape_numel(shape));
        for (double& v : values) {
            v = limit * (2.0 * unit() - 1.0);
        }
        return add(name, Tensor::parameter(std::move(shape), std::move(values)));
    }

    Tensor constant(const std::string& name, Shape shape, double value)
    {
        std::vector<double> values(numerics::shape_numel(shape), value);
        return add(name, Tensor::parameter(std::move(shape), std::move(values)));
    }

    const std::vector<NamedTensor>& all() const { return params_; }

    Tensor get(const std::string& name) const
    {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw Error("unknown parameter \"" + name + "\"");
        }
        return params_[it->second].tensor;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t scalar_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_) {
            n += p.tensor.numel();
        }
        return n;
    }

    void zero_grad()
    {
        for (auto& p : params_) {
            p.tensor.zero_grad();
        }
    }

private:
    Tensor add(const std::string& name, Tensor t)
    {
        if (!index_.emplace(name, params_.size()).second) {
            throw Error("duplicate parameter \"" + name + "\"");
        }
        params_.push_back({name, t});
        return t;
    }

    double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

    std::mt19937_64 rng_;
    std::vector<NamedTensor> params_;
    std::map<std::string, std::size_t> index_;
};

/// Per-call state: dropout switch and generator, plus an optional trace.
struct Trace;

struct ForwardContext {
    bool train = false;
    std::mt19937_64* rng = nullptr;
    Trace* trace = nullptr;
};

/// Attention probabilities captured during a forward pass.
struct AttentionRecord {
    std::string block; ///< e.g. "encoder.0.self", "decoder.3.1.cross"
    std::size_t head = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> probs;
    std::vector<std::uint8_t> masked; ///< 1 where the key was masked out
};

struct Trace {
    std::vector<AttentionRecord> attention;
};

inline Tensor maybe_dropout(const Tensor& x, double rate, const ForwardContext& ctx)
{
    if (!ctx.train || rate == 0.0) {
        return x;
    }
    if (ctx.rng == nullptr) {
        throw Error("dropout in training mode needs a random generator");
    }
    return numerics::dropout(x, rate, true, *ctx.rng);
}

struct Linear {
    Tensor weight; // [in x out]
    Tensor bias;   // [out]

    static Linear make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out)
    {
        return {store.glorot(name + ".w", {in, out}, in, out), store.constant(name + ".b", {out}, 0.0)};
    }

    Tensor operator()(const Tensor& x) const { return numerics::add_bias(numerics::matmul(x, weight), bias); }
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    static LayerNorm make(ParamStore& store, const std::string& name, std::size_t d)
    {
        return {store.constant(name + ".gain", {d}, 1.0), store.constant(name + ".bias", {d}, 0.0)};
    }

    Tensor operator()(const Tensor& x) const { return numerics::layer_norm(x, gain, bias); }
};

struct Conv1d {
    Tensor weight; // [out x in x k]
    Tensor bias;

    static Conv1d make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k)
    {
        return {store.glorot(name + ".w", {out, in, k}, in * k, out * k), store.constant(name + ".b", {out}, 0.0)};
    }

    Tensor operator()(const Tensor& x, numerics::Padding padding, std::span<const std::size_t> segments = {}) const
    {
        return numerics::conv1d(x, weight, bias, padding, segments);
    }
};

/// Row-major [queries x keys] mask, 1 = blocked.
using AttentionMask = std::vector<std::uint8_t>;

/// Keys flagged in `key_padding` are blocked for every query.
inline AttentionMask padding_mask(std::size_t queries, std::span<const std::uint8_t> key_padding)
{
    AttentionMask m(queries * key_padding.size());
    for (std::size_t q = 0; q < queries; ++q) {
        std::copy(key_padding.begin(), key_padding.end(), m.begin() + static_cast<std::ptrdiff_t>(q * key_padding.size()));
    }
    return m;
}

/// Query i may attend to key k iff k <= i.
inline AttentionMask causal_mask(std::size_t n)
{
    AttentionMask m(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) {
            m[i * n + k] = 1;
        }
    }
    return m;
}

struct MultiHeadAttention {
    Linear q, k, v, o;
    std::size_t heads = 1;

    static MultiHeadAttention make(ParamStore& store, const std::string& name, std::size_t d, std::size_t heads)
    {
        return {Linear::make(store, name + ".q", d, d), Linear::make(store, name + ".k", d, d),
                Linear::make(store, name + ".v", d, d), Linear::make(store, name + ".o", d, d), heads};
    }

    /// Scaled dot-product attention of `queries` over `memory`. Blocked
    /// entries get exactly zero probability.
    Tensor operator()(const Tensor& queries, const Tensor& memory, const AttentionMask& mask,
                      const ForwardContext& ctx, const std::string& block) const
    {
        const std::size_t nq = queries.rows();
        const std::size_t nk = memory.rows();
        if (mask.size() != nq * nk) {
            throw ShapeError(block + ": attention mask has " + std::to_string(mask.size()) + " entries for "
                             + std::to_string(nq) + "x" + std::to_string(nk));
        }
        const Tensor qp = q(queries);
        const Tensor kp = k(memory);
        const Tensor vp = v(memory);
        const std::size_t d = qp.cols();
        const std::size_t dh = d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<Tensor> outs;
        outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            const Tensor qh = numerics::slice_cols(qp, h * dh, (h + 1) * dh);
            const Tensor kh = numerics::slice_cols(kp, h * dh, (h + 1) * dh);
            const Tensor vh = numerics::slice_cols(vp, h * dh, (h + 1) * dh);
            Tensor scores = numerics::scale(numerics::matmul(qh, numerics::transpose(kh)), scale);
            scores = numerics::masked_fill(scores, mask, -std::numeric_limits<double>::infinity());
            const Tensor probs = numerics::softmax(scores, 1);
            if (ctx.trace != nullptr) {
                ctx.trace->attention.push_back(
                    {block, h, nq, nk, std::vector<double>(probs.data().begin(), probs.data().end()), mask});
            }
            outs.push_back(numerics::matmul(probs, vh));
        }
        const Tensor joined = heads == 1 ? outs[0] : numerics::concat(std::span<const Tensor>(outs), 1);
        return o(joined);
    }
};

struct FeedForward {
    Linear in, out;

    static FeedForward make(ParamStore& store, const std::string& name, std::size_t d, std::size_t d_ff)
    {
        return {Linear::make(store, name + ".in", d, d_ff), Linear::make(store, name + ".out", d_ff, d)};
    }

    Tensor operator()(const Tensor& x) const { return out(numerics::relu(in(x))); }
};

/// Sinusoidal table: sin on even columns, cos on odd ones.
inline Tensor positional_encoding(std::size_t length, std::size_t d_model)
{
    if (length == 0 || d_model == 0) {
        throw Error("positional_encoding: length and d_model must be positive");
    }
    std::vector<double> pe(length * d_model);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t c = 0; c < d_model; ++c) {
            const double i2 = static_cast<double>(c - c % 2);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, i2 / static_cast<double>(d_model));
            pe[pos * d_model + c] = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::from({length, d_model}, std::move(pe));
}

} // namespace visage::model
