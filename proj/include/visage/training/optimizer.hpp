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

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "visage/error.hpp"
#include "visage/numerics/gradcheck.hpp"

namespace visage::training {

using numerics::NamedTensor;
using numerics::Tensor;

/// Inverse-square-root schedule with linear warmup; peaks at `warmup`.
inline double lr_schedule(std::size_t step, std::size_t d_model = 64, std::size_t warmup = 4000)
{
    if (step == 0) {
        throw Error("lr_schedule: steps are counted from 1");
    }
    if (warmup == 0 || d_model == 0) {
        throw Error("lr_schedule: d_model and warmup must be positive");
    }
    const double s = static_cast<double>(step);
    return std::pow(static_cast<double>(d_model), -0.5)
           * std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup), -1.5));
}

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;

    static AdamState for_params(std::span<const NamedTensor> params)
    {
        AdamState s;
        for (const auto& p : params) {
            s.m.emplace_back(p.tensor.numel(), 0.0);
            s.v.emplace_back(p.tensor.numel(), 0.0);
        }
        return s;
    }
};

/// Throws naming the first parameter whose gradient is NaN or infinite.
inline void check_finite_gradients(std::span<const NamedTensor> params)
{
    for (const auto& p : params) {
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) {
                throw Error("non-finite gradient in parameter \"" + p.name + "\"");
            }
        }
    }
}

/// Global L2 norm of all gradients.
inline double gradient_norm(std::span<const NamedTensor> params)
{
    double total = 0.0;
    for (const auto& p : params) {
        for (double g : p.tensor.grad()) {
            total += g * g;
        }
    }
    return std::sqrt(total);
}

/// One bias-corrected Adam update from the accumulated gradients, scaled by
/// `grad_scale` first (used for clipping).
inline void adam_step(std::span<NamedTensor> params, AdamState& state, double lr, const AdamOptions& opt = {},
                      double grad_scale = 1.0)
{
    if (state.m.size() != params.size()) {
        throw Error("adam_step: state holds " + std::to_string(state.m.size()) + " tensors for "
                    + std::to_string(params.size()) + " parameters");
    }
    check_finite_gradients(params);
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].tensor;
        auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != w.size() || g.size() != w.size()) {
            throw ShapeError("adam_step: moment size mismatch for \"" + params[i].name + "\"");
        }
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g[k] * grad_scale;
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * gk;
            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * gk * gk;
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            w[k] -= lr * m_hat / (std::sqrt(v_hat) + opt.eps);
        }
    }
}

} // namespace visage::training
