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

// Curve metrics. Degenerate cases (constant input for PCC, an empty
// activation class for AHR/NAHR) come back as std::nullopt rather than as a
// made-up number.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "visage/error.hpp"

namespace visage::evaluation {

inline constexpr double kActivationThreshold = 0.5;

namespace detail {

inline void require_pair(const char* metric, std::span<const double> a, std::span<const double> b, std::size_t min_len)
{
    if (a.size() != b.size()) {
        throw Error(std::string(metric) + ": length mismatch (" + std::to_string(a.size()) + " vs "
                    + std::to_string(b.size()) + ")");
    }
    if (a.size() < min_len) {
        throw Error(std::string(metric) + ": needs at least " + std::to_string(min_len) + " values, got "
                    + std::to_string(a.size()));
    }
}

} // namespace detail

inline double rmse(std::span<const double> pred, std::span<const double> truth)
{
    detail::require_pair("rmse", pred, truth, 1);
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        total += d * d;
    }
    return std::sqrt(total / static_cast<double>(pred.size()));
}

/// Pearson correlation; undefined when either sequence is constant.
inline std::optional<double> pcc(std::span<const double> pred, std::span<const double> truth)
{
    detail::require_pair("pcc", pred, truth, 2);
    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    };
    if (constant(pred) || constant(truth)) {
        return std::nullopt;
    }
    const double n = static_cast<double>(pred.size());
    double mp = 0.0;
    double mt = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        mp += pred[i];
        mt += truth[i];
    }
    mp /= n;
    mt /= n;
    double cov = 0.0;
    double vp = 0.0;
    double vt = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double a = pred[i] - mp;
        const double b = truth[i] - mt;
        cov += a * b;
        vp += a * a;
        vt += b * b;
    }
    return std::clamp(cov / std::sqrt(vp * vt), -1.0, 1.0);
}

/// Strictly above the threshold counts as activated.
inline std::vector<std::uint8_t> activation(std::span<const double> values, double threshold = kActivationThreshold)
{
    std::vector<std::uint8_t> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = values[i] > threshold ? 1 : 0;
    }
    return out;
}

namespace detail {

inline std::optional<double> hit_ratio(const char* metric, std::span<const double> pred, std::span<const double> truth,
                                       bool active)
{
    require_pair(metric, pred, truth, 1);
    const auto p = activation(pred);
    const auto t = activation(truth);
    const auto want = static_cast<std::uint8_t>(active ? 1 : 0);
    const auto predicted = std::count(p.begin(), p.end(), want);
    const auto actual = std::count(t.begin(), t.end(), want);
    if (actual == 0) {
        return std::nullopt;
    }
    return 100.0 * static_cast<double>(predicted) / static_cast<double>(actual);
}

} // namespace detail

/// Activated frames predicted, as a percentage of activated ground-truth
/// frames. Above 100 means over-activation.
inline std::optional<double> ahr(std::span<const double> pred, std::span<const double> truth)
{
    return detail::hit_ratio("ahr", pred, truth, true);
}

/// The same ratio for non-activated frames.
inline std::optional<double> nahr(std::span<const double> pred, std::span<const double> truth)
{
    return detail::hit_ratio("nahr", pred, truth, false);
}

} // namespace visage::evaluation
