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
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "visage/numerics/tensor.hpp"

namespace visage::numerics {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct GradCheckEntry {
    std::string name;
    std::size_t count = 0;
    double max_abs_error = 0.0;
    double max_abs_grad = 0.0;
    /// max |analytic - numeric| over the group divided by the group's largest
    /// gradient magnitude (floored at `abs_floor`).
    double rel_error = 0.0;
    /// The whole group's gradient is below the floor, so its error is
    /// measured against the floor rather than the gradient.
    bool floor_limited = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    std::vector<std::string> flagged;
    double max_rel_error = 0.0;

    bool ok() const { return flagged.empty(); }
};

/// Smallest gradient scale a central difference can resolve to `tol`: the
/// two evaluations of a loss of size |f| each carry about one ulp of
/// rounding, so the difference quotient is noisy at eps * |f| / h.
inline double finite_difference_floor(double loss_value, double h, double tol)
{
    return 2.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(loss_value), 1.0) / (h * tol);
}

/// Compares reverse-mode gradients of the scalar `f` with central
/// differences of step `h` for every element of every tensor in `params`.
/// `f` must be deterministic (no dropout). Parameters are restored on exit.
inline GradCheckReport finite_difference_check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                                               double h = 1e-6, double tol = 1e-4, double abs_floor = 1e-8)
{
    for (auto& p : params) {
        p.tensor.zero_grad();
    }
    backward(f());
    GradCheckReport report;
    for (auto& p : params) {
        const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
        GradCheckEntry entry;
        entry.name = p.name;
        entry.count = analytic.size();
        auto values = p.tensor.mutable_data();
        double max_grad = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double up = 0.0;
            double down = 0.0;
            {
                NoGradGuard guard;
                values[i] = saved + h;
                up = f().item();
                values[i] = saved - h;
                down = f().item();
            }
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            entry.max_abs_error = std::max(entry.max_abs_error, std::abs(numeric - analytic[i]));
            max_grad = std::max({max_grad, std::abs(numeric), std::abs(analytic[i])});
        }
        entry.max_abs_grad = max_grad;
        entry.floor_limited = max_grad < abs_floor;
        entry.rel_error = entry.max_abs_error / std::max(max_grad, abs_floor);
        report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
        if (!(entry.rel_error < tol)) {
            report.flagged.push_back(p.name);
        }
        report.entries.push_back(std::move(entry));
    }
    for (auto& p : params) {
        p.tensor.zero_grad();
    }
    return report;
}

} // namespace visage::numerics
