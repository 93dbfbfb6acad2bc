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

// Differentiable operators. Matrices are row-major [rows x cols]; a rank-1
// tensor of length n is treated as a single row where a matrix is expected.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "visage/numerics/tensor.hpp"

namespace visage::numerics {

namespace detail {

inline void require_matrix(const char* op, const Tensor& t)
{
    if (t.dim() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
    }
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs "
                         + shape_str(b.shape()));
    }
}

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

} // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b)
{
    detail::require_matrix("matmul", a);
    detail::require_matrix("matmul", b);
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double s = av[i * k + p];
            if (s == 0.0) {
                continue;
            }
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] += s * brow[j];
            }
        }
    }
    return Tensor::make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
        auto& an = detail::parent(self, 0);
        auto& bn = detail::parent(self, 1);
        const auto& g = self.grad;
        if (an.requires_grad) {
            auto& ga = an.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* brow = bn.value.data() + p * n;
                    const double* grow = g.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += grow[j] * brow[j];
                    }
                    ga[i * k + p] += acc;
                }
            }
        }
        if (bn.requires_grad) {
            auto& gb = bn.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double s = an.value[i * k + p];
                    double* gbrow = gb.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        gbrow[j] += s * grow[j];
                    }
                }
            }
        }
    });
}

inline Tensor transpose(const Tensor& a)
{
    detail::require_matrix("transpose", a);
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j * r + i] = a.at(i, j);
        }
    }
    return Tensor::make_result("transpose", {c, r}, std::move(out), {&a}, [r, c](detail::Node& self) {
        auto& ga = detail::parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                ga[i * c + j] += self.grad[j * r + i];
            }
        }
    });
}

inline Tensor add(const Tensor& a, const Tensor& b)
{
    detail::require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return Tensor::make_result("add", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            auto& in = detail::parent(self, p);
            if (in.requires_grad) {
                auto& gi = in.grad_buffer();
                for (std::size_t i = 0; i < gi.size(); ++i) {
                    gi[i] += self.grad[i];
                }
            }
        }
    });
}

/// x[r x c] + bias[c], broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& bias)
{
    const std::size_t c = x.cols();
    if (bias.numel() != c) {
        throw ShapeError("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bias[i % c];
    }
    return Tensor::make_result("add_bias", x.shape(), std::move(out), {&x, &bias}, [c](detail::Node& self) {
        auto& xn = detail::parent(self, 0);
        auto& bn = detail::parent(self, 1);
        if (xn.requires_grad) {
            auto& gx = xn.grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += self.grad[i];
            }
        }
        if (bn.requires_grad) {
            auto& gb = bn.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gb[i % c] += self.grad[i];
            }
        }
    });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b)
{
    detail::require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    return Tensor::make_result("mul", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
        auto& an = detail::parent(self, 0);
        auto& bn = detail::parent(self, 1);
        if (an.requires_grad) {
            auto& ga = an.grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] += self.grad[i] * bn.value[i];
            }
        }
        if (bn.requires_grad) {
            auto& gb = bn.grad_buffer();
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] += self.grad[i] * an.value[i];
            }
        }
    });
}

inline Tensor scale(const Tensor& a, double s)
{
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * s;
    }
    return Tensor::make_result("scale", a.shape(), std::move(out), {&a}, [s](detail::Node& self) {
        auto& ga = detail::parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += self.grad[i] * s;
        }
    });
}

inline Tensor sum(const Tensor& a)
{
    double total = 0.0;
    for (double v : a.data()) {
        total += v;
    }
    return Tensor::make_result("sum", {1}, {total}, {&a}, [](detail::Node& self) {
        auto& ga = detail::parent(self, 0).grad_buffer();
        for (double& g : ga) {
            g += self.grad[0];
        }
    });
}

/// Concatenates matrices along rows (axis 0) or columns (axis 1).
inline Tensor concat(std::span<const Tensor> parts, int axis)
{
    if (parts.empty()) {
        throw ShapeError("concat: no inputs");
    }
    if (axis != 0 && axis != 1) {
        throw ShapeError("concat: axis must be 0 or 1, got " + std::to_string(axis));
    }
    for (const auto& p : parts) {
        detail::require_matrix("concat", p);
    }
    std::vector<std::size_t> extent;
    std::size_t rows = parts[0].rows();
    std::size_t cols = parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        const std::size_t other = axis == 0 ? p.cols() : p.rows();
        if (other != (axis == 0 ? cols : rows)) {
            throw ShapeError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        }
        extent.push_back(axis == 0 ? p.rows() : p.cols());
        total += extent.back();
    }
    Shape shape = axis == 0 ? Shape{total, cols} : Shape{rows, total};
    std::vector<double> out(shape_numel(shape));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& p = parts[k];
        for (std::size_t i = 0; i < p.rows(); ++i) {
            for (std::size_t j = 0; j < p.cols(); ++j) {
                if (axis == 0) {
                    out[(offset + i) * cols + j] = p.at(i, j);
                } else {
                    out[i * total + offset + j] = p.at(i, j);
                }
            }
        }
        offset += extent[k];
    }
    std::vector<const Tensor*> inputs;
    for (const auto& p : parts) {
        inputs.push_back(&p);
    }
    return Tensor::make_result(
        "concat", shape, std::move(out), std::span<const Tensor* const>(inputs),
        [axis, extent, total, cols](detail::Node& self) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < extent.size(); ++k) {
                auto& in = detail::parent(self, k);
                if (in.requires_grad) {
                    auto& gi = in.grad_buffer();
                    const std::size_t r = in.shape[0];
                    const std::size_t c = in.shape[1];
                    for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < c; ++j) {
                            gi[i * c + j] += axis == 0 ? self.grad[(offset + i) * cols + j]
                                                       : self.grad[i * total + offset + j];
                        }
                    }
                }
                offset += extent[k];
            }
        });
}

inline Tensor concat(std::initializer_list<Tensor> parts, int axis)
{
    std::vector<Tensor> list(parts);
    return concat(std::span<const Tensor>(list), axis);
}

/// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end)
{
    detail::require_matrix("slice_cols", a);
    if (begin >= end || end > a.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end)
                         + ") invalid for shape " + shape_str(a.shape()));
    }
    const std::size_t r = a.rows();
    const std::size_t c = a.cols();
    const std::size_t w = end - begin;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            out[i * w + j] = a.at(i, begin + j);
        }
    }
    return Tensor::make_result("slice_cols", {r, w}, std::move(out), {&a}, [r, c, w, begin](detail::Node& self) {
        auto& ga = detail::parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                ga[i * c + begin + j] += self.grad[i * w + j];
            }
        }
    });
}

/// Rows [begin, end) of a matrix.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end)
{
    detail::require_matrix("slice_rows", a);
    if (begin >= end || end > a.rows()) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end)
                         + ") invalid for shape " + shape_str(a.shape()));
    }
    const std::size_t c = a.cols();
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                            a.data().begin() + static_cast<std::ptrdiff_t>(end * c));
    return Tensor::make_result("slice_rows", {end - begin, c}, std::move(out), {&a}, [begin, c](detail::Node& self) {
        auto& ga = detail::parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            ga[begin * c + i] += self.grad[i];
        }
    });
}

/// Gathers rows of `table` [vocab x d] by index.
inline Tensor embedding_lookup(const Tensor& table, std::span<const int> indices)
{
    detail::require_matrix("embedding_lookup", table);
    const std::size_t vocab = table.rows();
    const std::size_t d = table.cols();
    std::vector<double> out(indices.size() * d);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || static_cast<std::size_t>(idx) >= vocab) {
            throw Error("embedding_lookup: index " + std::to_string(idx) + " outside vocabulary of "
                        + std::to_string(vocab));
        }
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(idx * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    std::vector<int> saved(indices.begin(), indices.end());
    return Tensor::make_result("embedding_lookup", {indices.size(), d}, std::move(out), {&table},
                               [saved = std::move(saved), d](detail::Node& self) {
                                   auto& gt = detail::parent(self, 0).grad_buffer();
                                   for (std::size_t i = 0; i < saved.size(); ++i) {
                                       const std::size_t base = static_cast<std::size_t>(saved[i]) * d;
                                       for (std::size_t j = 0; j < d; ++j) {
                                           gt[base + j] += self.grad[i * d + j];
                                       }
                                   }
                               });
}

inline Tensor relu(const Tensor& a)
{
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] > 0.0 ? a[i] : 0.0;
    }
    return Tensor::make_result("relu", a.shape(), std::move(out), {&a}, [](detail::Node& self) {
        auto& in = detail::parent(self, 0);
        auto& ga = in.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            if (in.value[i] > 0.0) {
                ga[i] += self.grad[i];
            }
        }
    });
}

/// Softmax over `axis` of a matrix (axis 1: each row sums to one). Entries
/// equal to -inf receive exactly zero probability.
inline Tensor softmax(const Tensor& x, int axis = 1)
{
    if (axis != 0 && axis != 1) {
        throw ShapeError("softmax: axis must be 0 or 1, got " + std::to_string(axis));
    }
    const std::size_t r = x.rows();
    const std::size_t c = x.cols();
    const std::size_t outer = axis == 1 ? r : c;
    const std::size_t inner = axis == 1 ? c : r;
    auto index = [=](std::size_t o, std::size_t i) { return axis == 1 ? o * c + i : i * c + o; };
    std::vector<double> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < inner; ++i) {
            mx = std::max(mx, x[index(o, i)]);
        }
        if (!std::isfinite(mx)) {
            throw Error("softmax: slice " + std::to_string(o) + " has no finite entries");
        }
        double total = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
            const double e = std::exp(x[index(o, i)] - mx);
            out[index(o, i)] = e;
            total += e;
        }
        for (std::size_t i = 0; i < inner; ++i) {
            out[index(o, i)] /= total;
        }
    }
    return Tensor::make_result("softmax", x.shape(), std::move(out), {&x}, [outer, inner, index](detail::Node& self) {
        auto& gx = detail::parent(self, 0).grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            double dot = 0.0;
            for (std::size_t i = 0; i < inner; ++i) {
                dot += self.grad[index(o, i)] * self.value[index(o, i)];
            }
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = index(o, i);
                gx[k] += self.value[k] * (self.grad[k] - dot);
            }
        }
    });
}

/// Replaces entries whose mask byte is non-zero by `value`; those entries
/// pass no gradient.
inline Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value)
{
    if (mask.size() != x.numel()) {
        throw ShapeError("masked_fill: mask of " + std::to_string(mask.size()) + " entries for shape "
                         + shape_str(x.shape()));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (mask[i] != 0) {
            out[i] = value;
        }
    }
    std::vector<std::uint8_t> saved(mask.begin(), mask.end());
    return Tensor::make_result("masked_fill", x.shape(), std::move(out), {&x},
                               [saved = std::move(saved)](detail::Node& self) {
                                   auto& gx = detail::parent(self, 0).grad_buffer();
                                   for (std::size_t i = 0; i < gx.size(); ++i) {
                                       if (saved[i] == 0) {
                                           gx[i] += self.grad[i];
                                       }
                                   }
                               });
}

/// Normalizes each row to zero mean and unit variance, then applies
/// per-column gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5)
{
    const std::size_t r = x.rows();
    const std::size_t c = x.cols();
    if (gain.numel() != c || bias.numel() != c) {
        throw ShapeError("layer_norm: shape mismatch " + shape_str(x.shape()) + " vs gain "
                         + shape_str(gain.shape()) + " bias " + shape_str(bias.shape()));
    }
    std::vector<double> normed(x.numel());
    std::vector<double> rstd(r);
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            mean += x[i * c + j];
        }
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x[i * c + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (x[i * c + j] - mean) * rstd[i];
            normed[i * c + j] = h;
            out[i * c + j] = h * gain[j] + bias[j];
        }
    }
    return Tensor::make_result(
        "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
        [r, c, normed = std::move(normed), rstd = std::move(rstd)](detail::Node& self) {
            auto& xn = detail::parent(self, 0);
            auto& gn = detail::parent(self, 1);
            auto& bn = detail::parent(self, 2);
            const auto& g = self.grad;
            if (gn.requires_grad) {
                auto& gg = gn.grad_buffer();
                for (std::size_t k = 0; k < g.size(); ++k) {
                    gg[k % c] += g[k] * normed[k];
                }
            }
            if (bn.requires_grad) {
                auto& gb = bn.grad_buffer();
                for (std::size_t k = 0; k < g.size(); ++k) {
                    gb[k % c] += g[k];
                }
            }
            if (xn.requires_grad) {
                auto& gx = xn.grad_buffer();
                const double n = static_cast<double>(c);
                for (std::size_t i = 0; i < r; ++i) {
                    double sum_d = 0.0;
                    double sum_dh = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double d = g[i * c + j] * gn.value[j];
                        sum_d += d;
                        sum_dh += d * normed[i * c + j];
                    }
                    for (std::size_t j = 0; j < c; ++j) {
                        const double d = g[i * c + j] * gn.value[j];
                        gx[i * c + j] += rstd[i] / n * (n * d - sum_d - normed[i * c + j] * sum_dh);
                    }
                }
            }
        });
}

enum class Padding {
    same,   ///< centered window, zero padded on both sides
    causal, ///< output t only sees inputs <= t
};

/// 1-D convolution along rows of x [T x c_in] with weights [c_out x c_in x k]
/// and bias [c_out]. `segments` splits the rows into independent sequences
/// (lengths summing to T); windows never cross a segment boundary. Empty
/// `segments` means one sequence.
inline Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Padding padding = Padding::same,
                     std::span<const std::size_t> segments = {})
{
    detail::require_matrix("conv1d", x);
    if (weight.dim() != 3 || weight.shape()[1] != x.cols() || bias.numel() != weight.shape()[0]) {
        throw ShapeError("conv1d: shape mismatch input " + shape_str(x.shape()) + " weight "
                         + shape_str(weight.shape()) + " bias " + shape_str(bias.shape()));
    }
    const std::size_t t_len = x.rows();
    const std::size_t c_in = x.cols();
    const std::size_t c_out = weight.shape()[0];
    const std::size_t k = weight.shape()[2];
    const std::ptrdiff_t offset = padding == Padding::same ? static_cast<std::ptrdiff_t>((k - 1) / 2)
                                                           : static_cast<std::ptrdiff_t>(k - 1);
    std::vector<std::size_t> seg(segments.begin(), segments.end());
    if (seg.empty()) {
        seg.push_back(t_len);
    }
    std::size_t covered = 0;
    for (std::size_t s : seg) {
        covered += s;
    }
    if (covered != t_len) {
        throw ShapeError("conv1d: segments cover " + std::to_string(covered) + " rows of "
                         + std::to_string(t_len));
    }
    // Walks every (output row, tap, source row) triple inside its segment.
    auto for_each_tap = [t_len, k, offset, seg](auto&& fn) {
        std::size_t start = 0;
        for (std::size_t len : seg) {
            for (std::size_t t = start; t < start + len; ++t) {
                for (std::size_t tap = 0; tap < k; ++tap) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(tap) - offset;
                    if (src < static_cast<std::ptrdiff_t>(start) || src >= static_cast<std::ptrdiff_t>(start + len)) {
                        continue;
                    }
                    fn(t, tap, static_cast<std::size_t>(src));
                }
            }
            start += len;
        }
        (void)t_len;
    };
    std::vector<double> out(t_len * c_out);
    auto xv = x.data();
    auto wv = weight.data();
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t o = 0; o < c_out; ++o) {
            out[t * c_out + o] = bias[o];
        }
    }
    for_each_tap([&](std::size_t t, std::size_t tap, std::size_t src) {
        for (std::size_t o = 0; o < c_out; ++o) {
            double acc = 0.0;
            const double* wrow = wv.data() + o * c_in * k;
            const double* xrow = xv.data() + src * c_in;
            for (std::size_t c = 0; c < c_in; ++c) {
                acc += wrow[c * k + tap] * xrow[c];
            }
            out[t * c_out + o] += acc;
        }
    });
    return Tensor::make_result(
        "conv1d", {t_len, c_out}, std::move(out), {&x, &weight, &bias},
        [for_each_tap, c_in, c_out, k](detail::Node& self) {
            auto& xn = detail::parent(self, 0);
            auto& wn = detail::parent(self, 1);
            auto& bn = detail::parent(self, 2);
            const auto& g = self.grad;
            if (bn.requires_grad) {
                auto& gb = bn.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gb[i % c_out] += g[i];
                }
            }
            double* gx = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
            double* gw = wn.requires_grad ? wn.grad_buffer().data() : nullptr;
            if (gx == nullptr && gw == nullptr) {
                return;
            }
            for_each_tap([&](std::size_t t, std::size_t tap, std::size_t src) {
                for (std::size_t o = 0; o < c_out; ++o) {
                    const double go = g[t * c_out + o];
                    if (go == 0.0) {
                        continue;
                    }
                    const std::size_t wbase = o * c_in * k;
                    for (std::size_t c = 0; c < c_in; ++c) {
                        if (gx != nullptr) {
                            gx[src * c_in + c] += wn.value[wbase + c * k + tap] * go;
                        }
                        if (gw != nullptr) {
                            gw[wbase + c * k + tap] += xn.value[src * c_in + c] * go;
                        }
                    }
                }
            });
        });
}

/// Mean of each segment's rows: [T x c] -> [segments x c]. Empty segments
/// yield zero rows.
inline Tensor segment_mean(const Tensor& x, std::span<const std::size_t> segments)
{
    detail::require_matrix("segment_mean", x);
    const std::size_t c = x.cols();
    std::size_t covered = 0;
    for (std::size_t s : segments) {
        covered += s;
    }
    if (covered != x.rows()) {
        throw ShapeError("segment_mean: segments cover " + std::to_string(covered) + " rows of "
                         + std::to_string(x.rows()));
    }
    std::vector<std::size_t> seg(segments.begin(), segments.end());
    std::vector<double> out(seg.size() * c, 0.0);
    std::size_t start = 0;
    for (std::size_t s = 0; s < seg.size(); ++s) {
        for (std::size_t t = start; t < start + seg[s]; ++t) {
            for (std::size_t j = 0; j < c; ++j) {
                out[s * c + j] += x.at(t, j);
            }
        }
        if (seg[s] > 0) {
            for (std::size_t j = 0; j < c; ++j) {
                out[s * c + j] /= static_cast<double>(seg[s]);
            }
        }
        start += seg[s];
    }
    Shape shape{seg.size(), c};
    return Tensor::make_result("segment_mean", std::move(shape), std::move(out), {&x},
                               [seg = std::move(seg), c](detail::Node& self) {
                                   auto& gx = detail::parent(self, 0).grad_buffer();
                                   std::size_t start = 0;
                                   for (std::size_t s = 0; s < seg.size(); ++s) {
                                       const double w = seg[s] > 0 ? 1.0 / static_cast<double>(seg[s]) : 0.0;
                                       for (std::size_t t = start; t < start + seg[s]; ++t) {
                                           for (std::size_t j = 0; j < c; ++j) {
                                               gx[t * c + j] += self.grad[s * c + j] * w;
                                           }
                                       }
                                       start += seg[s];
                                   }
                               });
}

/// Inverted dropout: surviving entries are scaled by 1/(1-rate) at train time
/// so inference is the identity.
inline Tensor dropout(const Tensor& x, double rate, bool train, std::mt19937_64& rng)
{
    if (rate < 0.0 || rate >= 1.0) {
        throw Error("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!train || rate == 0.0) {
        return x;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (double& m : mask) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        m = u < rate ? 0.0 : keep_scale;
    }
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * mask[i];
    }
    return Tensor::make_result("dropout", x.shape(), std::move(out), {&x}, [mask = std::move(mask)](detail::Node& self) {
        auto& gx = detail::parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i] * mask[i];
        }
    });
}

enum class Reduction { mean, sum };

/// Categorical cross-entropy of row-wise softmax(logits) against target
/// indices. Rows whose `ignore` byte is non-zero contribute nothing. With
/// Reduction::mean the result is averaged over the remaining rows.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const std::uint8_t> ignore,
                            Reduction reduction = Reduction::mean)
{
    detail::require_matrix("cross_entropy", logits);
    const std::size_t r = logits.rows();
    const std::size_t v = logits.cols();
    if (targets.size() != r || (!ignore.empty() && ignore.size() != r)) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits "
                         + shape_str(logits.shape()));
    }
    std::vector<double> probs(r * v, 0.0);
    std::vector<std::uint8_t> skip(r, 0);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < r; ++i) {
        if (!ignore.empty() && ignore[i] != 0) {
            skip[i] = 1;
            continue;
        }
        const int y = targets[i];
        if (y < 0 || static_cast<std::size_t>(y) >= v) {
            throw Error("cross_entropy: target " + std::to_string(y) + " outside " + std::to_string(v) + " classes");
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < v; ++j) {
            mx = std::max(mx, logits.at(i, j));
        }
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            const double e = std::exp(logits.at(i, j) - mx);
            probs[i * v + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < v; ++j) {
            probs[i * v + j] /= z;
        }
        total += -(logits.at(i, static_cast<std::size_t>(y)) - mx - std::log(z));
        ++count;
    }
    if (count == 0 && reduction == Reduction::mean) {
        throw Error("cross_entropy: every row is ignored");
    }
    const double norm = reduction == Reduction::mean ? 1.0 / static_cast<double>(count) : 1.0;
    std::vector<int> saved(targets.begin(), targets.end());
    return Tensor::make_result(
        "cross_entropy", {1}, {total * norm}, {&logits},
        [probs = std::move(probs), skip = std::move(skip), saved = std::move(saved), v, norm](detail::Node& self) {
            auto& gl = detail::parent(self, 0).grad_buffer();
            const double g = self.grad[0] * norm;
            for (std::size_t i = 0; i < skip.size(); ++i) {
                if (skip[i] != 0) {
                    continue;
                }
                for (std::size_t j = 0; j < v; ++j) {
                    gl[i * v + j] += g * probs[i * v + j];
                }
                gl[i * v + static_cast<std::size_t>(saved[i])] -= g;
            }
        });
}

/// Index of the largest entry in each row (first one on ties).
inline std::vector<int> argmax_rows(const Tensor& x)
{
    std::vector<int> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < x.cols(); ++j) {
            if (x.at(i, j) > x.at(i, best)) {
                best = j;
            }
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

} // namespace visage::numerics
