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

// Frame-level feature preparation: F0 cleanup, inter-pausal unit (IPU)
// segmentation, per-word F0 windows, AU/head-rotation target windows,
// normalization and uniform quantization.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visage/error.hpp"

namespace visage::features {

inline constexpr double kF0Hop = 0.005;        // seconds per F0 frame
inline constexpr double kTargetFps = 24.0;     // AU/R frames per second
inline constexpr double kF0Min = 50.0;         // Hz
inline constexpr double kF0Max = 550.0;        // Hz
inline constexpr double kMaxPause = 0.2;       // longer pauses split IPUs
inline constexpr std::size_t kMaxF0Len = 100;  // frames per word
inline constexpr std::size_t kMaxOutLen = 124; // AU/R frames per IPU
inline constexpr std::size_t kStreamCount = 9;
inline constexpr std::string_view kSilenceText = ",";

inline constexpr std::array<std::string_view, kStreamCount> kStreamNames = {
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "RX", "RY", "RZ"};

/// AU streams carry activation statistics; head rotations do not.
inline constexpr bool is_action_unit(std::size_t stream) { return stream < 6; }

inline std::size_t stream_index(std::string_view name)
{
    for (std::size_t i = 0; i < kStreamCount; ++i) {
        if (kStreamNames[i] == name) {
            return i;
        }
    }
    throw Error("unknown stream \"" + std::string(name) + "\"");
}

struct F0Frame {
    double hz = 0.0;
    bool voiced = false;
};

struct F0Track {
    std::vector<F0Frame> frames;
    double hop_s = kF0Hop;

    double duration() const { return static_cast<double>(frames.size()) * hop_s; }

    static F0Track from_hz(std::span<const double> hz)
    {
        F0Track track;
        track.frames.reserve(hz.size());
        for (double v : hz) {
            track.frames.push_back({v, v > 0.0});
        }
        return track;
    }
};

struct WordToken {
    std::string text;
    double start_s = 0.0;
    double end_s = 0.0;
    std::vector<double> f0;       // max_f0_len entries once assigned
    std::size_t f0_length = 0;    // frames before padding
    std::vector<double> embedding;
    bool is_silence = false;
    bool is_padding = false;      // filler slot appended to reach a fixed word count
};

enum class Split { train, val_sd, test_sd, test_si };

inline std::string_view split_name(Split s)
{
    switch (s) {
    case Split::train: return "train";
    case Split::val_sd: return "val_SD";
    case Split::test_sd: return "test_SD";
    case Split::test_si: return "test_SI";
    }
    return "train";
}

inline Split parse_split(std::string_view s)
{
    for (Split v : {Split::train, Split::val_sd, Split::test_sd, Split::test_si}) {
        if (split_name(v) == s) {
            return v;
        }
    }
    throw Error("unknown split \"" + std::string(s) + "\"");
}

struct Ipu {
    std::string id;
    std::string speaker_id;
    std::vector<WordToken> words;
    std::array<std::vector<double>, kStreamCount> targets;
    std::vector<std::uint8_t> frame_padding; // 1 marks a padded frame
    Split split = Split::train;

    std::size_t frame_count() const { return frame_padding.size(); }
    std::size_t valid_frames() const
    {
        return static_cast<std::size_t>(std::count(frame_padding.begin(), frame_padding.end(), std::uint8_t{0}));
    }
    std::size_t valid_words() const
    {
        return static_cast<std::size_t>(
            std::count_if(words.begin(), words.end(), [](const WordToken& w) { return !w.is_padding; }));
    }
    double start_s() const { return words.empty() ? 0.0 : words.front().start_s; }
    double end_s() const
    {
        double end = 0.0;
        for (const auto& w : words) {
            if (!w.is_padding) {
                end = std::max(end, w.end_s);
            }
        }
        return end;
    }
};

// ---------------------------------------------------------------------------
// F0

/// Fills unvoiced frames by linear interpolation between the nearest voiced
/// neighbours; leading and trailing unvoiced runs copy the nearest voiced value.
inline F0Track interpolate_f0(const F0Track& track)
{
    std::vector<std::size_t> voiced;
    for (std::size_t i = 0; i < track.frames.size(); ++i) {
        if (track.frames[i].voiced) {
            voiced.push_back(i);
        }
    }
    if (voiced.empty()) {
        throw Error("empty voicing: F0 track has no voiced frame");
    }
    F0Track out = track;
    for (std::size_t i = 0; i < voiced.front(); ++i) {
        out.frames[i] = {track.frames[voiced.front()].hz, true};
    }
    for (std::size_t i = voiced.back() + 1; i < track.frames.size(); ++i) {
        out.frames[i] = {track.frames[voiced.back()].hz, true};
    }
    for (std::size_t k = 0; k + 1 < voiced.size(); ++k) {
        const std::size_t a = voiced[k];
        const std::size_t b = voiced[k + 1];
        const double va = track.frames[a].hz;
        const double vb = track.frames[b].hz;
        for (std::size_t i = a + 1; i < b; ++i) {
            const double t = static_cast<double>(i - a) / static_cast<double>(b - a);
            out.frames[i] = {va + (vb - va) * t, true};
        }
    }
    return out;
}

inline F0Track clip_f0(const F0Track& track, double lo = kF0Min, double hi = kF0Max)
{
    F0Track out = track;
    for (auto& f : out.frames) {
        f.hz = std::min(std::max(f.hz, lo), hi);
    }
    return out;
}

inline F0Track prepare_f0(const F0Track& track) { return clip_f0(interpolate_f0(track)); }

// ---------------------------------------------------------------------------
// Timing

/// First frame index whose timestamp (index * period) is >= t. Values within
/// 1e-6 frames of an integer snap to it so 0.3 s at 5 ms is exactly frame 60.
inline std::size_t frame_at_or_after(double t, double period)
{
    double x = t / period;
    const double r = std::round(x);
    if (std::abs(x - r) < 1e-6) {
        x = r;
    }
    return static_cast<std::size_t>(std::max(0.0, std::ceil(x)));
}

/// Half-open frame range [first, last) covering [start_s, end_s).
struct FrameRange {
    std::size_t first = 0;
    std::size_t last = 0;
    std::size_t size() const { return last > first ? last - first : 0; }
};

inline FrameRange frames_between(double start_s, double end_s, double period)
{
    return {frame_at_or_after(start_s, period), frame_at_or_after(end_s, period)};
}

// ---------------------------------------------------------------------------
// IPU segmentation

/// Groups time-sorted words into IPUs. A pause longer than 0.2 s starts a new
/// IPU; a shorter non-zero pause becomes a "," silence token inside the IPU.
inline std::vector<Ipu> segment_ipus(std::span<const WordToken> words, const std::string& id_prefix = "ipu")
{
    std::vector<Ipu> out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        const auto& w = words[i];
        if (!(w.end_s > w.start_s)) {
            throw Error("invalid word timing: \"" + w.text + "\" ends at " + std::to_string(w.end_s)
                        + " but starts at " + std::to_string(w.start_s));
        }
        if (i > 0) {
            const double gap = w.start_s - words[i - 1].end_s;
            if (gap < -1e-9) {
                throw Error("invalid word timing: \"" + w.text + "\" overlaps the previous word");
            }
            if (gap > kMaxPause) {
                out.emplace_back();
            } else if (gap > 0.0) {
                WordToken silence;
                silence.text = std::string(kSilenceText);
                silence.start_s = words[i - 1].end_s;
                silence.end_s = w.start_s;
                silence.is_silence = true;
                out.back().words.push_back(std::move(silence));
            }
        } else {
            out.emplace_back();
        }
        out.back().words.push_back(w);
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].id = id_prefix + "-" + std::to_string(k);
    }
    return out;
}

/// Gives every word the prepared F0 frames whose timestamps fall in its
/// interval, truncated or zero-padded to `max_f0_len`.
inline Ipu assign_word_f0(Ipu ipu, const F0Track& track, std::size_t max_f0_len = kMaxF0Len)
{
    for (auto& w : ipu.words) {
        if (w.is_padding) {
            w.f0.assign(max_f0_len, 0.0);
            w.f0_length = 0;
            continue;
        }
        const auto range = frames_between(w.start_s, w.end_s, track.hop_s);
        if (range.last > track.frames.size()) {
            throw Error("timing out of range: \"" + w.text + "\" ends at " + std::to_string(w.end_s)
                        + " s but the F0 track lasts " + std::to_string(track.duration()) + " s");
        }
        const std::size_t n = std::min(range.size(), max_f0_len);
        w.f0.assign(max_f0_len, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            w.f0[i] = track.frames[range.first + i].hz;
        }
        w.f0_length = n;
    }
    return ipu;
}

/// Slices utterance-level target streams (24 fps, frame i at i/24 s) to the
/// IPU's time span, truncated to `max_out_len` frames.
inline Ipu assign_targets(Ipu ipu, const std::array<std::vector<double>, kStreamCount>& streams,
                          std::size_t max_out_len = kMaxOutLen)
{
    const auto range = frames_between(ipu.start_s(), ipu.end_s(), 1.0 / kTargetFps);
    const std::size_t available = streams[0].size();
    for (const auto& s : streams) {
        if (s.size() != available) {
            throw Error("target streams have different lengths");
        }
    }
    if (range.last > available) {
        throw Error("timing out of range: IPU " + ipu.id + " ends at " + std::to_string(ipu.end_s())
                    + " s but targets last " + std::to_string(static_cast<double>(available) / kTargetFps) + " s");
    }
    const std::size_t n = std::min(range.size(), max_out_len);
    for (std::size_t j = 0; j < kStreamCount; ++j) {
        ipu.targets[j].assign(streams[j].begin() + static_cast<std::ptrdiff_t>(range.first),
                              streams[j].begin() + static_cast<std::ptrdiff_t>(range.first + n));
    }
    ipu.frame_padding.assign(n, 0);
    return ipu;
}

// ---------------------------------------------------------------------------
// Padding

/// Appends padded frames (value 0, flag 1) until the IPU has `length` frames.
/// Longer IPUs are truncated.
inline Ipu pad_frames(Ipu ipu, std::size_t length)
{
    for (auto& s : ipu.targets) {
        s.resize(length, 0.0);
    }
    ipu.frame_padding.resize(length, 1);
    return ipu;
}

/// Appends padding word slots until the IPU has `count` words.
inline Ipu pad_words(Ipu ipu, std::size_t count, std::size_t max_f0_len = kMaxF0Len)
{
    const std::size_t emb_dim = ipu.words.empty() ? 0 : ipu.words.front().embedding.size();
    while (ipu.words.size() < count) {
        WordToken pad;
        pad.start_s = ipu.end_s();
        pad.end_s = pad.start_s;
        pad.f0.assign(max_f0_len, 0.0);
        pad.embedding.assign(emb_dim, 0.0);
        pad.is_padding = true;
        ipu.words.push_back(std::move(pad));
    }
    return ipu;
}

/// Removes padded frames and padding words, restoring the original lengths.
inline Ipu strip_padding(Ipu ipu)
{
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ipu.frame_padding.size(); ++i) {
        if (ipu.frame_padding[i] == 0) {
            keep.push_back(i);
        }
    }
    for (auto& s : ipu.targets) {
        std::vector<double> kept;
        kept.reserve(keep.size());
        for (std::size_t i : keep) {
            kept.push_back(s[i]);
        }
        s = std::move(kept);
    }
    ipu.frame_padding.assign(keep.size(), 0);
    std::erase_if(ipu.words, [](const WordToken& w) { return w.is_padding; });
    return ipu;
}

// ---------------------------------------------------------------------------
// Normalization and quantization

struct Range {
    double lo = 0.0;
    double hi = 1.0;
};

inline double normalize_value(double v, double lo, double hi)
{
    if (!(hi > lo)) {
        throw Error("degenerate range: [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

/// Maps values to [0, 1] with (v - lo) / (hi - lo), clamped.
inline std::vector<double> normalize_stream(std::span<const double> values, double lo, double hi)
{
    if (!(hi > lo)) {
        throw Error("degenerate range: [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) {
        out.push_back(normalize_value(v, lo, hi));
    }
    return out;
}

inline double denormalize_value(double v, double lo, double hi) { return lo + v * (hi - lo); }

/// Uniform scalar quantizer over [lo, hi] with `n_bins` equal-width bins.
struct QuantizerSpec {
    double lo = 0.0;
    double hi = 1.0;
    int n_bins = 256;

    void validate() const
    {
        if (!(lo < hi) || n_bins <= 0) {
            throw Error("invalid quantizer: lo=" + std::to_string(lo) + " hi=" + std::to_string(hi)
                        + " n_bins=" + std::to_string(n_bins));
        }
    }

    double max_round_trip_error() const { return (hi - lo) / (2.0 * n_bins); }
};

inline int quantize(double x, const QuantizerSpec& q)
{
    const double c = std::clamp(x, q.lo, q.hi);
    const auto bin = static_cast<int>(std::floor((c - q.lo) / (q.hi - q.lo) * q.n_bins));
    return std::min(bin, q.n_bins - 1);
}

/// Bin center.
inline double dequantize(int bin, const QuantizerSpec& q)
{
    return q.lo + (static_cast<double>(bin) + 0.5) * (q.hi - q.lo) / q.n_bins;
}

inline std::vector<int> quantize_stream(std::span<const double> values, const QuantizerSpec& q)
{
    std::vector<int> out;
    out.reserve(values.size());
    for (double v : values) {
        out.push_back(quantize(v, q));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stand-in word embeddings

/// Deterministic vector in [-1, 1]^dim seeded by a hash of `text`. Used where
/// real contextual embeddings are not available.
inline std::vector<double> pseudo_embed(std::string_view text, std::size_t dim)
{
    if (dim == 0) {
        throw Error("pseudo_embed: dimension must be positive");
    }
    std::uint64_t state = 0xcbf29ce484222325ULL; // FNV-1a offset basis
    for (unsigned char ch : text) {
        state ^= ch;
        state *= 0x100000001b3ULL;
    }
    std::vector<double> out(dim);
    for (auto& v : out) {
        // splitmix64
        state += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z ^= z >> 31;
        v = static_cast<double>(z >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    }
    return out;
}

} // namespace visage::features
