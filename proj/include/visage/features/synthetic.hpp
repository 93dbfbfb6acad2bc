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

// Synthetic corpora for tests, demos and scaled-down experiments.

#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "visage/features/dataset.hpp"
#include "visage/features/features.hpp"

namespace visage::features {

struct SyntheticOptions {
    std::size_t utterances = 12;
    std::size_t speakers = 3;
    std::size_t min_words = 3;
    std::size_t max_words = 8;
    std::uint64_t seed = 7;
};

/// Raw utterances with plausible timing, partly unvoiced F0 in Hz and target
/// streams in raw units (AU intensity 0..5, head rotation in radians) that
/// depend on both the words and the pitch.
inline std::vector<RawUtterance> synthetic_raw_corpus(const SyntheticOptions& opt = {})
{
    static const std::vector<std::string> vocab = {"so",   "we",    "think", "that", "this",  "model", "can",
                                                   "move", "faces", "with",  "the",  "voice", "really", "very",
                                                   "well", "and",   "now",   "you",  "see",   "it"};
    std::mt19937_64 rng(opt.seed);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

    std::vector<RawUtterance> out;
    for (std::size_t u = 0; u < opt.utterances; ++u) {
        RawUtterance utt;
        utt.id = "utt" + std::to_string(u);
        const std::size_t speaker = u % opt.speakers;
        utt.speaker_id = "spk" + std::to_string(speaker);
        const double base_hz = 110.0 + 40.0 * static_cast<double>(speaker);

        const std::size_t n_words = opt.min_words + pick(opt.max_words - opt.min_words + 1);
        double t = 0.1;
        std::vector<double> word_phase;
        for (std::size_t w = 0; w < n_words; ++w) {
            RawWord word;
            word.text = vocab[pick(vocab.size())];
            word.start_s = t;
            word.end_s = t + uniform(0.15, 0.45);
            t = word.end_s;
            const double r = uniform(0.0, 1.0);
            t += r < 0.5 ? 0.0 : (r < 0.8 ? uniform(0.03, 0.15) : uniform(0.3, 0.5));
            utt.words.push_back(std::move(word));
        }
        const double total = t + 0.1;

        const auto n_f0 = static_cast<std::size_t>(std::ceil(total / kF0Hop));
        utt.f0.assign(n_f0, 0.0);
        for (const auto& w : utt.words) {
            const auto range = frames_between(w.start_s, w.end_s, kF0Hop);
            const double slope = uniform(-80.0, 80.0);
            for (std::size_t i = range.first; i < range.last && i < n_f0; ++i) {
                const double local = static_cast<double>(i - range.first) / std::max<double>(1.0, static_cast<double>(range.size()));
                // roughly one frame in eight is unvoiced, plus the word edges
                const bool voiced = (i - range.first) > 2 && (i + 2) < range.last && pick(8) != 0;
                utt.f0[i] = voiced ? base_hz + slope * local + 20.0 * std::sin(7.0 * local) : 0.0;
            }
        }

        const auto n_frames = static_cast<std::size_t>(std::ceil(total * kTargetFps));
        for (std::size_t j = 0; j < kStreamCount; ++j) {
            utt.targets[j].assign(n_frames, 0.0);
        }
        for (std::size_t f = 0; f < n_frames; ++f) {
            const double tau = static_cast<double>(f) / kTargetFps;
            const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(tau / kF0Hop), n_f0 - 1);
            const double pitch = utt.f0[k] > 0.0 ? (utt.f0[k] - base_hz) / 80.0 : 0.0;
            for (std::size_t j = 0; j < kStreamCount; ++j) {
                const double wave = std::sin(2.0 * std::numbers::pi * (0.4 + 0.1 * static_cast<double>(j)) * tau
                                             + static_cast<double>(u + j));
                if (is_action_unit(j)) {
                    utt.targets[j][f] = std::clamp(2.0 + 1.5 * wave + 0.8 * pitch, 0.0, 5.0);
                } else {
                    utt.targets[j][f] = 0.2 * wave + 0.05 * pitch;
                }
            }
        }
        out.push_back(std::move(utt));
    }
    return out;
}

struct OverfitOptions {
    std::size_t ipus = 8;
    std::size_t d_emb = 16;
    std::size_t max_f0_len = 64;
    std::size_t max_out_len = 32;
};

/// Model-ready IPUs for memorization experiments. IPU i pairs text i/2 with
/// pitch contour i%2, so each text appears with both contours and each
/// contour with several texts; the targets depend on both.
inline std::vector<Ipu> overfit_corpus(const OverfitOptions& opt = {})
{
    static const std::vector<std::vector<std::string>> texts = {
        {"we", "see", "it"}, {"this", "can", "move"}, {"very", "well", "now"}, {"the", "voice", "so"}};
    static const std::vector<std::vector<double>> durations = {
        {0.20, 0.25, 0.22}, {0.18, 0.30, 0.20}, {0.26, 0.22, 0.24}, {0.21, 0.19, 0.28}};
    std::vector<Ipu> out;
    for (std::size_t i = 0; i < opt.ipus; ++i) {
        const std::size_t text = (i / 2) % texts.size();
        const int contour = static_cast<int>(i % 2);
        Ipu ipu;
        ipu.id = "overfit-" + std::to_string(i);
        ipu.speaker_id = "spk" + std::to_string(contour);
        double t = 0.0;
        for (std::size_t w = 0; w < texts[text].size(); ++w) {
            WordToken word;
            word.text = texts[text][w];
            word.start_s = t;
            word.end_s = t + durations[text][w];
            t = word.end_s;
            const auto n = std::min(frames_between(word.start_s, word.end_s, kF0Hop).size(), opt.max_f0_len);
            word.f0.assign(opt.max_f0_len, 0.0);
            for (std::size_t k = 0; k < n; ++k) {
                const double x = static_cast<double>(k) / static_cast<double>(n);
                word.f0[k] = contour == 0 ? 0.2 + 0.3 * x : 0.8 - 0.3 * x;
            }
            word.f0_length = n;
            word.embedding = pseudo_embed(word.text, opt.d_emb);
            ipu.words.push_back(std::move(word));
        }
        const std::size_t frames = std::min(frames_between(0.0, t, 1.0 / kTargetFps).size(), opt.max_out_len);
        const double phase = 1.3 * static_cast<double>(text);
        const double sign = contour == 0 ? 1.0 : -1.0;
        for (std::size_t j = 0; j < kStreamCount; ++j) {
            ipu.targets[j].resize(frames);
            for (std::size_t f = 0; f < frames; ++f) {
                const double tau = static_cast<double>(f) / kTargetFps;
                const double jd = static_cast<double>(j);
                const double v = 0.5 + 0.3 * std::sin(2.0 * std::numbers::pi * (0.6 + 0.15 * jd) * tau + phase + 0.7 * jd)
                                 + 0.15 * sign * std::cos(2.0 * std::numbers::pi * 0.9 * tau + 0.3 * jd);
                ipu.targets[j][f] = std::clamp(v, 0.02, 0.98);
            }
        }
        ipu.frame_padding.assign(frames, 0);
        out.push_back(std::move(ipu));
    }
    return out;
}

} // namespace visage::features
