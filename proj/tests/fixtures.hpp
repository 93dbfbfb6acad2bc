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

// Shared test fixtures.

#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "visage/features/dataset.hpp"
#include "visage/model/config.hpp"

namespace visage::testing {

/// Three hand-written utterances. Hand count: 5 IPUs, 7 spoken words and one
/// silence token.
///   utt-a (spk1): hello [0.10,0.40] there [0.50,0.80] | friend [1.10,1.40]
///   utt-b (spk2): yes [0.05,0.35]
///   utt-c (spk1): one [0.10,0.30] two [0.30,0.60] | three [0.90,1.20]
inline std::vector<features::RawUtterance> tiny_raw_fixture()
{
    auto make = [](std::string id, std::string speaker, std::vector<features::RawWord> words, double phase) {
        features::RawUtterance u;
        u.id = std::move(id);
        u.speaker_id = std::move(speaker);
        u.words = std::move(words);
        u.f0.assign(300, 0.0);
        for (std::size_t i = 0; i < u.f0.size(); ++i) {
            u.f0[i] = (i % 9 == 4) ? 0.0 : 140.0 + 60.0 * std::sin(0.02 * static_cast<double>(i) + phase);
        }
        u.f0[0] = 20.0; // clipped up to 50 Hz
        for (std::size_t j = 0; j < features::kStreamCount; ++j) {
            u.targets[j].resize(36);
            for (std::size_t f = 0; f < 36; ++f) {
                u.targets[j][f] = 1.0 + static_cast<double>(j) + std::sin(0.3 * static_cast<double>(f) + phase + static_cast<double>(j));
            }
        }
        return u;
    };
    return {
        make("utt-a", "spk1", {{"hello", 0.10, 0.40}, {"there", 0.50, 0.80}, {"friend", 1.10, 1.40}}, 0.0),
        make("utt-b", "spk2", {{"yes", 0.05, 0.35}}, 1.0),
        make("utt-c", "spk1", {{"one", 0.10, 0.30}, {"two", 0.30, 0.60}, {"three", 0.90, 1.20}}, 2.0),
    };
}

/// Random model-ready IPU sized for `cfg`: `n_words` words (the first one
/// always voiced), `n_frames` target frames in [0, 1].
inline features::Ipu random_ipu(const model::ModelConfig& cfg, std::mt19937_64& rng, std::size_t n_words,
                                std::size_t n_frames)
{
    auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    features::Ipu ipu;
    ipu.id = "random";
    double t = 0.0;
    for (std::size_t w = 0; w < n_words; ++w) {
        features::WordToken word;
        word.text = "w" + std::to_string(w);
        word.start_s = t;
        word.end_s = t + 0.1 + 0.2 * unit();
        t = word.end_s;
        word.f0_length = w == 0 ? 1 + rng() % cfg.max_f0_len : rng() % (cfg.max_f0_len + 1);
        word.f0.assign(cfg.max_f0_len, 0.0);
        for (std::size_t k = 0; k < word.f0_length; ++k) {
            word.f0[k] = unit();
        }
        word.embedding.resize(cfg.d_emb);
        for (double& e : word.embedding) {
            e = 2.0 * unit() - 1.0;
        }
        ipu.words.push_back(std::move(word));
    }
    for (auto& stream : ipu.targets) {
        stream.resize(n_frames);
        for (double& v : stream) {
            v = unit();
        }
    }
    ipu.frame_padding.assign(n_frames, 0);
    return ipu;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("visage_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace visage::testing
