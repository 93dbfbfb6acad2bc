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

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace visage {

/// Fisher-Yates shuffle with an explicit index draw so the permutation
/// depends only on the generator state, not on the standard library.
template <class T>
void shuffle_in_place(std::span<T> items, std::mt19937_64& rng)
{
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v)
{
    char buf[32];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) {
            break;
        }
    }
    return buf;
}

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

/// Level from the VISAGE_LOG environment variable (default: info).
inline LogLevel log_level()
{
    static const LogLevel level = [] {
        const char* env = std::getenv("VISAGE_LOG");
        const std::string_view v = env != nullptr ? env : "info";
        if (v == "error") return LogLevel::error;
        if (v == "warn") return LogLevel::warn;
        if (v == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

inline void log(LogLevel level, std::string_view message)
{
    static constexpr const char* kNames[] = {"error", "warn", "info", "debug"};
    if (static_cast<int>(level) <= static_cast<int>(log_level())) {
        std::cerr << "[visage " << kNames[static_cast<int>(level)] << "] " << message << '\n';
    }
}

} // namespace visage
