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

#include <array>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "visage/error.hpp"
#include "visage/evaluation/metrics.hpp"
#include "visage/features/features.hpp"
#include "visage/model/config.hpp"
#include "visage/model/model.hpp"
#include "visage/util.hpp"

namespace visage::evaluation {

using json = nlohmann::ordered_json;
using Streams = std::array<std::vector<double>, features::kStreamCount>;

enum class Condition { sd, si };

inline std::string_view condition_name(Condition c) { return c == Condition::sd ? "SD" : "SI"; }

inline Condition parse_condition(std::string_view s)
{
    if (s == "sd" || s == "SD") return Condition::sd;
    if (s == "si" || s == "SI") return Condition::si;
    throw Error("unknown condition \"" + std::string(s) + "\" (expected sd or si)");
}

enum class Aggregation {
    concatenated, ///< one metric over all frames of a stream
    per_ipu_mean, ///< metric per IPU, then the mean of the defined values
};

inline std::string_view aggregation_name(Aggregation a)
{
    return a == Aggregation::concatenated ? "concatenated" : "per-ipu-mean";
}

struct StreamMetrics {
    std::string stream;
    std::size_t frames = 0;
    double rmse = 0.0;
    std::optional<double> pcc;
    std::optional<double> ahr;  ///< never set for head rotation streams
    std::optional<double> nahr;
};

struct MetricsReport {
    Condition condition = Condition::sd;
    model::Ablation ablation = model::Ablation::none;
    Aggregation aggregation = Aggregation::concatenated;
    std::size_t ipus = 0;
    std::vector<StreamMetrics> streams;
};

namespace detail {

inline StreamMetrics score_stream(std::size_t j, std::span<const double> pred, std::span<const double> truth)
{
    StreamMetrics m;
    m.stream = std::string(features::kStreamNames[j]);
    m.frames = pred.size();
    m.rmse = rmse(pred, truth);
    m.pcc = pred.size() >= 2 ? pcc(pred, truth) : std::nullopt;
    if (features::is_action_unit(j)) {
        m.ahr = ahr(pred, truth);
        m.nahr = nahr(pred, truth);
    }
    return m;
}

inline std::optional<double> mean_defined(const std::vector<std::optional<double>>& values)
{
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& v : values) {
        if (v) {
            total += *v;
            ++n;
        }
    }
    return n == 0 ? std::nullopt : std::optional<double>(total / static_cast<double>(n));
}

} // namespace detail

/// Scores predicted curves against ground truth, IPU by IPU, for the first
/// `n_streams` streams.
inline MetricsReport score(std::span<const Streams> predictions, std::span<const Streams> truths,
                           std::size_t n_streams = features::kStreamCount,
                           Aggregation aggregation = Aggregation::concatenated)
{
    if (predictions.size() != truths.size()) {
        throw Error("score: " + std::to_string(predictions.size()) + " predictions for " + std::to_string(truths.size())
                    + " references");
    }
    if (truths.empty()) {
        throw Error("score: empty split");
    }
    MetricsReport report;
    report.aggregation = aggregation;
    report.ipus = truths.size();
    for (std::size_t j = 0; j < n_streams; ++j) {
        if (aggregation == Aggregation::concatenated) {
            std::vector<double> pred;
            std::vector<double> truth;
            for (std::size_t i = 0; i < truths.size(); ++i) {
                if (predictions[i][j].size() != truths[i][j].size()) {
                    throw Error("score: IPU " + std::to_string(i) + " stream " + std::string(features::kStreamNames[j])
                                + " has " + std::to_string(predictions[i][j].size()) + " predicted frames for "
                                + std::to_string(truths[i][j].size()));
                }
                pred.insert(pred.end(), predictions[i][j].begin(), predictions[i][j].end());
                truth.insert(truth.end(), truths[i][j].begin(), truths[i][j].end());
            }
            report.streams.push_back(detail::score_stream(j, pred, truth));
            continue;
        }
        std::vector<std::optional<double>> rmses, pccs, ahrs, nahrs;
        std::size_t frames = 0;
        for (std::size_t i = 0; i < truths.size(); ++i) {
            const auto m = detail::score_stream(j, predictions[i][j], truths[i][j]);
            frames += m.frames;
            rmses.emplace_back(m.rmse);
            pccs.push_back(m.pcc);
            ahrs.push_back(m.ahr);
            nahrs.push_back(m.nahr);
        }
        StreamMetrics m;
        m.stream = std::string(features::kStreamNames[j]);
        m.frames = frames;
        m.rmse = *detail::mean_defined(rmses);
        m.pcc = detail::mean_defined(pccs);
        if (features::is_action_unit(j)) {
            m.ahr = detail::mean_defined(ahrs);
            m.nahr = detail::mean_defined(nahrs);
        }
        report.streams.push_back(std::move(m));
    }
    return report;
}

/// Unpadded ground-truth curves of an IPU.
inline Streams truth_curves(const features::Ipu& ipu)
{
    Streams out;
    for (std::size_t j = 0; j < features::kStreamCount; ++j) {
        for (std::size_t f = 0; f < ipu.targets[j].size(); ++f) {
            if (f >= ipu.frame_padding.size() || ipu.frame_padding[f] == 0) {
                out[j].push_back(ipu.targets[j][f]);
            }
        }
    }
    return out;
}

/// Generates every IPU for as many frames as its reference has and scores
/// the dequantized curves.
inline MetricsReport evaluate(const model::Model& model, std::span<const features::Ipu> ipus, Condition condition,
                              Aggregation aggregation = Aggregation::concatenated)
{
    if (ipus.empty()) {
        throw Error("evaluate: empty split");
    }
    std::vector<Streams> preds;
    std::vector<Streams> truths;
    for (const auto& ipu : ipus) {
        Streams truth = truth_curves(ipu);
        const std::size_t n = truth[0].size();
        if (n == 0) {
            throw Error("evaluate: IPU \"" + ipu.id + "\" has no reference frames");
        }
        const auto gen = model.generate(ipu, n);
        Streams pred;
        for (std::size_t j = 0; j < gen.curves.size(); ++j) {
            pred[j] = gen.curves[j];
        }
        preds.push_back(std::move(pred));
        truths.push_back(std::move(truth));
    }
    auto report = score(preds, truths, model.config().n_streams, aggregation);
    report.condition = condition;
    report.ablation = model.config().ablation;
    return report;
}

inline json report_to_json(const MetricsReport& r)
{
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json("undefined"); };
    json j;
    j["condition"] = condition_name(r.condition);
    j["ablation"] = model::ablation_name(r.ablation);
    j["aggregation"] = aggregation_name(r.aggregation);
    j["ipus"] = r.ipus;
    json streams = json::array();
    for (const auto& s : r.streams) {
        json e;
        e["stream"] = s.stream;
        e["frames"] = s.frames;
        e["rmse"] = s.rmse;
        e["pcc"] = opt(s.pcc);
        if (features::is_action_unit(features::stream_index(s.stream))) {
            e["ahr"] = opt(s.ahr);
            e["nahr"] = opt(s.nahr);
        } else {
            e["ahr"] = "NA";
            e["nahr"] = "NA";
        }
        streams.push_back(std::move(e));
    }
    j["streams"] = streams;
    return j;
}

namespace detail {

inline std::string cell(const std::optional<double>& v, bool applicable, int decimals)
{
    if (!applicable) {
        return "NA";
    }
    if (!v) {
        return "undefined";
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, *v);
    return buf;
}

} // namespace detail

/// One row per stream: stream,RMSE,PCC,AHR,NAHR.
inline std::string report_to_csv(const MetricsReport& r)
{
    std::ostringstream os;
    os << "stream,RMSE,PCC,AHR,NAHR\n";
    for (const auto& s : r.streams) {
        const bool au = features::is_action_unit(features::stream_index(s.stream));
        os << s.stream << ',' << format_double(s.rmse) << ','
           << (s.pcc ? format_double(*s.pcc) : std::string("undefined")) << ','
           << (au ? (s.ahr ? format_double(*s.ahr) : "undefined") : "NA") << ','
           << (au ? (s.nahr ? format_double(*s.nahr) : "undefined") : "NA") << '\n';
    }
    return os.str();
}

/// Fixed-width text table for terminals.
inline std::string report_to_table(const MetricsReport& r)
{
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof(line), "condition %s, ablation %s, %zu IPUs (%s)\n",
                  std::string(condition_name(r.condition)).c_str(), std::string(model::ablation_name(r.ablation)).c_str(),
                  r.ipus, std::string(aggregation_name(r.aggregation)).c_str());
    os << line;
    std::snprintf(line, sizeof(line), "%-6s %8s %10s %10s %10s\n", "stream", "RMSE", "PCC", "AHR", "NAHR");
    os << line;
    for (const auto& s : r.streams) {
        const bool au = features::is_action_unit(features::stream_index(s.stream));
        std::snprintf(line, sizeof(line), "%-6s %8.4f %10s %10s %10s\n", s.stream.c_str(), s.rmse,
                      detail::cell(s.pcc, true, 4).c_str(), detail::cell(s.ahr, au, 1).c_str(),
                      detail::cell(s.nahr, au, 1).c_str());
        os << line;
    }
    return os.str();
}

} // namespace visage::evaluation
