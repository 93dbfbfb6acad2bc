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

// On-disk formats and the preprocessing pipeline.
//
// Raw utterances (JSON lines, one utterance per line):
//   {"id", "speaker_id", "f0": [Hz per 5 ms frame, 0 = unvoiced],
//    "words": [{"text", "start_s", "end_s"}],
//    "targets": {"AU01": [...24 fps...], ..., "RZ": [...]}}
//
// Dataset (JSON lines, one IPU per line, model-ready values in [0, 1]):
//   {"id", "speaker_id", "split",
//    "words": [{"text", "start_s", "end_s", "f0": [...], "emb": [...]}],
//    "targets": {"AU01": [...], ..., "RZ": [...]}}
// F0 and target arrays are stored unpadded; padding is applied on load.
//
// Sidecar (JSON): per-stream normalization bounds taken from the training
// split plus the quantizer settings.

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "visage/features/features.hpp"
#include "visage/util.hpp"

namespace visage::features {

using json = nlohmann::ordered_json;

struct RawWord {
    std::string text;
    double start_s = 0.0;
    double end_s = 0.0;
};

struct RawUtterance {
    std::string id;
    std::string speaker_id;
    std::vector<double> f0;
    std::vector<RawWord> words;
    std::array<std::vector<double>, kStreamCount> targets;
};

namespace detail {

template <class T>
T field(const json& obj, const char* key, const std::string& where)
{
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw Error(where + ": missing field \"" + key + "\"");
    }
    try {
        return it->template get<T>();
    } catch (const json::exception&) {
        throw Error(where + ": field \"" + key + "\" has the wrong type");
    }
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    return lines;
}

inline bool blank(const std::string& s) { return s.find_first_not_of(" \t\r") == std::string::npos; }

inline json parse_line(const std::string& text, const std::string& where)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(where + ": malformed JSON (" + e.what() + ")");
    }
}

inline json targets_to_json(const std::array<std::vector<double>, kStreamCount>& targets)
{
    json t = json::object();
    for (std::size_t j = 0; j < kStreamCount; ++j) {
        t[std::string(kStreamNames[j])] = targets[j];
    }
    return t;
}

inline std::array<std::vector<double>, kStreamCount> targets_from_json(const json& obj, const std::string& where)
{
    auto t = field<json>(obj, "targets", where);
    std::array<std::vector<double>, kStreamCount> out;
    for (std::size_t j = 0; j < kStreamCount; ++j) {
        out[j] = field<std::vector<double>>(t, std::string(kStreamNames[j]).c_str(), where + " targets");
    }
    for (std::size_t j = 1; j < kStreamCount; ++j) {
        if (out[j].size() != out[0].size()) {
            throw Error(where + ": target streams have different lengths");
        }
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Raw utterances

inline RawUtterance parse_raw_utterance(const std::string& text, const std::string& where)
{
    const json obj = detail::parse_line(text, where);
    RawUtterance u;
    u.id = detail::field<std::string>(obj, "id", where);
    u.speaker_id = detail::field<std::string>(obj, "speaker_id", where);
    u.f0 = detail::field<std::vector<double>>(obj, "f0", where);
    for (const auto& w : detail::field<json>(obj, "words", where)) {
        RawWord word;
        word.text = detail::field<std::string>(w, "text", where + " word");
        word.start_s = detail::field<double>(w, "start_s", where + " word \"" + word.text + "\"");
        word.end_s = detail::field<double>(w, "end_s", where + " word \"" + word.text + "\"");
        u.words.push_back(std::move(word));
    }
    u.targets = detail::targets_from_json(obj, where);
    return u;
}

inline std::vector<RawUtterance> read_raw_utterances(const std::filesystem::path& path)
{
    std::vector<RawUtterance> out;
    const auto lines = detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::blank(lines[i])) {
            continue;
        }
        out.push_back(parse_raw_utterance(lines[i], path.filename().string() + " line " + std::to_string(i + 1)));
    }
    return out;
}

inline json raw_utterance_to_json(const RawUtterance& u)
{
    json obj;
    obj["id"] = u.id;
    obj["speaker_id"] = u.speaker_id;
    obj["f0"] = u.f0;
    json words = json::array();
    for (const auto& w : u.words) {
        words.push_back({{"text", w.text}, {"start_s", w.start_s}, {"end_s", w.end_s}});
    }
    obj["words"] = std::move(words);
    obj["targets"] = detail::targets_to_json(u.targets);
    return obj;
}

inline void write_raw_utterances(const std::filesystem::path& path, std::span<const RawUtterance> utterances)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    for (const auto& u : utterances) {
        out << raw_utterance_to_json(u).dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Embedding sources

/// Returns the embedding of word `index` (position among the utterance's
/// spoken words) of utterance `utterance`. Silence tokens ask for `text` ","
/// with index -1.
using EmbeddingSource = std::function<std::vector<double>(const std::string& utterance, long index, const std::string& text)>;

inline EmbeddingSource pseudo_embeddings(std::size_t dim)
{
    return [dim](const std::string&, long, const std::string& text) { return pseudo_embed(text, dim); };
}

/// Loads an `.emb` sidecar: JSON lines of {"utt", "word", "emb"} for spoken
/// words and {"text": ",", "emb"} for the silence token.
inline EmbeddingSource embedding_file(const std::filesystem::path& path)
{
    auto by_word = std::make_shared<std::map<std::pair<std::string, long>, std::vector<double>>>();
    auto by_text = std::make_shared<std::map<std::string, std::vector<double>>>();
    const auto lines = detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::blank(lines[i])) {
            continue;
        }
        const std::string where = path.filename().string() + " line " + std::to_string(i + 1);
        const json obj = detail::parse_line(lines[i], where);
        auto emb = detail::field<std::vector<double>>(obj, "emb", where);
        if (obj.contains("utt")) {
            (*by_word)[{detail::field<std::string>(obj, "utt", where), detail::field<long>(obj, "word", where)}] = std::move(emb);
        } else {
            (*by_text)[detail::field<std::string>(obj, "text", where)] = std::move(emb);
        }
    }
    return [by_word, by_text](const std::string& utt, long index, const std::string& text) {
        if (auto it = by_word->find({utt, index}); it != by_word->end()) {
            return it->second;
        }
        if (auto it = by_text->find(text); it != by_text->end()) {
            return it->second;
        }
        throw Error("no embedding for utterance " + utt + " word " + std::to_string(index) + " (\"" + text + "\")");
    };
}

// ---------------------------------------------------------------------------
// Sidecar

struct DatasetMeta {
    std::array<Range, kStreamCount> target_bounds{};
    Range f0_bounds{kF0Min, kF0Max};
    QuantizerSpec quantizer{};
    std::size_t max_f0_len = kMaxF0Len;
    std::size_t max_out_len = kMaxOutLen;
    std::size_t d_emb = 768;
};

inline json meta_to_json(const DatasetMeta& m)
{
    json bounds;
    bounds["F0"] = {m.f0_bounds.lo, m.f0_bounds.hi};
    for (std::size_t j = 0; j < kStreamCount; ++j) {
        bounds[std::string(kStreamNames[j])] = {m.target_bounds[j].lo, m.target_bounds[j].hi};
    }
    json obj;
    obj["format"] = "visage-dataset";
    obj["version"] = 1;
    obj["bounds"] = std::move(bounds);
    obj["quantizer"] = {{"lo", m.quantizer.lo}, {"hi", m.quantizer.hi}, {"n_bins", m.quantizer.n_bins}};
    obj["frame_rate"] = kTargetFps;
    obj["f0_hop_s"] = kF0Hop;
    obj["max_f0_len"] = m.max_f0_len;
    obj["max_out_len"] = m.max_out_len;
    obj["d_emb"] = m.d_emb;
    return obj;
}

inline DatasetMeta meta_from_json(const json& obj)
{
    const std::string where = "sidecar";
    if (detail::field<std::string>(obj, "format", where) != "visage-dataset") {
        throw Error("sidecar: not a visage dataset sidecar");
    }
    if (detail::field<int>(obj, "version", where) != 1) {
        throw Error("sidecar: unsupported version");
    }
    DatasetMeta m;
    const auto bounds = detail::field<json>(obj, "bounds", where);
    auto range = [&](const std::string& key) {
        auto v = detail::field<std::vector<double>>(bounds, key.c_str(), where + " bounds");
        if (v.size() != 2) {
            throw Error("sidecar: bounds for " + key + " must be [lo, hi]");
        }
        return Range{v[0], v[1]};
    };
    m.f0_bounds = range("F0");
    for (std::size_t j = 0; j < kStreamCount; ++j) {
        m.target_bounds[j] = range(std::string(kStreamNames[j]));
    }
    const auto q = detail::field<json>(obj, "quantizer", where);
    m.quantizer = {detail::field<double>(q, "lo", where), detail::field<double>(q, "hi", where),
                   detail::field<int>(q, "n_bins", where)};
    m.quantizer.validate();
    m.max_f0_len = detail::field<std::size_t>(obj, "max_f0_len", where);
    m.max_out_len = detail::field<std::size_t>(obj, "max_out_len", where);
    m.d_emb = detail::field<std::size_t>(obj, "d_emb", where);
    return m;
}

inline void save_meta(const std::filesystem::path& path, const DatasetMeta& m)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    out << meta_to_json(m).dump(2) << '\n';
}

inline DatasetMeta load_meta(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    try {
        return meta_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw Error("sidecar " + path.string() + ": malformed JSON (" + e.what() + ")");
    }
}

// ---------------------------------------------------------------------------
// Dataset JSONL

inline json ipu_to_json(const Ipu& ipu)
{
    const Ipu clean = strip_padding(ipu);
    json obj;
    obj["id"] = clean.id;
    obj["speaker_id"] = clean.speaker_id;
    obj["split"] = std::string(split_name(clean.split));
    json words = json::array();
    for (const auto& w : clean.words) {
        std::vector<double> f0(w.f0.begin(), w.f0.begin() + static_cast<std::ptrdiff_t>(std::min(w.f0_length, w.f0.size())));
        words.push_back({{"text", w.text}, {"start_s", w.start_s}, {"end_s", w.end_s}, {"f0", f0}, {"emb", w.embedding}});
    }
    obj["words"] = std::move(words);
    obj["targets"] = detail::targets_to_json(clean.targets);
    return obj;
}

inline Ipu ipu_from_json(const json& obj, const std::string& where, std::size_t max_f0_len = kMaxF0Len)
{
    Ipu ipu;
    ipu.id = detail::field<std::string>(obj, "id", where);
    ipu.speaker_id = detail::field<std::string>(obj, "speaker_id", where);
    ipu.split = parse_split(detail::field<std::string>(obj, "split", where));
    for (const auto& w : detail::field<json>(obj, "words", where)) {
        WordToken word;
        word.text = detail::field<std::string>(w, "text", where + " word");
        const std::string wwhere = where + " word \"" + word.text + "\"";
        word.start_s = detail::field<double>(w, "start_s", wwhere);
        word.end_s = detail::field<double>(w, "end_s", wwhere);
        auto f0 = detail::field<std::vector<double>>(w, "f0", wwhere);
        word.f0_length = std::min(f0.size(), max_f0_len);
        f0.resize(max_f0_len, 0.0);
        word.f0 = std::move(f0);
        word.embedding = detail::field<std::vector<double>>(w, "emb", wwhere);
        word.is_silence = word.text == kSilenceText;
        ipu.words.push_back(std::move(word));
    }
    if (ipu.words.empty()) {
        throw Error(where + ": IPU has no words");
    }
    ipu.targets = detail::targets_from_json(obj, where);
    ipu.frame_padding.assign(ipu.targets[0].size(), 0);
    return ipu;
}

inline void write_dataset(const std::filesystem::path& path, std::span<const Ipu> ipus)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    for (const auto& ipu : ipus) {
        out << ipu_to_json(ipu).dump() << '\n';
    }
}

inline std::vector<Ipu> read_dataset(const std::filesystem::path& path, std::size_t max_f0_len = kMaxF0Len)
{
    std::vector<Ipu> out;
    const auto lines = detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::blank(lines[i])) {
            continue;
        }
        const std::string where = path.filename().string() + " line " + std::to_string(i + 1);
        out.push_back(ipu_from_json(detail::parse_line(lines[i], where), where, max_f0_len));
    }
    return out;
}

inline std::vector<Ipu> select_split(std::span<const Ipu> ipus, Split split)
{
    std::vector<Ipu> out;
    for (const auto& ipu : ipus) {
        if (ipu.split == split) {
            out.push_back(ipu);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

struct PreprocessOptions {
    std::size_t max_f0_len = kMaxF0Len;
    std::size_t max_out_len = kMaxOutLen;
    int n_bins = 256;
    std::size_t d_emb = 768;
    std::uint64_t seed = 1;
    std::vector<std::string> si_speakers; // held out entirely as test_SI
    double train_fraction = 0.8;
    double val_fraction = 0.1;
};

struct Corpus {
    std::vector<Ipu> ipus;
    DatasetMeta meta;

    std::size_t spoken_word_count() const
    {
        std::size_t n = 0;
        for (const auto& ipu : ipus) {
            for (const auto& w : ipu.words) {
                n += (!w.is_silence && !w.is_padding) ? 1 : 0;
            }
        }
        return n;
    }
};

/// Segments, windows, splits, normalizes and quantizes raw utterances.
/// Normalization bounds come from the training split only.
inline Corpus preprocess(std::span<const RawUtterance> utterances, const EmbeddingSource& embed,
                         const PreprocessOptions& opt)
{
    Corpus corpus;
    corpus.meta.max_f0_len = opt.max_f0_len;
    corpus.meta.max_out_len = opt.max_out_len;
    corpus.meta.d_emb = opt.d_emb;
    corpus.meta.quantizer = {0.0, 1.0, opt.n_bins};
    corpus.meta.quantizer.validate();

    const std::set<std::string> si(opt.si_speakers.begin(), opt.si_speakers.end());
    for (const auto& u : utterances) {
        if (u.words.empty()) {
            continue;
        }
        std::vector<WordToken> words;
        for (const auto& w : u.words) {
            WordToken t;
            t.text = w.text;
            t.start_s = w.start_s;
            t.end_s = w.end_s;
            words.push_back(std::move(t));
        }
        const F0Track track = prepare_f0(F0Track::from_hz(u.f0));
        long spoken = 0;
        for (auto ipu : segment_ipus(words, u.id)) {
            ipu.speaker_id = u.speaker_id;
            for (auto& w : ipu.words) {
                w.embedding = w.is_silence ? embed(u.id, -1, w.text) : embed(u.id, spoken++, w.text);
                if (w.embedding.size() != opt.d_emb) {
                    throw Error("embedding for \"" + w.text + "\" in " + u.id + " has dimension "
                                + std::to_string(w.embedding.size()) + ", expected " + std::to_string(opt.d_emb));
                }
            }
            ipu = assign_word_f0(std::move(ipu), track, opt.max_f0_len);
            ipu = assign_targets(std::move(ipu), u.targets, opt.max_out_len);
            ipu.split = si.contains(u.speaker_id) ? Split::test_si : Split::train;
            corpus.ipus.push_back(std::move(ipu));
        }
    }

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < corpus.ipus.size(); ++i) {
        if (corpus.ipus[i].split != Split::test_si) {
            order.push_back(i);
        }
    }
    std::mt19937_64 rng(opt.seed);
    shuffle_in_place(std::span<std::size_t>(order), rng);
    const auto n = static_cast<double>(order.size());
    const auto n_train = static_cast<std::size_t>(std::llround(opt.train_fraction * n));
    const auto n_val = static_cast<std::size_t>(std::llround(opt.val_fraction * n));
    for (std::size_t k = 0; k < order.size(); ++k) {
        corpus.ipus[order[k]].split = k < n_train ? Split::train : (k < n_train + n_val ? Split::val_sd : Split::test_sd);
    }

    // Bounds from the training split.
    Range f0{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    std::array<Range, kStreamCount> tb;
    tb.fill(f0);
    bool any_train = false;
    for (const auto& ipu : corpus.ipus) {
        if (ipu.split != Split::train) {
            continue;
        }
        any_train = true;
        for (const auto& w : ipu.words) {
            for (std::size_t i = 0; i < w.f0_length; ++i) {
                f0.lo = std::min(f0.lo, w.f0[i]);
                f0.hi = std::max(f0.hi, w.f0[i]);
            }
        }
        for (std::size_t j = 0; j < kStreamCount; ++j) {
            for (double v : ipu.targets[j]) {
                tb[j].lo = std::min(tb[j].lo, v);
                tb[j].hi = std::max(tb[j].hi, v);
            }
        }
    }
    if (!any_train) {
        throw Error("empty split: no IPU was assigned to the training split");
    }
    corpus.meta.f0_bounds = f0;
    corpus.meta.target_bounds = tb;

    const QuantizerSpec& q = corpus.meta.quantizer;
    for (auto& ipu : corpus.ipus) {
        for (auto& w : ipu.words) {
            for (std::size_t i = 0; i < w.f0_length; ++i) {
                w.f0[i] = dequantize(quantize(normalize_value(w.f0[i], f0.lo, f0.hi), q), q);
            }
        }
        for (std::size_t j = 0; j < kStreamCount; ++j) {
            try {
                ipu.targets[j] = normalize_stream(ipu.targets[j], tb[j].lo, tb[j].hi);
            } catch (const Error& e) {
                throw Error(std::string(kStreamNames[j]) + ": " + e.what());
            }
        }
    }
    return corpus;
}

} // namespace visage::features
