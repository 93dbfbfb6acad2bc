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

// Operator commands behind the `visage` binary. Each command validates its
// whole configuration before touching the filesystem and writes nothing
// that depends on wall-clock time, so reruns are byte-identical.
//
// Run config (JSON, relative paths resolve against the file's directory):
//   {"preset": "default" | "toy" | "tiny",
//    "model": {ModelConfig keys}, "train": {TrainConfig keys except seed},
//    "paths": {"raw", "embeddings", "dataset", "sidecar", "checkpoints", "reports"},
//    "seed": N, "si_speakers": [...], "splits": {"train": 0.8, "val": 0.1}}

#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "visage/error.hpp"
#include "visage/evaluation/report.hpp"
#include "visage/features/dataset.hpp"
#include "visage/model/checkpoint.hpp"
#include "visage/model/config.hpp"
#include "visage/model/model.hpp"
#include "visage/training/trainer.hpp"
#include "visage/util.hpp"

namespace visage::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Paths {
    fs::path raw;         ///< raw utterances, preprocess input
    fs::path embeddings;  ///< `.emb` sidecar; unused with --pseudo-embeddings
    fs::path dataset;     ///< model-ready IPUs
    fs::path sidecar;     ///< normalization bounds; defaults next to the dataset
    fs::path checkpoints; ///< directory
    fs::path reports;     ///< directory
};

struct RunConfig {
    std::string preset = "default";
    model::ModelConfig model;
    training::TrainConfig train;
    Paths paths;
    std::uint64_t seed = 0;
    std::vector<std::string> si_speakers;
    double train_fraction = 0.8;
    double val_fraction = 0.1;
};

inline model::ModelConfig preset_config(std::string_view name)
{
    if (name == "default") return {};
    if (name == "toy") return model::ModelConfig::toy();
    if (name == "tiny") return model::ModelConfig::tiny();
    throw Error("unknown preset \"" + std::string(name) + "\" (expected default, toy or tiny)");
}

namespace detail {

inline void require_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where)
{
    if (!j.is_object()) {
        throw Error(where + ": expected a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw Error(where + ": unknown key \"" + key + "\"");
        }
    }
}

inline std::string relative_or_absolute(const fs::path& p, const fs::path& base)
{
    return p.empty() ? std::string() : fs::proximate(p, base).generic_string();
}

} // namespace detail

/// Parses a run config. Unknown keys at any level are errors.
inline RunConfig run_config_from_json(const json& j, const fs::path& base_dir = {})
{
    detail::require_keys(j, {"preset", "model", "train", "paths", "seed", "si_speakers", "splits"}, "run config");
    RunConfig c;
    try {
        c.preset = j.value("preset", std::string("default"));
        c.seed = j.value("seed", std::uint64_t{0});
        c.si_speakers = j.value("si_speakers", std::vector<std::string>{});
        if (j.contains("splits")) {
            const auto& s = j["splits"];
            detail::require_keys(s, {"train", "val"}, "run config splits");
            c.train_fraction = s.value("train", c.train_fraction);
            c.val_fraction = s.value("val", c.val_fraction);
        }
    } catch (const json::exception& e) {
        throw Error(std::string("run config: ") + e.what());
    }
    if (!(c.train_fraction > 0.0) || c.val_fraction < 0.0 || c.train_fraction + c.val_fraction > 1.0) {
        throw Error("run config: splits need train > 0, val >= 0 and train + val <= 1");
    }
    c.model = model::config_from_json(j.value("model", json::object()), preset_config(c.preset));
    const json train = j.value("train", json::object());
    if (train.is_object() && train.contains("seed")) {
        throw Error("run config: set \"seed\" at the top level, not under \"train\"");
    }
    c.train = training::train_config_from_json(train);
    c.train.seed = c.seed;

    const json paths = j.value("paths", json::object());
    detail::require_keys(paths, {"raw", "embeddings", "dataset", "sidecar", "checkpoints", "reports"},
                         "run config paths");
    auto path = [&](const char* key, fs::path fallback) -> fs::path {
        if (!paths.contains(key)) {
            return fallback;
        }
        if (!paths[key].is_string()) {
            throw Error(std::string("run config paths: \"") + key + "\" must be a string");
        }
        const fs::path p = paths[key].get<std::string>();
        return p.is_absolute() ? p : (base_dir / p).lexically_normal();
    };
    c.paths.raw = path("raw", {});
    c.paths.embeddings = path("embeddings", {});
    c.paths.dataset = path("dataset", base_dir / "dataset.jsonl");
    c.paths.sidecar = path("sidecar", fs::path(c.paths.dataset).replace_extension(".meta.json"));
    c.paths.checkpoints = path("checkpoints", base_dir / "checkpoints");
    c.paths.reports = path("reports", base_dir / "reports");
    return c;
}

inline RunConfig load_run_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error("config " + path.string() + ": malformed JSON (" + e.what() + ")");
    }
    return run_config_from_json(j, fs::absolute(path).parent_path());
}

/// The effective configuration, paths relative to `base_dir`.
inline json run_config_to_json(const RunConfig& c, const fs::path& base_dir)
{
    json j;
    j["preset"] = c.preset;
    j["model"] = model::config_to_json(c.model);
    json train = training::train_config_to_json(c.train);
    train.erase("seed");
    j["train"] = train;
    json paths;
    paths["raw"] = detail::relative_or_absolute(c.paths.raw, base_dir);
    paths["embeddings"] = detail::relative_or_absolute(c.paths.embeddings, base_dir);
    paths["dataset"] = detail::relative_or_absolute(c.paths.dataset, base_dir);
    paths["sidecar"] = detail::relative_or_absolute(c.paths.sidecar, base_dir);
    paths["checkpoints"] = detail::relative_or_absolute(c.paths.checkpoints, base_dir);
    paths["reports"] = detail::relative_or_absolute(c.paths.reports, base_dir);
    for (auto it = paths.begin(); it != paths.end();) {
        it = it.value().get<std::string>().empty() ? paths.erase(it) : std::next(it);
    }
    j["paths"] = paths;
    j["seed"] = c.seed;
    j["si_speakers"] = c.si_speakers;
    j["splits"] = {{"train", c.train_fraction}, {"val", c.val_fraction}};
    return j;
}

/// File stem shared by a variant's checkpoint, card, state and loss curve.
inline std::string artifact_stem(model::Ablation a)
{
    return a == model::Ablation::none ? "model" : "model-" + std::string(model::ablation_name(a));
}

inline fs::path checkpoint_path(const RunConfig& c) { return c.paths.checkpoints / (artifact_stem(c.model.ablation) + ".vsg"); }

namespace detail {

inline void require_file(const fs::path& p, const std::string& what)
{
    if (p.empty()) {
        throw Error(what + ": no path configured");
    }
    if (!fs::is_regular_file(p)) {
        throw Error(what + " " + p.string() + " does not exist");
    }
}

inline void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    out << text;
}

inline std::vector<features::Ipu> split_of(std::span<const features::Ipu> ipus, features::Split split)
{
    return features::select_split(ipus, split);
}

/// Checks a stored dataset against the model it will feed.
inline void check_dataset_fits(const features::DatasetMeta& meta, const model::ModelConfig& m)
{
    std::vector<std::string> issues;
    if (meta.quantizer.n_bins != m.n_bins) {
        issues.push_back("n_bins (dataset " + std::to_string(meta.quantizer.n_bins) + ", model "
                         + std::to_string(m.n_bins) + ")");
    }
    if (meta.d_emb != m.d_emb) {
        issues.push_back("d_emb (dataset " + std::to_string(meta.d_emb) + ", model " + std::to_string(m.d_emb) + ")");
    }
    if (meta.max_f0_len != m.max_f0_len) {
        issues.push_back("max_f0_len (dataset " + std::to_string(meta.max_f0_len) + ", model "
                         + std::to_string(m.max_f0_len) + ")");
    }
    if (meta.max_out_len > m.max_out_len) {
        issues.push_back("max_out_len (dataset " + std::to_string(meta.max_out_len) + ", model "
                         + std::to_string(m.max_out_len) + ")");
    }
    if (!issues.empty()) {
        std::string msg = "dataset does not fit the model config:";
        for (const auto& s : issues) {
            msg += " " + s + ";";
        }
        msg.pop_back();
        throw Error(msg);
    }
}

struct LoadedData {
    features::DatasetMeta meta;
    std::vector<features::Ipu> ipus;
};

inline LoadedData load_data(const RunConfig& c)
{
    require_file(c.paths.dataset, "dataset");
    require_file(c.paths.sidecar, "sidecar");
    LoadedData d;
    d.meta = features::load_meta(c.paths.sidecar);
    check_dataset_fits(d.meta, c.model);
    d.ipus = features::read_dataset(c.paths.dataset, c.model.max_f0_len);
    return d;
}

} // namespace detail

/// Lists every model config field on which the two configs differ.
inline std::vector<std::string> config_differences(const model::ModelConfig& stored, const model::ModelConfig& wanted)
{
    const json a = model::config_to_json(stored);
    const json b = model::config_to_json(wanted);
    std::vector<std::string> out;
    for (const auto& [key, value] : a.items()) {
        if (b[key] != value) {
            out.push_back(key + " (checkpoint " + value.dump() + ", config " + b[key].dump() + ")");
        }
    }
    return out;
}

/// Loads a checkpoint and verifies it against the run config and, when one
/// sits next to it, the model card.
inline model::Model load_compatible(const fs::path& path, const model::ModelConfig& wanted)
{
    detail::require_file(path, "checkpoint");
    model::Model m = model::load_model(path);
    const auto diffs = config_differences(m.config(), wanted);
    if (!diffs.empty()) {
        std::string msg = "checkpoint " + path.string() + " does not match the run config:";
        for (const auto& d : diffs) {
            msg += "\n  " + d;
        }
        throw Error(msg);
    }
    const fs::path card_path = fs::path(path).replace_extension(".card.json");
    if (fs::exists(card_path)) {
        std::ifstream in(card_path);
        const json card = json::parse(in, nullptr, false);
        if (card.is_discarded() || card.value("config", json()) != model::config_to_json(m.config())
            || card.value("param_count", std::size_t{0}) != m.param_count()) {
            throw Error("model card " + card_path.string() + " does not describe checkpoint " + path.string());
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessSummary {
    std::size_t utterances = 0;
    std::size_t ipus = 0;
    std::size_t words = 0;
    std::size_t silences = 0;
    std::map<std::string, std::size_t> per_split;
};

inline PreprocessSummary cmd_preprocess(const RunConfig& c, bool pseudo_embeddings, std::ostream& out)
{
    detail::require_file(c.paths.raw, "raw utterances");
    if (!pseudo_embeddings) {
        detail::require_file(c.paths.embeddings, "embedding sidecar");
    }
    const auto raw = features::read_raw_utterances(c.paths.raw);
    const auto embed = pseudo_embeddings ? features::pseudo_embeddings(c.model.d_emb)
                                         : features::embedding_file(c.paths.embeddings);
    features::PreprocessOptions opt;
    opt.max_f0_len = c.model.max_f0_len;
    opt.max_out_len = c.model.max_out_len;
    opt.n_bins = c.model.n_bins;
    opt.d_emb = c.model.d_emb;
    opt.seed = c.seed;
    opt.si_speakers = c.si_speakers;
    opt.train_fraction = c.train_fraction;
    opt.val_fraction = c.val_fraction;
    const auto corpus = features::preprocess(raw, embed, opt);

    fs::create_directories(c.paths.dataset.parent_path());
    fs::create_directories(c.paths.sidecar.parent_path());
    features::write_dataset(c.paths.dataset, corpus.ipus);
    features::save_meta(c.paths.sidecar, corpus.meta);

    PreprocessSummary s;
    s.utterances = raw.size();
    s.ipus = corpus.ipus.size();
    s.words = corpus.spoken_word_count();
    for (const auto& ipu : corpus.ipus) {
        for (const auto& w : ipu.words) {
            s.silences += w.is_silence ? 1 : 0;
        }
        ++s.per_split[std::string(features::split_name(ipu.split))];
    }
    out << "utterances " << s.utterances << ", IPUs " << s.ipus << ", words " << s.words << ", silence tokens "
        << s.silences << '\n';
    for (auto split : {features::Split::train, features::Split::val_sd, features::Split::test_sd,
                       features::Split::test_si}) {
        const std::string name(features::split_name(split));
        out << "  " << name << ": " << (s.per_split.contains(name) ? s.per_split.at(name) : 0) << " IPUs\n";
    }
    return s;
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
    training::TrainResult result;
    fs::path checkpoint;
    fs::path loss_csv;
    std::size_t param_count = 0;
};

inline TrainSummary cmd_train(const RunConfig& c, bool resume, std::ostream& out)
{
    const auto data = detail::load_data(c);
    auto train = detail::split_of(data.ipus, features::Split::train);
    auto val = detail::split_of(data.ipus, features::Split::val_sd);
    if (train.empty()) {
        throw Error("empty split: dataset has no train IPUs");
    }
    if (c.train.validate_every > 0 && val.empty()) {
        throw Error("empty split: dataset has no val_SD IPUs (set train.validate_every to 0 to train without)");
    }
    const std::string stem = artifact_stem(c.model.ablation);
    const fs::path state_path = c.paths.checkpoints / (stem + ".state");
    if (resume) {
        detail::require_file(state_path, "training state");
    }

    model::Model m(c.model, c.seed);
    training::Trainer trainer(m, c.train, std::move(train), std::move(val));
    if (resume) {
        trainer.load_state(state_path);
        const json stored = training::train_config_to_json(trainer.config());
        json wanted = training::train_config_to_json(c.train);
        wanted["max_steps"] = stored["max_steps"];
        if (stored != wanted) {
            throw Error("cannot resume " + state_path.string() + ": training settings other than max_steps changed");
        }
        trainer.set_max_steps(c.train.max_steps);
        log(LogLevel::info, "resuming " + stem + " at step " + std::to_string(trainer.step_count()));
    }

    fs::create_directories(c.paths.checkpoints);
    fs::create_directories(c.paths.reports);
    const fs::path base = c.paths.checkpoints;
    detail::write_text(base / (stem + ".run.json"), run_config_to_json(c, base).dump(2) + "\n");

    const auto result = trainer.run([&](const training::LossRecord& r) {
        const bool last = r.step >= c.train.max_steps || trainer.stopped();
        if (r.val_loss) {
            log(LogLevel::info, stem + " step " + std::to_string(r.step) + " train " + format_double(r.train_loss)
                                    + " val " + format_double(*r.val_loss));
        }
        // The state is taken before the best parameters are restored, so a
        // resumed run continues exactly where this one stopped.
        if (r.val_loss || last) {
            trainer.save_state(state_path);
        }
    });
    if (result.steps == 0) {
        throw Error("train: max_steps is 0");
    }

    TrainSummary s;
    s.result = result;
    s.checkpoint = base / (stem + ".vsg");
    s.loss_csv = c.paths.reports / (stem + "-loss.csv");
    s.param_count = m.param_count();
    model::save_model(s.checkpoint, m);
    model::write_model_card(base / (stem + ".card.json"), m);
    training::write_loss_csv(s.loss_csv, trainer.history());

    out << stem << ": " << result.steps << " steps, final train loss " << format_double(result.final_train_loss);
    if (result.best_val_loss) {
        out << ", best val loss " << format_double(*result.best_val_loss) << " at step " << result.best_step;
    }
    out << (result.stopped_early ? " (early stop)" : "") << '\n';
    out << "  checkpoint " << s.checkpoint.string() << ", " << s.param_count << " parameters\n";
    return s;
}

// ---------------------------------------------------------------------------
// infer

struct InferOptions {
    fs::path checkpoint;                ///< default: the config's checkpoint
    fs::path input;                     ///< dataset-format IPUs; default: the config's dataset
    fs::path output;                    ///< directory; default: reports/infer-<stem>
    std::optional<features::Split> split;
    std::optional<std::size_t> frames;  ///< frames per IPU; default: the IPU's span
    bool denormalize = false;
};

inline std::size_t cmd_infer(const RunConfig& c, const InferOptions& opt, std::ostream& out)
{
    const fs::path ckpt = opt.checkpoint.empty() ? checkpoint_path(c) : opt.checkpoint;
    const fs::path input = opt.input.empty() ? c.paths.dataset : opt.input;
    const fs::path dir = opt.output.empty() ? c.paths.reports / ("infer-" + artifact_stem(c.model.ablation)) : opt.output;
    detail::require_file(input, "input IPUs");
    if (opt.denormalize) {
        detail::require_file(c.paths.sidecar, "sidecar");
    }
    if (opt.frames && (*opt.frames == 0 || *opt.frames > c.model.max_out_len)) {
        throw Error("infer: --frames must be in 1.." + std::to_string(c.model.max_out_len));
    }
    const model::Model m = load_compatible(ckpt, c.model);
    std::optional<features::DatasetMeta> meta;
    if (opt.denormalize) {
        meta = features::load_meta(c.paths.sidecar);
    }
    auto ipus = features::read_dataset(input, c.model.max_f0_len);
    if (opt.split) {
        ipus = features::select_split(ipus, *opt.split);
    }
    if (ipus.empty()) {
        throw Error("infer: no IPUs to process in " + input.string());
    }

    fs::create_directories(dir);
    std::ofstream jsonl(dir / "curves.jsonl", std::ios::binary | std::ios::trunc);
    if (!jsonl) {
        throw Error("cannot open " + (dir / "curves.jsonl").string() + " for writing");
    }
    const std::size_t s = c.model.n_streams;
    for (const auto& ipu : ipus) {
        const std::size_t n = opt.frames ? *opt.frames : model::output_length(ipu, c.model.max_out_len);
        if (n == 0) {
            throw Error("infer: IPU \"" + ipu.id + "\" spans no output frames");
        }
        auto gen = m.generate(ipu, n);
        if (meta) {
            for (std::size_t j = 0; j < s; ++j) {
                for (double& v : gen.curves[j]) {
                    v = features::denormalize_value(v, meta->target_bounds[j].lo, meta->target_bounds[j].hi);
                }
            }
        }
        std::ostringstream csv;
        csv << "frame_index";
        for (std::size_t j = 0; j < s; ++j) {
            csv << ',' << features::kStreamNames[j];
        }
        csv << '\n';
        for (std::size_t f = 0; f < n; ++f) {
            csv << f;
            for (std::size_t j = 0; j < s; ++j) {
                csv << ',' << format_double(gen.curves[j][f]);
            }
            csv << '\n';
        }
        detail::write_text(dir / (ipu.id + ".csv"), csv.str());

        json line;
        line["id"] = ipu.id;
        line["frame_rate"] = features::kTargetFps;
        line["frames"] = n;
        line["denormalized"] = opt.denormalize;
        json curves;
        for (std::size_t j = 0; j < s; ++j) {
            curves[std::string(features::kStreamNames[j])] = gen.curves[j];
        }
        line["curves"] = std::move(curves);
        jsonl << line.dump() << '\n';
    }
    out << "wrote curves for " << ipus.size() << " IPUs to " << dir.string() << '\n';
    return ipus.size();
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
    evaluation::Condition condition = evaluation::Condition::sd;
    evaluation::Aggregation aggregation = evaluation::Aggregation::concatenated;
    fs::path checkpoint;       ///< default: the config's checkpoint
    bool ground_truth = false; ///< score the references against themselves
};

/// Test IPUs of a condition. SI keeps only speakers never seen in training.
inline std::vector<features::Ipu> condition_split(std::span<const features::Ipu> ipus, evaluation::Condition cond)
{
    if (cond == evaluation::Condition::sd) {
        return features::select_split(ipus, features::Split::test_sd);
    }
    std::set<std::string> seen;
    for (const auto& ipu : ipus) {
        if (ipu.split == features::Split::train) {
            seen.insert(ipu.speaker_id);
        }
    }
    std::vector<features::Ipu> out;
    std::size_t dropped = 0;
    for (const auto& ipu : features::select_split(ipus, features::Split::test_si)) {
        if (seen.contains(ipu.speaker_id)) {
            ++dropped;
        } else {
            out.push_back(ipu);
        }
    }
    if (dropped > 0) {
        log(LogLevel::warn, "SI: skipped " + std::to_string(dropped) + " test IPUs whose speaker appears in training");
    }
    return out;
}

inline evaluation::MetricsReport cmd_evaluate(const RunConfig& c, const EvaluateOptions& opt, std::ostream& out)
{
    const auto data = detail::load_data(c);
    const auto split = condition_split(data.ipus, opt.condition);
    if (split.empty()) {
        throw Error("empty split: no IPUs for condition " + std::string(evaluation::condition_name(opt.condition)));
    }
    evaluation::MetricsReport report;
    std::string tag;
    if (opt.ground_truth) {
        std::vector<evaluation::Streams> truths;
        for (const auto& ipu : split) {
            truths.push_back(evaluation::truth_curves(ipu));
        }
        report = evaluation::score(truths, truths, c.model.n_streams, opt.aggregation);
        report.condition = opt.condition;
        tag = "reference";
    } else {
        const fs::path ckpt = opt.checkpoint.empty() ? checkpoint_path(c) : opt.checkpoint;
        const model::Model m = load_compatible(ckpt, c.model);
        report = evaluation::evaluate(m, split, opt.condition, opt.aggregation);
        tag = std::string(model::ablation_name(c.model.ablation));
    }
    std::string cond(evaluation::condition_name(opt.condition));
    std::ranges::transform(cond, cond.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    const std::string stem = "metrics-" + cond + "-" + tag;
    fs::create_directories(c.paths.reports);
    detail::write_text(c.paths.reports / (stem + ".json"), evaluation::report_to_json(report).dump(2) + "\n");
    detail::write_text(c.paths.reports / (stem + ".csv"), evaluation::report_to_csv(report));
    out << evaluation::report_to_table(report);
    return report;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
    model::Ablation variant = model::Ablation::none;
    std::size_t params = 0;
    std::optional<double> val_loss;
    evaluation::MetricsReport report;
};

/// Trains the full model and every ablated variant from the same seed and
/// step budget, then evaluates each one.
inline std::vector<AblationRow> cmd_ablate(const RunConfig& c, const EvaluateOptions& eval, std::ostream& out)
{
    (void)detail::load_data(c); // fail before any training starts
    std::vector<AblationRow> rows;
    for (auto kind : {model::Ablation::none, model::Ablation::speech, model::Ablation::text, model::Ablation::cmam,
                      model::Ablation::aur_decoder}) {
        RunConfig variant = c;
        variant.model.ablation = kind;
        const auto trained = cmd_train(variant, false, out);
        EvaluateOptions e = eval;
        e.checkpoint = trained.checkpoint;
        e.ground_truth = false;
        AblationRow row;
        row.variant = kind;
        row.params = trained.param_count;
        row.val_loss = trained.result.best_val_loss;
        row.report = cmd_evaluate(variant, e, out);
        rows.push_back(std::move(row));
    }

    std::ostringstream csv;
    csv << "variant,params,val_loss";
    for (std::size_t j = 0; j < c.model.n_streams; ++j) {
        csv << ",RMSE_" << features::kStreamNames[j];
    }
    csv << '\n';
    for (const auto& r : rows) {
        csv << model::ablation_name(r.variant) << ',' << r.params << ','
            << (r.val_loss ? format_double(*r.val_loss) : std::string("undefined"));
        for (const auto& s : r.report.streams) {
            csv << ',' << format_double(s.rmse);
        }
        csv << '\n';
    }
    std::string cond(evaluation::condition_name(eval.condition));
    std::ranges::transform(cond, cond.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    detail::write_text(c.paths.reports / ("ablation-" + cond + ".csv"), csv.str());
    out << csv.str();
    return rows;
}

// ---------------------------------------------------------------------------
// params

inline json cmd_params(const model::ModelConfig& cfg, std::ostream& out)
{
    const model::Model m(cfg);
    const json card = model::model_card(m);
    out << "parameters " << m.param_count() << '\n';
    for (const auto& [group, count] : card["param_groups"].items()) {
        out << "  " << group << ' ' << count.get<std::size_t>() << '\n';
    }
    return card;
}

} // namespace visage::cli
