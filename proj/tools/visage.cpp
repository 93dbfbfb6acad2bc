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

// visage: preprocess | train | infer | evaluate | ablate | params

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "visage/cli/commands.hpp"

namespace {

namespace cli = visage::cli;

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string ablation;
    std::string condition = "sd";
    bool pseudo_embeddings = false;
    bool denormalize = false;
    bool resume = false;
    bool ground_truth = false;
    bool per_ipu = false;
    std::string checkpoint;
    std::string input;
    std::string output;
    std::string split;
    std::optional<std::size_t> frames;
    std::string preset;
};

cli::RunConfig resolve(const Flags& f)
{
    cli::RunConfig c = cli::load_run_config(f.config);
    if (f.seed) {
        c.seed = *f.seed;
        c.train.seed = *f.seed;
    }
    if (!f.ablation.empty()) {
        c.model.ablation = visage::model::parse_ablation(f.ablation);
        c.model.validate();
    }
    return c;
}

cli::EvaluateOptions evaluate_options(const Flags& f)
{
    cli::EvaluateOptions e;
    e.condition = visage::evaluation::parse_condition(f.condition);
    e.aggregation = f.per_ipu ? visage::evaluation::Aggregation::per_ipu_mean
                              : visage::evaluation::Aggregation::concatenated;
    e.checkpoint = f.checkpoint;
    e.ground_truth = f.ground_truth;
    return e;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Eyebrow and head gesture generation from speech and text"};
    app.require_subcommand(1);
    Flags f;

    const std::vector<std::string> ablations = {"speech", "text", "cmam", "aur-decoder"};
    const std::vector<std::string> conditions = {"sd", "si", "SD", "SI"};
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "run config JSON")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", f.seed, "override the run seed");
    };
    auto add_ablation = [&](CLI::App* sub) {
        sub->add_option("--ablation", f.ablation, "remove one block")->check(CLI::IsMember(ablations));
    };
    auto add_condition = [&](CLI::App* sub) {
        sub->add_option("--condition", f.condition, "sd (seen speakers) or si (unseen speakers)")
            ->check(CLI::IsMember(conditions));
        sub->add_flag("--per-ipu", f.per_ipu, "average metrics over IPUs instead of concatenating frames");
    };

    auto* preprocess = app.add_subcommand("preprocess", "raw utterances to dataset JSONL and bounds sidecar");
    add_config(preprocess);
    preprocess->add_flag("--pseudo-embeddings", f.pseudo_embeddings, "deterministic stand-in word embeddings");

    auto* train = app.add_subcommand("train", "train a model, writing checkpoint and loss curve");
    add_config(train);
    add_ablation(train);
    train->add_flag("--resume", f.resume, "continue from the saved training state");

    auto* infer = app.add_subcommand("infer", "generate gesture curves for IPU records");
    add_config(infer);
    add_ablation(infer);
    infer->add_option("--checkpoint", f.checkpoint, "model checkpoint")->check(CLI::ExistingFile);
    infer->add_option("--input", f.input, "IPU records in dataset format")->check(CLI::ExistingFile);
    infer->add_option("--output", f.output, "output directory");
    infer->add_option("--split", f.split, "only IPUs of this split")
        ->check(CLI::IsMember({"train", "val_SD", "test_SD", "test_SI"}));
    infer->add_option("--frames", f.frames, "frames per IPU (default: the IPU's span at 24 fps)");
    infer->add_flag("--denormalize", f.denormalize, "map curves back to original units");

    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the SD or SI test split");
    add_config(evaluate);
    add_ablation(evaluate);
    add_condition(evaluate);
    evaluate->add_option("--checkpoint", f.checkpoint, "model checkpoint")->check(CLI::ExistingFile);
    evaluate->add_flag("--ground-truth", f.ground_truth, "score the references against themselves");

    auto* ablate = app.add_subcommand("ablate", "train and evaluate the full model and every ablation");
    add_config(ablate);
    add_condition(ablate);

    auto* params = app.add_subcommand("params", "parameter count per block");
    params->add_option("--config", f.config, "run config JSON")->check(CLI::ExistingFile);
    params->add_option("--preset", f.preset, "model preset when no config is given")
        ->check(CLI::IsMember({"default", "toy", "tiny"}));
    add_ablation(params);
    params->get_option("--config")->excludes("--preset");

    CLI11_PARSE(app, argc, argv);

    try {
        if (preprocess->parsed()) {
            cli::cmd_preprocess(resolve(f), f.pseudo_embeddings, std::cout);
        } else if (train->parsed()) {
            cli::cmd_train(resolve(f), f.resume, std::cout);
        } else if (infer->parsed()) {
            cli::InferOptions o;
            o.checkpoint = f.checkpoint;
            o.input = f.input;
            o.output = f.output;
            if (!f.split.empty()) {
                o.split = visage::features::parse_split(f.split);
            }
            o.frames = f.frames;
            o.denormalize = f.denormalize;
            cli::cmd_infer(resolve(f), o, std::cout);
        } else if (evaluate->parsed()) {
            cli::cmd_evaluate(resolve(f), evaluate_options(f), std::cout);
        } else if (ablate->parsed()) {
            cli::cmd_ablate(resolve(f), evaluate_options(f), std::cout);
        } else if (params->parsed()) {
            visage::model::ModelConfig cfg;
            if (!f.config.empty()) {
                cfg = resolve(f).model;
            } else {
                cfg = cli::preset_config(f.preset.empty() ? "default" : f.preset);
                if (!f.ablation.empty()) {
                    cfg.ablation = visage::model::parse_ablation(f.ablation);
                }
            }
            cli::cmd_params(cfg, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "visage: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
