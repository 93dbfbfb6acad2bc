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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "visage/error.hpp"
#include "visage/features/features.hpp"
#include "visage/model/checkpoint.hpp"
#include "visage/model/model.hpp"
#include "visage/numerics/weights.hpp"
#include "visage/training/optimizer.hpp"
#include "visage/util.hpp"

namespace visage::training {

using json = nlohmann::ordered_json;

struct TrainConfig {
    std::size_t batch_size = 8;
    std::size_t warmup_steps = 4000;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    std::size_t max_steps = 2000;
    std::uint64_t seed = 0;
    std::size_t validate_every = 50; ///< 0 disables validation
    std::size_t patience = 10;       ///< validations without improvement before stopping
    double clip_norm = 0.0;          ///< 0 disables clipping

    void validate() const
    {
        if (batch_size == 0) {
            throw Error("train config: batch_size must be at least 1");
        }
        if (warmup_steps == 0) {
            throw Error("train config: warmup_steps must be at least 1");
        }
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
            throw Error("train config: Adam needs 0 <= beta < 1 and eps > 0");
        }
        if (clip_norm < 0.0) {
            throw Error("train config: clip_norm must be non-negative");
        }
    }

    AdamOptions adam() const { return {beta1, beta2, eps}; }
};

inline json train_config_to_json(const TrainConfig& c)
{
    json j;
    j["batch_size"] = c.batch_size;
    j["warmup_steps"] = c.warmup_steps;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["eps"] = c.eps;
    j["max_steps"] = c.max_steps;
    j["seed"] = c.seed;
    j["validate_every"] = c.validate_every;
    j["patience"] = c.patience;
    j["clip_norm"] = c.clip_norm;
    return j;
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {})
{
    if (!j.is_object()) {
        throw Error("train config: expected a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "batch_size") base.batch_size = value.get<std::size_t>();
            else if (key == "warmup_steps") base.warmup_steps = value.get<std::size_t>();
            else if (key == "beta1") base.beta1 = value.get<double>();
            else if (key == "beta2") base.beta2 = value.get<double>();
            else if (key == "eps") base.eps = value.get<double>();
            else if (key == "max_steps") base.max_steps = value.get<std::size_t>();
            else if (key == "seed") base.seed = value.get<std::uint64_t>();
            else if (key == "validate_every") base.validate_every = value.get<std::size_t>();
            else if (key == "patience") base.patience = value.get<std::size_t>();
            else if (key == "clip_norm") base.clip_norm = value.get<double>();
            else throw Error("train config: unknown key \"" + key + "\"");
        } catch (const nlohmann::json::exception& e) {
            throw Error("train config: bad value for \"" + key + "\": " + e.what());
        }
    }
    base.validate();
    return base;
}

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x)
    {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            carry_ += (sum_ - t) + x;
        } else {
            carry_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + carry_; }

private:
    double sum_ = 0.0;
    double carry_ = 0.0;
};

inline std::size_t token_count(const features::Ipu& ipu, const model::ModelConfig& cfg)
{
    return ipu.valid_frames() * cfg.n_streams;
}

/// Token-weighted mean cross-entropy over `ipus` with dropout off.
inline double evaluate_loss(const model::Model& model, std::span<const features::Ipu> ipus)
{
    numerics::NoGradGuard no_grad;
    CompensatedSum nll;
    std::size_t tokens = 0;
    for (const auto& ipu : ipus) {
        const std::size_t n = token_count(ipu, model.config());
        if (n == 0) {
            continue;
        }
        nll.add(model::Model::nll_sum(model.forward_teacher_forced(ipu)).item());
        tokens += n;
    }
    if (tokens == 0) {
        throw Error("evaluate_loss: no unpadded frames");
    }
    return nll.value() / static_cast<double>(tokens);
}

struct LossRecord {
    std::size_t step = 0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
    double lr = 0.0;
};

inline void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history)
{
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write loss curve " + path.string());
    }
    out << "step,train_loss,val_loss,lr\n";
    for (const auto& r : history) {
        out << r.step << ',' << format_double(r.train_loss) << ','
            << (r.val_loss ? format_double(*r.val_loss) : std::string()) << ',' << format_double(r.lr) << '\n';
    }
}

struct TrainResult {
    std::size_t steps = 0;
    std::optional<double> best_val_loss;
    std::size_t best_step = 0;
    bool stopped_early = false;
    double final_train_loss = std::numeric_limits<double>::quiet_NaN();
};

/// Same architecture with one block removed; every surviving parameter keeps
/// its trained value.
inline model::Model apply_ablation(const model::Model& source, model::Ablation kind, std::uint64_t seed = 0)
{
    auto cfg = source.config();
    cfg.ablation = kind;
    model::Model variant(cfg, seed);
    model::copy_shared_params(source.params(), variant.params());
    return variant;
}

/// Mini-batch optimizer loop over a fixed train/validation split. Batches
/// walk a seeded permutation of the training set, reshuffled every epoch.
class Trainer {
public:
    Trainer(model::Model& model, TrainConfig config, std::vector<features::Ipu> train, std::vector<features::Ipu> val)
        : model_(model), config_(config), train_(std::move(train)), val_(std::move(val)),
          sample_rng_(config.seed), dropout_rng_(config.seed ^ 0x9e3779b97f4a7c15ULL)
    {
        config_.validate();
        if (train_.empty()) {
            throw Error("empty split: no training IPUs");
        }
        if (config_.validate_every > 0 && val_.empty()) {
            throw Error("empty split: no validation IPUs");
        }
        adam_ = AdamState::for_params(model_.params().all());
        order_.resize(train_.size());
        reshuffle();
    }

    std::size_t step_count() const { return adam_.step; }
    const std::vector<LossRecord>& history() const { return history_; }
    const TrainConfig& config() const { return config_; }
    std::optional<double> best_val_loss() const { return best_val_; }
    bool stopped() const { return stopped_; }

    /// Raises or lowers the step budget, e.g. to continue a restored run.
    void set_max_steps(std::size_t max_steps) { config_.max_steps = max_steps; }

    double current_lr() const
    {
        return lr_schedule(adam_.step + 1, model_.config().d_model, config_.warmup_steps);
    }

    /// One optimizer update; returns the batch's mean token loss.
    double step()
    {
        std::vector<std::size_t> batch;
        for (std::size_t i = 0; i < config_.batch_size; ++i) {
            if (cursor_ == order_.size()) {
                reshuffle();
            }
            batch.push_back(order_[cursor_++]);
        }
        std::size_t tokens = 0;
        for (std::size_t idx : batch) {
            tokens += token_count(train_[idx], model_.config());
        }
        if (tokens == 0) {
            throw Error("train step: batch has no unpadded frames");
        }
        auto& params = model_.params();
        params.zero_grad();
        model::ForwardContext ctx;
        ctx.train = true;
        ctx.rng = &dropout_rng_;
        CompensatedSum nll;
        for (std::size_t idx : batch) {
            if (token_count(train_[idx], model_.config()) == 0) {
                continue;
            }
            const Tensor total = model::Model::nll_sum(model_.forward_teacher_forced(train_[idx], ctx));
            nll.add(total.item());
            numerics::backward(numerics::scale(total, 1.0 / static_cast<double>(tokens)));
        }
        const double lr = current_lr();
        double scale = 1.0;
        if (config_.clip_norm > 0.0) {
            check_finite_gradients(params.all());
            const double norm = gradient_norm(params.all());
            if (norm > config_.clip_norm) {
                scale = config_.clip_norm / norm;
            }
        }
        auto list = params.all();
        adam_step(list, adam_, lr, config_.adam(), scale);
        return nll.value() / static_cast<double>(tokens);
    }

    double validate() const { return evaluate_loss(model_, val_); }

    /// Steps until max_steps or early stopping, validating periodically, then
    /// restores the best-validation parameters.
    TrainResult run(const std::function<void(const LossRecord&)>& on_record = {})
    {
        TrainResult result;
        while (adam_.step < config_.max_steps && !stopped_) {
            LossRecord rec;
            rec.lr = current_lr();
            rec.train_loss = step();
            rec.step = adam_.step;
            if (config_.validate_every > 0 && adam_.step % config_.validate_every == 0) {
                const double v = validate();
                rec.val_loss = v;
                if (!best_val_ || v < *best_val_) {
                    best_val_ = v;
                    best_step_ = adam_.step;
                    bad_validations_ = 0;
                    best_params_.clear();
                    for (const auto& p : model_.params().all()) {
                        best_params_.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
                    }
                } else if (++bad_validations_ >= config_.patience) {
                    stopped_ = true;
                }
            }
            history_.push_back(rec);
            if (on_record) {
                on_record(rec);
            }
            result.final_train_loss = rec.train_loss;
        }
        restore_best();
        result.steps = adam_.step;
        result.best_val_loss = best_val_;
        result.best_step = best_step_;
        result.stopped_early = stopped_;
        return result;
    }

    /// Writes everything needed to continue bit-for-bit: parameters, Adam
    /// moments, generator states, batch order and the early-stopping state.
    void save_state(const std::filesystem::path& path) const
    {
        numerics::WeightFile file = model::to_weight_file(model_);
        file.meta["kind"] = "visage-trainer";
        file.meta["train_config"] = train_config_to_json(config_).dump();
        file.meta["adam_step"] = std::to_string(adam_.step);
        file.meta["sample_rng"] = rng_text(sample_rng_);
        file.meta["dropout_rng"] = rng_text(dropout_rng_);
        file.meta["order"] = json(order_).dump();
        file.meta["cursor"] = std::to_string(cursor_);
        file.meta["best_val"] = best_val_ ? format_double(*best_val_) : "";
        file.meta["best_step"] = std::to_string(best_step_);
        file.meta["bad_validations"] = std::to_string(bad_validations_);
        file.meta["stopped"] = stopped_ ? "1" : "0";
        json hist = json::array();
        for (const auto& r : history_) {
            hist.push_back({r.step, r.train_loss, r.val_loss ? json(*r.val_loss) : json(nullptr), r.lr});
        }
        file.meta["history"] = hist.dump();
        const auto& params = model_.params().all();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& shape = params[i].tensor.shape();
            file.tensors.push_back({"adam.m/" + params[i].name, Tensor::from(shape, adam_.m[i])});
            file.tensors.push_back({"adam.v/" + params[i].name, Tensor::from(shape, adam_.v[i])});
            if (!best_params_.empty()) {
                file.tensors.push_back({"best/" + params[i].name, Tensor::from(shape, best_params_[i])});
            }
        }
        numerics::save_weights(path, file);
    }

    /// Restores a state written by save_state into this trainer's model. The
    /// model architecture must match the stored one.
    void load_state(const std::filesystem::path& path)
    {
        const auto file = numerics::load_weights(path);
        auto meta = [&](const std::string& key) -> const std::string& {
            auto it = file.meta.find(key);
            if (it == file.meta.end()) {
                throw Error("training state " + path.string() + ": missing \"" + key + "\"");
            }
            return it->second;
        };
        if (meta("kind") != "visage-trainer") {
            throw Error(path.string() + " is not a training state");
        }
        if (json::parse(meta("config")) != model::config_to_json(model_.config())) {
            throw Error("training state " + path.string() + " was written for a different model config");
        }
        const auto& params = model_.params().all();
        auto tensor = [&](const std::string& name, std::size_t numel) {
            const Tensor* t = file.find(name);
            if (t == nullptr || t->numel() != numel) {
                throw Error("training state " + path.string() + ": missing or misshapen \"" + name + "\"");
            }
            return t->data();
        };
        adam_ = AdamState::for_params(params);
        best_params_.clear();
        const bool has_best = file.find("best/" + params.front().name) != nullptr;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const std::size_t n = params[i].tensor.numel();
            Tensor p = params[i].tensor;
            std::ranges::copy(tensor(params[i].name, n), p.mutable_data().begin());
            std::ranges::copy(tensor("adam.m/" + params[i].name, n), adam_.m[i].begin());
            std::ranges::copy(tensor("adam.v/" + params[i].name, n), adam_.v[i].begin());
            if (has_best) {
                auto b = tensor("best/" + params[i].name, n);
                best_params_.emplace_back(b.begin(), b.end());
            }
        }
        config_ = train_config_from_json(json::parse(meta("train_config")));
        adam_.step = std::stoull(meta("adam_step"));
        std::istringstream(meta("sample_rng")) >> sample_rng_;
        std::istringstream(meta("dropout_rng")) >> dropout_rng_;
        order_ = json::parse(meta("order")).get<std::vector<std::size_t>>();
        if (order_.size() != train_.size()) {
            throw Error("training state " + path.string() + " was written for a training set of "
                        + std::to_string(order_.size()) + " IPUs, not " + std::to_string(train_.size()));
        }
        cursor_ = std::stoull(meta("cursor"));
        const auto& best = meta("best_val");
        best_val_ = best.empty() ? std::nullopt : std::optional<double>(std::stod(best));
        best_step_ = std::stoull(meta("best_step"));
        bad_validations_ = std::stoull(meta("bad_validations"));
        stopped_ = meta("stopped") == "1";
        history_.clear();
        for (const auto& r : json::parse(meta("history"))) {
            LossRecord rec{r[0].get<std::size_t>(), r[1].get<double>(), std::nullopt, r[3].get<double>()};
            if (!r[2].is_null()) {
                rec.val_loss = r[2].get<double>();
            }
            history_.push_back(rec);
        }
    }

private:
    void reshuffle()
    {
        for (std::size_t i = 0; i < order_.size(); ++i) {
            order_[i] = i;
        }
        shuffle_in_place(std::span<std::size_t>(order_), sample_rng_);
        cursor_ = 0;
    }

    void restore_best()
    {
        if (best_params_.empty()) {
            return;
        }
        const auto& params = model_.params().all();
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor p = params[i].tensor;
            std::ranges::copy(best_params_[i], p.mutable_data().begin());
        }
    }

    static std::string rng_text(const std::mt19937_64& rng)
    {
        std::ostringstream os;
        os << rng;
        return os.str();
    }

    model::Model& model_;
    TrainConfig config_;
    std::vector<features::Ipu> train_;
    std::vector<features::Ipu> val_;
    AdamState adam_;
    std::mt19937_64 sample_rng_;
    std::mt19937_64 dropout_rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::vector<LossRecord> history_;
    std::optional<double> best_val_;
    std::size_t best_step_ = 0;
    std::size_t bad_validations_ = 0;
    bool stopped_ = false;
    std::vector<std::vector<double>> best_params_;
};

} // namespace visage::training
