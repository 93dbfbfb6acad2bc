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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "visage/error.hpp"
#include "visage/model/model.hpp"
#include "visage/numerics/weights.hpp"

namespace visage::model {

/// Copies values of every parameter `dst` shares by name and shape with
/// `src`. Returns how many tensors were copied.
inline std::size_t copy_shared_params(const ParamStore& src, ParamStore& dst)
{
    std::size_t copied = 0;
    for (const auto& p : dst.all()) {
        if (!src.contains(p.name) || src.get(p.name).shape() != p.tensor.shape()) {
            continue;
        }
        const Tensor from = src.get(p.name);
        Tensor to = p.tensor;
        std::ranges::copy(from.data(), to.mutable_data().begin());
        ++copied;
    }
    return copied;
}

inline numerics::WeightFile to_weight_file(const Model& model, std::map<std::string, std::string> meta = {})
{
    numerics::WeightFile file;
    file.meta = std::move(meta);
    file.meta["kind"] = "visage-model";
    file.meta["config"] = config_to_json(model.config()).dump();
    file.meta["param_count"] = std::to_string(model.param_count());
    for (const auto& p : model.params().all()) {
        file.tensors.push_back({p.name, p.tensor.detach()});
    }
    return file;
}

/// Rebuilds a model from a weight file; every parameter must be present with
/// the expected shape and nothing else may be stored.
inline Model from_weight_file(const numerics::WeightFile& file)
{
    auto it = file.meta.find("config");
    if (it == file.meta.end()) {
        throw Error("checkpoint: no model config stored");
    }
    Model model(config_from_json(json::parse(it->second)));
    std::size_t matched = 0;
    for (const auto& p : model.params().all()) {
        const Tensor* stored = file.find(p.name);
        if (stored == nullptr) {
            throw Error("checkpoint: missing parameter \"" + p.name + "\"");
        }
        if (stored->shape() != p.tensor.shape()) {
            throw ShapeError("checkpoint: parameter \"" + p.name + "\" has shape "
                             + numerics::shape_str(stored->shape()) + ", expected "
                             + numerics::shape_str(p.tensor.shape()));
        }
        Tensor to = p.tensor;
        std::ranges::copy(stored->data(), to.mutable_data().begin());
        ++matched;
    }
    if (matched != file.tensors.size()) {
        throw Error("checkpoint: " + std::to_string(file.tensors.size() - matched)
                    + " stored tensors do not belong to this model");
    }
    return model;
}

inline void save_model(const std::filesystem::path& path, const Model& model)
{
    numerics::save_weights(path, to_weight_file(model));
}

inline Model load_model(const std::filesystem::path& path) { return from_weight_file(numerics::load_weights(path)); }

inline json model_card(const Model& model)
{
    json card;
    card["format"] = "visage-model-card";
    card["version"] = 1;
    card["config"] = config_to_json(model.config());
    card["param_count"] = model.param_count();
    json groups = json::object();
    for (const auto& p : model.params().all()) {
        const std::string group = p.name.substr(0, p.name.find('.'));
        groups[group] = groups.value(group, std::size_t{0}) + p.tensor.numel();
    }
    card["param_groups"] = groups;
    return card;
}

inline void write_model_card(const std::filesystem::path& path, const Model& model)
{
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write model card " + path.string());
    }
    out << model_card(model).dump(2) << '\n';
}

} // namespace visage::model
