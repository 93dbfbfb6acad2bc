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

// Weight file layout (all integers little-endian):
//
//   "VSGW"  u32 version
//   u32 n_meta   { u32 len, key bytes, u32 len, value bytes } * n_meta
//   u32 n_tensor { u32 len, name bytes, u32 ndim, u64 dim * ndim, f64 * numel } * n_tensor
//
// Tensors are stored row-major in the order given, so identical inputs give
// byte-identical files.

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "visage/numerics/gradcheck.hpp"
#include "visage/numerics/tensor.hpp"

namespace visage::numerics {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct WeightFile {
    std::map<std::string, std::string> meta;
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const
    {
        for (const auto& t : tensors) {
            if (t.name == name) {
                return &t.tensor;
            }
        }
        return nullptr;
    }
};

namespace detail {

template <class T>
void write_pod(std::ostream& os, T value)
{
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void write_string(std::ostream& os, const std::string& s)
{
    write_pod(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T read_pod(std::istream& is, const std::string& what)
{
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw Error("weights: truncated file while reading " + what);
    }
    return value;
}

inline std::string read_string(std::istream& is, const std::string& what)
{
    const auto len = read_pod<std::uint32_t>(is, what);
    std::string s(len, '\0');
    if (len > 0 && !is.read(s.data(), len)) {
        throw Error("weights: truncated file while reading " + what);
    }
    return s;
}

} // namespace detail

inline void save_weights(const std::filesystem::path& path, const WeightFile& file)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error("weights: cannot open " + path.string() + " for writing");
    }
    os.write("VSGW", 4);
    detail::write_pod(os, kWeightFormatVersion);
    detail::write_pod(os, static_cast<std::uint32_t>(file.meta.size()));
    for (const auto& [key, value] : file.meta) {
        detail::write_string(os, key);
        detail::write_string(os, value);
    }
    detail::write_pod(os, static_cast<std::uint32_t>(file.tensors.size()));
    for (const auto& [name, tensor] : file.tensors) {
        detail::write_string(os, name);
        detail::write_pod(os, static_cast<std::uint32_t>(tensor.dim()));
        for (std::size_t d : tensor.shape()) {
            detail::write_pod(os, static_cast<std::uint64_t>(d));
        }
        os.write(reinterpret_cast<const char*>(tensor.data().data()),
                 static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    }
    if (!os) {
        throw Error("weights: write failed for " + path.string());
    }
}

inline WeightFile load_weights(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("weights: cannot open " + path.string());
    }
    char magic[4] = {};
    if (!is.read(magic, 4) || std::string(magic, 4) != "VSGW") {
        throw Error("weights: " + path.string() + " is not a weight file");
    }
    const auto version = detail::read_pod<std::uint32_t>(is, "version");
    if (version != kWeightFormatVersion) {
        throw Error("weights: unsupported format version " + std::to_string(version));
    }
    WeightFile file;
    const auto n_meta = detail::read_pod<std::uint32_t>(is, "metadata count");
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto key = detail::read_string(is, "metadata key");
        file.meta[key] = detail::read_string(is, "metadata value");
    }
    const auto n_tensors = detail::read_pod<std::uint32_t>(is, "tensor count");
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        auto name = detail::read_string(is, "tensor name");
        const auto ndim = detail::read_pod<std::uint32_t>(is, name + " rank");
        Shape shape;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape.push_back(static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is, name + " shape")));
        }
        std::vector<double> values(shape_numel(shape));
        if (!values.empty()
            && !is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
            throw Error("weights: truncated data for " + name);
        }
        file.tensors.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
    }
    return file;
}

} // namespace visage::numerics
