#pragma once

#include <filesystem>

#include "dag/model.hpp"

namespace dag::io {

// .dagmodel layout, little-endian:
//   "DAGM" | version u32 = 1 | config block | param count u32
//   | per param: name_len u32, name bytes, rows u32, cols u32, f32 data

void save_model(const nn::ParamStore<float>& store, const DagConfig& cfg,
                const std::filesystem::path& path);

struct LoadedModel {
    nn::ParamStore<float> store;
    DagConfig cfg;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace dag::io
