#pragma once

#include <cstdint>
#include <string>

#include "kglm/model.hpp"

namespace kglm {

struct CheckpointMeta {
    int64_t step = 0;
    int lesson = 0;
    std::string variant;  // schedule variant the run used ("cr", "cr03", "cr13")
    std::string label;    // boundary label ("L1", "L13", ...)
    uint64_t seed = 0;
    std::string parent;   // checkpoint this run extended, empty for fresh runs
};

// Directory layout: manifest.json (config, run metadata, parameter table)
// plus weights.bin (little-endian float32, concatenated in manifest order).
template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& dir, const CheckpointMeta& meta);

template <typename T>
Model<T> load_checkpoint(const std::string& dir, CheckpointMeta* meta = nullptr);

}  // namespace kglm
