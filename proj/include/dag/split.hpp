#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dag::io {

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    std::uint64_t fold_seed = 0;
};

/// Seeded stratified split: each class is shuffled independently, then
/// apportioned to train/val/test by largest remainder, keeping every part
/// within one sample of its proportional share per class.
DatasetSplit split_stratified(const std::vector<std::pair<std::string, std::uint32_t>>& manifest,
                              std::array<double, 3> ratios, std::uint64_t seed);

}  // namespace dag::io
