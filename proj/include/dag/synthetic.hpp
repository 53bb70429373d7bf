#pragma once

#include <cstdint>
#include <vector>

#include "dag/bag.hpp"

namespace dag::io {

struct SyntheticConfig {
    std::uint32_t n_bags = 300;
    std::uint32_t classes = 3;      // labels 0..classes-1 = planted cluster count
    std::uint32_t patches = 64;     // N
    std::uint32_t dim = 64;         // D
    double grid_pitch = 256.0;      // pixels between patch centers
    double cluster_radius = 384.0;  // pixels
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;
};

/// A generated bag plus the planted ground truth the bag file does not carry
/// (used by tests and the heatmap sanity gate).
struct SyntheticBag {
    Bag bag;
    std::vector<std::vector<std::uint32_t>> clusters;  // lesion patch ids per cluster
    std::vector<spatial::Point2> cluster_centers;
    std::vector<std::uint8_t> lesion_mask;  // per patch, 1 = lesion

    std::uint32_t lesion_count() const {
        std::uint32_t n = 0;
        for (auto m : lesion_mask) n += m;
        return n;
    }
};

/// Deterministic bag generator with planted spatial structure. Coordinates
/// sit on a jittered grid; class c plants c disjoint lesion clusters, each
/// claiming every patch inside a disc of cluster_radius. The label is the
/// number of spatially coherent groups planted in the bag.
std::vector<SyntheticBag> gen_synthetic(const SyntheticConfig& cfg);

}  // namespace dag::io
