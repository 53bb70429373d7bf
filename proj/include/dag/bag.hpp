#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dag/errors.hpp"
#include "dag/spatial.hpp"

namespace dag {

/// One slide/ROI as a bag of patch feature vectors with real 2-D pixel
/// coordinates and a single class label. Coordinates and features are stored
/// in the file's f32 precision so round trips are bitwise lossless.
struct Bag {
    std::string id;
    std::uint32_t label = 0;
    std::uint32_t n = 0;  // patches
    std::uint32_t d = 0;  // feature dimension
    std::vector<float> features;  // n*d, row-major
    std::vector<float> coords;    // n*2, interleaved x,y

    spatial::Point2 coord(std::size_t i) const {
        return {double(coords[2 * i]), double(coords[2 * i + 1])};
    }

    std::vector<spatial::Point2> coord_points() const {
        std::vector<spatial::Point2> pts(n);
        for (std::size_t i = 0; i < n; ++i) pts[i] = coord(i);
        return pts;
    }

    void validate() const {
        if (n == 0 || d == 0) throw InputError("bag " + id + ": empty patch set or feature dim");
        if (features.size() != std::size_t(n) * d || coords.size() != std::size_t(n) * 2)
            throw InputError("bag " + id + ": payload sizes do not match n/d header");
        for (float c : coords)
            if (!std::isfinite(c)) throw InputError("bag " + id + ": non-finite coordinate");
    }
};

struct ManifestEntry {
    std::string id;
    std::string path;  // relative to the manifest file's directory
    std::uint32_t label = 0;
};

}  // namespace dag
