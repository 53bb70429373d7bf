#include "dag/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "dag/errors.hpp"

namespace dag::io {

DatasetSplit split_stratified(const std::vector<std::pair<std::string, std::uint32_t>>& manifest,
                              std::array<double, 3> ratios, std::uint64_t seed) {
    if (manifest.empty()) throw InputError("split_stratified: empty manifest");
    double sum = 0;
    for (double r : ratios) {
        if (r < 0) throw InputError("split_stratified: negative ratio");
        sum += r;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        throw InputError("split_stratified: ratios must sum to 1");

    std::map<std::uint32_t, std::vector<std::string>> by_class;
    for (const auto& [id, label] : manifest) by_class[label].push_back(id);
    for (const auto& [label, ids] : by_class)
        if (ids.size() < 3)
            throw InputError("split_stratified: class " + std::to_string(label) + " has only " +
                             std::to_string(ids.size()) + " samples (need >= 3)");

    std::mt19937 rng(std::uint32_t(seed) ^ std::uint32_t(seed >> 32));
    DatasetSplit split;
    split.fold_seed = seed;
    std::vector<std::string>* parts[3] = {&split.train, &split.val, &split.test};

    for (auto& [label, ids] : by_class) {
        std::shuffle(ids.begin(), ids.end(), rng);
        const std::size_t m = ids.size();
        std::size_t counts[3];
        double remainders[3];
        std::size_t assigned = 0;
        for (int p = 0; p < 3; ++p) {
            const double quota = double(m) * ratios[p];
            counts[p] = std::size_t(std::floor(quota + 1e-9));
            remainders[p] = quota - double(counts[p]);
            assigned += counts[p];
        }
        // hand leftovers to the largest remainders; ties to the earlier part
        for (std::size_t left = m - assigned; left > 0; --left) {
            int best = 0;
            for (int p = 1; p < 3; ++p)
                if (remainders[p] > remainders[best]) best = p;
            counts[best] += 1;
            remainders[best] = -1.0;
        }
        std::size_t pos = 0;
        for (int p = 0; p < 3; ++p)
            for (std::size_t i = 0; i < counts[p]; ++i) parts[p]->push_back(ids[pos++]);
    }
    return split;
}

}  // namespace dag::io
