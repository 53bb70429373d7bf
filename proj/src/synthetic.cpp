#include "dag/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <random>

namespace dag::io {

namespace {

constexpr double kJitterFrac = 0.15;   // grid jitter, fraction of pitch
constexpr double kLesionShift = 3.0;   // |mu_lesion|
constexpr int kPlacementAttempts = 10000;
constexpr double kThinningExponent = 1.0;  // lesion share per cluster = 1/label^gamma

std::string bag_name(std::size_t i) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "bag%05zu", i);
    return buf;
}

/// Keep `keep` of the candidate patches, maximally spread: random first
/// pick, then repeatedly the candidate farthest from everything kept so far
/// (ties to the lowest index).
std::vector<std::uint32_t> farthest_point_subset(const Bag& bag,
                                                 const std::vector<std::uint32_t>& candidates,
                                                 std::size_t keep, std::mt19937_64& rng) {
    std::vector<std::uint32_t> chosen;
    std::vector<std::uint32_t> rest = candidates;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t first = std::size_t(unit(rng) * double(rest.size()));
    chosen.push_back(rest[std::min(first, rest.size() - 1)]);
    rest.erase(rest.begin() + std::ptrdiff_t(std::min(first, rest.size() - 1)));
    while (chosen.size() < keep) {
        double best_d = -1.0;
        std::size_t best_at = 0;
        for (std::size_t r = 0; r < rest.size(); ++r) {
            double nearest = std::numeric_limits<double>::infinity();
            for (auto c : chosen)
                nearest = std::min(nearest, squared_distance(bag.coord(rest[r]), bag.coord(c)));
            if (nearest > best_d) {
                best_d = nearest;
                best_at = r;
            }
        }
        chosen.push_back(rest[best_at]);
        rest.erase(rest.begin() + std::ptrdiff_t(best_at));
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

}  // namespace

std::vector<SyntheticBag> gen_synthetic(const SyntheticConfig& cfg) {
    if (cfg.n_bags == 0 || cfg.patches == 0 || cfg.dim == 0)
        throw InputError("gen_synthetic: n_bags, patches and dim must be positive");
    if (cfg.classes < 2) throw InputError("gen_synthetic: need at least 2 classes");
    if (cfg.grid_pitch <= 0 || cfg.cluster_radius <= 0 || cfg.noise_sigma <= 0)
        throw InputError("gen_synthetic: pitch, radius and sigma must be positive");

    const std::uint32_t grid = std::uint32_t(std::ceil(std::sqrt(double(cfg.patches))));
    const double extent = double(grid - 1) * cfg.grid_pitch;
    const std::uint32_t max_clusters = cfg.classes - 1;
    if (2.0 * cfg.cluster_radius > extent + cfg.grid_pitch)
        throw InputError("gen_synthetic: cluster diameter exceeds the coordinate grid");
    if (max_clusters >= 2) {
        // two centers must fit >= 2r apart inside the inner placement box
        const double box = extent - 2.0 * std::min(cfg.cluster_radius, extent / 2.0);
        if (box * std::sqrt(2.0) < 2.0 * cfg.cluster_radius)
            throw InputError(
                "gen_synthetic: grid too small for two disjoint clusters of this radius");
    }

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> jitter(-kJitterFrac * cfg.grid_pitch,
                                                  kJitterFrac * cfg.grid_pitch);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Fixed lesion direction: first feature axis, scaled to kLesionShift.
    std::vector<double> lesion_mean(cfg.dim, 0.0);
    lesion_mean[0] = kLesionShift;

    std::vector<SyntheticBag> out;
    out.reserve(cfg.n_bags);

    for (std::size_t b = 0; b < cfg.n_bags; ++b) {
        SyntheticBag sb;
        Bag& bag = sb.bag;
        bag.id = bag_name(b);
        bag.label = std::uint32_t(b % cfg.classes);
        bag.n = cfg.patches;
        bag.d = cfg.dim;

        bag.coords.resize(std::size_t(bag.n) * 2);
        for (std::uint32_t i = 0; i < bag.n; ++i) {
            const double cx = double(i % grid) * cfg.grid_pitch + jitter(rng);
            const double cy = double(i / grid) * cfg.grid_pitch + jitter(rng);
            bag.coords[2 * i] = float(cx);
            bag.coords[2 * i + 1] = float(cy);
        }

        bag.features.resize(std::size_t(bag.n) * bag.d);
        {
            std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
            for (auto& f : bag.features) f = float(noise(rng));
        }
        sb.lesion_mask.assign(bag.n, 0);

        const std::uint32_t n_clusters = bag.label;
        if (n_clusters > 0) {
            bool placed = false;
            for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
                // clusters grow around seed patches; discs centered on a
                // patch stay well filled
                std::vector<spatial::Point2> centers(n_clusters);
                for (auto& c : centers) {
                    const auto seed_patch =
                        std::min(bag.n - 1, std::uint32_t(unit(rng) * double(bag.n)));
                    c = bag.coord(seed_patch);
                }
                bool ok = true;
                for (std::uint32_t a = 0; a < n_clusters && ok; ++a)
                    for (std::uint32_t b2 = a + 1; b2 < n_clusters && ok; ++b2)
                        ok = squared_distance(centers[a], centers[b2]) >=
                             4.0 * cfg.cluster_radius * cfg.cluster_radius;
                if (!ok) continue;

                // Each cluster keeps a 1/label^gamma share of its disc's
                // patches, spread by farthest-point selection. Multi-cluster
                // bags are thinned, so lesion totals overlap heavily between
                // the nonzero classes and the local density around a lesion
                // patch carries most of the label. Low-occupancy discs are
                // re-placed to keep that density signal stable; disjoint
                // discs keep member sets disjoint.
                const std::size_t min_disc = std::max<std::size_t>(
                    2, std::size_t(0.85 * 3.14159265 * cfg.cluster_radius * cfg.cluster_radius /
                                   (cfg.grid_pitch * cfg.grid_pitch)));
                const double share = 1.0 / std::pow(double(n_clusters), kThinningExponent);
                std::vector<std::vector<std::uint32_t>> members(n_clusters);
                for (std::uint32_t c = 0; c < n_clusters && ok; ++c) {
                    std::vector<std::uint32_t> in_disc;
                    for (std::uint32_t i = 0; i < bag.n; ++i) {
                        const double d2 = squared_distance(bag.coord(i), centers[c]);
                        if (d2 <= cfg.cluster_radius * cfg.cluster_radius)
                            in_disc.push_back(i);
                    }
                    const std::size_t keep =
                        std::size_t(std::ceil(double(in_disc.size()) * share));
                    if (in_disc.size() < min_disc || keep < 2) {
                        ok = false;
                        break;
                    }
                    members[c] = farthest_point_subset(bag, in_disc, keep, rng);
                }
                if (!ok) continue;

                std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
                for (std::uint32_t c = 0; c < n_clusters; ++c) {
                    for (std::uint32_t i : members[c]) {
                        sb.lesion_mask[i] = 1;
                        for (std::uint32_t f = 0; f < bag.d; ++f)
                            bag.features[std::size_t(i) * bag.d + f] =
                                float(lesion_mean[f] + noise(rng));
                    }
                }
                sb.clusters = std::move(members);
                sb.cluster_centers = std::move(centers);
                placed = true;
            }
            if (!placed)
                throw InputError(
                    "gen_synthetic: could not place " + std::to_string(n_clusters) +
                    " disjoint clusters; cluster_radius is too large for the grid");
        }

        bag.validate();
        out.push_back(std::move(sb));
    }
    return out;
}

}  // namespace dag::io
