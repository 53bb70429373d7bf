#include "dag/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dag/errors.hpp"

namespace dag::spatial {

namespace {

bool finite(Point2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

double axis_coord(Point2 p, std::uint8_t axis) { return axis == 0 ? p.x : p.y; }

}  // namespace

PointIndex::PointIndex(std::vector<Point2> points) : points_(std::move(points)) {
    if (points_.empty()) throw InputError("PointIndex: point list is empty");
    for (const Point2& p : points_)
        if (!finite(p)) throw InputError("PointIndex: non-finite coordinate");
    std::vector<std::uint32_t> order(points_.size());
    std::iota(order.begin(), order.end(), 0u);
    nodes_.reserve(points_.size());
    root_ = build(order.data(), order.data() + order.size(), 0);
}

std::int32_t PointIndex::build(std::uint32_t* first, std::uint32_t* last, int depth) {
    if (first == last) return -1;
    const std::uint8_t axis = std::uint8_t(depth & 1);
    std::uint32_t* mid = first + (last - first) / 2;
    std::nth_element(first, mid, last, [&](std::uint32_t a, std::uint32_t b) {
        return axis_coord(points_[a], axis) < axis_coord(points_[b], axis);
    });
    const std::int32_t id = std::int32_t(nodes_.size());
    nodes_.push_back(Node{*mid, -1, -1, axis});
    const std::int32_t left = build(first, mid, depth + 1);
    const std::int32_t right = build(mid + 1, last, depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

std::size_t PointIndex::nearest(Point2 query) const {
    if (!finite(query)) throw InputError("PointIndex::nearest: non-finite query");
    double best_d2 = std::numeric_limits<double>::infinity();
    std::size_t best_idx = points_.size();
    search(root_, query, best_d2, best_idx);
    return best_idx;
}

void PointIndex::search(std::int32_t node, Point2 q, double& best_d2,
                        std::size_t& best_idx) const {
    if (node < 0) return;
    const Node& n = nodes_[std::size_t(node)];
    const Point2 p = points_[n.point];
    const double d2 = squared_distance(p, q);
    if (d2 < best_d2 || (d2 == best_d2 && n.point < best_idx)) {
        best_d2 = d2;
        best_idx = n.point;
    }
    const double delta = axis_coord(q, n.axis) - axis_coord(p, n.axis);
    const std::int32_t near_side = delta < 0.0 ? n.left : n.right;
    const std::int32_t far_side = delta < 0.0 ? n.right : n.left;
    search(near_side, q, best_d2, best_idx);
    // <= keeps exact equidistant candidates reachable for the index tie-break
    if (delta * delta <= best_d2) search(far_side, q, best_d2, best_idx);
}

std::size_t nearest_bruteforce(std::span<const Point2> points, Point2 query) {
    if (points.empty()) throw InputError("nearest_bruteforce: point list is empty");
    if (!finite(query)) throw InputError("nearest_bruteforce: non-finite query");
    std::size_t best = 0;
    double best_d2 = squared_distance(points[0], query);
    for (std::size_t i = 1; i < points.size(); ++i) {
        const double d2 = squared_distance(points[i], query);
        if (d2 < best_d2) {
            best_d2 = d2;
            best = i;
        }
    }
    return best;
}

}  // namespace dag::spatial
