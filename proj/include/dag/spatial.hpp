#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dag::spatial {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

inline double squared_distance(Point2 a, Point2 b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return dx * dx + dy * dy;
}

/// Immutable balanced kd-tree over 2-D points. nearest() returns the index
/// (in original input order) of the point minimizing squared Euclidean
/// distance; exact ties resolve to the lowest index, so results never depend
/// on tree layout. Concurrent queries are safe after construction.
class PointIndex {
  public:
    explicit PointIndex(std::vector<Point2> points);

    std::size_t size() const { return points_.size(); }
    const std::vector<Point2>& points() const { return points_; }

    std::size_t nearest(Point2 query) const;

  private:
    struct Node {
        std::uint32_t point;
        std::int32_t left = -1;
        std::int32_t right = -1;
        std::uint8_t axis = 0;
    };

    std::int32_t build(std::uint32_t* first, std::uint32_t* last, int depth);
    void search(std::int32_t node, Point2 q, double& best_d2, std::size_t& best_idx) const;

    std::vector<Point2> points_;
    std::vector<Node> nodes_;
    std::int32_t root_ = -1;
};

/// Linear-scan oracle with the same contract and tie-break as
/// PointIndex::nearest.
std::size_t nearest_bruteforce(std::span<const Point2> points, Point2 query);

}  // namespace dag::spatial
