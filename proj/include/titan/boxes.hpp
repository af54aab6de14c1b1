#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace titan {

/// Axis-aligned box (x1, y1, x2, y2) in normalized image coordinates.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const;
    double center_x() const { return 0.5 * (x1 + x2); }
    double center_y() const { return 0.5 * (y1 + y2); }
    bool valid() const { return x1 <= x2 && y1 <= y2; }
    Box clamped() const;
    bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b);
double giou(const Box& a, const Box& b);
/// Closed-interval containment: a point on the edge is inside.
bool contains_point(const Box& b, double x, double y);
Box flip_horizontal(const Box& b);

/// Per-image predictions: one box and K per-class sigmoid scores per slot.
struct DetectionSet {
    std::vector<Box> boxes;
    std::vector<std::vector<double>> scores;

    std::size_t size() const { return boxes.size(); }
    std::size_t num_classes() const { return scores.empty() ? 0 : scores.front().size(); }
    /// Highest class score and its class index for slot j.
    std::pair<int, double> best_class(std::size_t j) const;
};

/// Labeled boxes for one image.
struct GroundTruth {
    std::vector<Box> boxes;
    std::vector<int> labels;

    std::size_t size() const { return boxes.size(); }
};

/// A scored, labeled box: the unit consumed by NMS and the metrics.
struct ScoredBox {
    Box box;
    int label = 0;
    double score = 0.0;
};

}  // namespace titan
