#include "titan/boxes.hpp"

#include <algorithm>

namespace titan {

double Box::area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

Box Box::clamped() const {
    return {std::clamp(x1, 0.0, 1.0), std::clamp(y1, 0.0, 1.0), std::clamp(x2, 0.0, 1.0), std::clamp(y2, 0.0, 1.0)};
}

namespace {
double intersection(const Box& a, const Box& b) {
    const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    return std::max(0.0, w) * std::max(0.0, h);
}
}  // namespace

double iou(const Box& a, const Box& b) {
    const double inter = intersection(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
    const double inter = intersection(a, b);
    const double uni = a.area() + b.area() - inter;
    const double hull = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) * (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
    const double i = uni > 0.0 ? inter / uni : 0.0;
    return hull > 0.0 ? i - (hull - uni) / hull : i;
}

bool contains_point(const Box& b, double x, double y) { return x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2; }

Box flip_horizontal(const Box& b) { return {1.0 - b.x2, b.y1, 1.0 - b.x1, b.y2}; }

std::pair<int, double> DetectionSet::best_class(std::size_t j) const {
    const auto& row = scores.at(j);
    const auto it = std::max_element(row.begin(), row.end());
    return {static_cast<int>(it - row.begin()), *it};
}

}  // namespace titan
