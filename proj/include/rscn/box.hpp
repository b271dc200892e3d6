#pragma once

// Axis-aligned boxes on the pixel grid, half-open: [x1, x2) x [y1, y2).
// Generated boxes always carry integral coordinates but the geometry is
// defined for any reals with x1 < x2, y1 < y2.

#include <algorithm>
#include <stdexcept>
#include <string>

namespace rscn {

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool valid() const { return x1 < x2 && y1 < y2; }

    bool operator==(const Box&) const = default;
};

inline std::string box_str(const Box& b) {
    return "(" + std::to_string(b.x1) + "," + std::to_string(b.y1) + "," + std::to_string(b.x2) +
           "," + std::to_string(b.y2) + ")";
}

inline double iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid())
        throw std::invalid_argument("iou: degenerate box " + box_str(a.valid() ? b : a));
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    if (inter <= 0.0) return 0.0;
    return inter / (a.area() + b.area() - inter);
}

}  // namespace rscn
