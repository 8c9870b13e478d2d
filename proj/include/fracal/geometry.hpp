#pragma once

#include <algorithm>
#include <cstddef>

namespace fracal {

// Location in the unit square, normalized by image width and height.
struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

// Axis-aligned box given by its center and extent. Coordinates are normalized
// when the box comes from a dataset or a logits file.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    static Box from_xywh(double x, double y, double w, double h) {
        return {x + w / 2.0, y + h / 2.0, w, h};
    }

    double x0() const { return cx - w / 2.0; }
    double y0() const { return cy - h / 2.0; }
    double x1() const { return cx + w / 2.0; }
    double y1() const { return cy + h / 2.0; }
    double area() const { return std::max(0.0, w) * std::max(0.0, h); }
    Point center() const { return {cx, cy}; }

    friend bool operator==(const Box&, const Box&) = default;
};

// Intersection over union; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
    const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    if (iw <= 0.0 || ih <= 0.0) {
        return 0.0;
    }
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// Grid cell index along one axis for a normalized coordinate; the closed top
// edge (u == 1) lands in the last cell.
inline std::size_t cell_index(double u, std::size_t grid) {
    if (!(u > 0.0)) {
        return 0;
    }
    const auto idx = static_cast<std::size_t>(std::min(u, 1.0) * static_cast<double>(grid));
    return std::min(idx, grid - 1);
}

}  // namespace fracal
