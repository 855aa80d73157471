#pragma once

#include <cmath>

namespace fooloc {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(const Point2& a, const Point2& b)
{
    return std::hypot(a.x - b.x, a.y - b.y);
}

/// Axis-aligned rectangle in meters.
struct AreaBounds {
    double x_min = 0.0;
    double x_max = 0.0;
    double y_min = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    Point2 center() const { return {(x_min + x_max) / 2.0, (y_min + y_max) / 2.0}; }

    bool contains(const Point2& p, double tolerance = 1e-9) const
    {
        return p.x >= x_min - tolerance && p.x <= x_max + tolerance &&
               p.y >= y_min - tolerance && p.y <= y_max + tolerance;
    }

    Point2 clip(const Point2& p) const
    {
        return {std::fmin(std::fmax(p.x, x_min), x_max), std::fmin(std::fmax(p.y, y_min), y_max)};
    }

    friend bool operator==(const AreaBounds&, const AreaBounds&) = default;
};

} // namespace fooloc
