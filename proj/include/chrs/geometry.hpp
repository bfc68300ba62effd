#ifndef CHRS_GEOMETRY_HPP
#define CHRS_GEOMETRY_HPP

#include <cmath>

namespace chrs {

// Planar vector/point in image coordinates, (y, x) order, pixel units.
struct Vec2 {
    double y = 0.0;
    double x = 0.0;

    Vec2() = default;
    Vec2(double y_, double x_) : y(y_), x(x_) {}

    Vec2 operator+(const Vec2& o) const { return {y + o.y, x + o.x}; }
    Vec2 operator-(const Vec2& o) const { return {y - o.y, x - o.x}; }
    Vec2 operator*(double s) const { return {y * s, x * s}; }
    Vec2 operator-() const { return {-y, -x}; }

    double dot(const Vec2& o) const { return y * o.y + x * o.x; }
    // z-component of the cross product treating (y,x) as a 2-D plane.
    double cross(const Vec2& o) const { return y * o.x - x * o.y; }
    double norm() const { return std::sqrt(y * y + x * x); }

    Vec2 normalized() const {
        double n = norm();
        return n > 0.0 ? Vec2{y / n, x / n} : Vec2{0.0, 0.0};
    }
};

inline double sqr(double v) { return v * v; }

}  // namespace chrs

#endif
