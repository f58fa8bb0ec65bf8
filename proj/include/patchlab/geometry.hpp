// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>

namespace patchlab {

// axis-aligned box in pixel coordinates, x1 < x2 and y1 < y2
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
    double longer_side() const { return std::max(width(), height()); }
    double shorter_side() const { return std::min(width(), height()); }
    bool valid() const { return x1 < x2 && y1 < y2; }
    bool contains(double x, double y) const { return x >= x1 && x <= x2 && y >= y1 && y <= y2; }
};

struct Detection {
    Box box;
    double confidence = 0.0;
};

} // namespace patchlab
