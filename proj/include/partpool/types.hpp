#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace partpool {

/// One annotated keypoint in image pixel coordinates.
struct KeypointAnnotation {
    std::size_t part = 0;
    double x = 0.0;
    double y = 0.0;
    bool visible = false;
};

/// A decoded keypoint prediction with its sigmoid confidence.
struct DecodedKeypoint {
    std::size_t part = 0;
    double x = 0.0;
    double y = 0.0;
    double score = 0.0;
};

/// A grid-cell location for part pooling; valid == false marks an
/// absent (invisible) part.
struct GridLoc {
    std::size_t row = 0;
    std::size_t col = 0;
    bool valid = false;
};

/// Axis-aligned box, (x, y) top-left corner plus width and height.
struct Box {
    double x = 0.0, y = 0.0, w = 0.0, h = 0.0;

    double area() const { return w > 0 && h > 0 ? w * h : 0.0; }

    static double iou(const Box& a, const Box& b) {
        const double x0 = std::max(a.x, b.x);
        const double y0 = std::max(a.y, b.y);
        const double x1 = std::min(a.x + a.w, b.x + b.w);
        const double y1 = std::min(a.y + a.h, b.y + b.h);
        const double inter = std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
        const double uni = a.area() + b.area() - inter;
        return uni > 0.0 ? inter / uni : 0.0;
    }
};

} // namespace partpool
