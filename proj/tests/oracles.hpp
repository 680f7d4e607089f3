#pragma once

// Independent reference implementations used by the tests.

#include <cstdint>
#include <cstdlib>
#include <limits>

#include "damkit/geometry.hpp"

namespace oracle {

// Growth per side for alpha = num/den: round_half_up((alpha - 1) / 2 * side),
// done in exact integer arithmetic.
inline long long grow(int side, long long num, long long den) {
    const long long twice = (num - den) * side;  // 2 * den * per_side
    return (twice + den) / (2 * den);
}

// All windows [a, a + target) that fit in [0, limit) and cover [lo, hi); the
// one whose start is nearest the centred start wins.
inline void floor_side(int& lo, int& hi, int limit, int min_side) {
    const int target = min_side < limit ? min_side : limit;
    const int len = hi - lo;
    if (len >= target) return;
    const int ideal = lo - (target - len) / 2;
    int best = -1;
    long long best_dist = std::numeric_limits<long long>::max();
    for (int a = 0; a + target <= limit; ++a) {
        if (a > lo || a + target < hi) continue;
        const long long d = std::llabs(static_cast<long long>(a) - ideal);
        if (d < best_dist) {
            best_dist = d;
            best = a;
        }
    }
    lo = best;
    hi = best + target;
}

/// Extend by ((alpha - 1) / 2) x side on each side, stop at the image border,
/// then widen any side shorter than min_side.
inline damkit::PixelBox expand_box(const damkit::PixelBox& b, long long alpha_num, long long alpha_den, int w, int h,
                                   int min_side) {
    const long long gx = grow(b.width(), alpha_num, alpha_den);
    const long long gy = grow(b.height(), alpha_num, alpha_den);
    int x0 = static_cast<int>(b.x0 - gx < 0 ? 0 : b.x0 - gx);
    int x1 = static_cast<int>(b.x1 + gx > w ? w : b.x1 + gx);
    int y0 = static_cast<int>(b.y0 - gy < 0 ? 0 : b.y0 - gy);
    int y1 = static_cast<int>(b.y1 + gy > h ? h : b.y1 + gy);
    floor_side(x0, x1, w, min_side);
    floor_side(y0, y1, h, min_side);
    return {x0, y0, x1, y1};
}

inline damkit::PixelBox bbox_scan(const damkit::RegionMask& m) {
    int x0 = m.width(), y0 = m.height(), x1 = -1, y1 = -1;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (m.at(x, y)) {
                if (x < x0) x0 = x;
                if (y < y0) y0 = y;
                if (x > x1) x1 = x;
                if (y > y1) y1 = y;
            }
    return {x0, y0, x1 + 1, y1 + 1};
}

}  // namespace oracle
