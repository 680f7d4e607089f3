#pragma once

// Region masks, pixel boxes and focal-crop construction.
//
// Boxes are half-open pixel ranges [x0, x1) x [y0, y1). Images are row-major
// RGB with values in [0, 1]; masks are row-major 0/1 bytes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "damkit/error.hpp"

namespace damkit {

struct PixelBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const noexcept { return x1 - x0; }
    int height() const noexcept { return y1 - y0; }
    long long area() const noexcept { return static_cast<long long>(width()) * height(); }

    bool contains(const PixelBox& o) const noexcept {
        return x0 <= o.x0 && y0 <= o.y0 && o.x1 <= x1 && o.y1 <= y1;
    }

    bool within(int image_w, int image_h) const noexcept {
        return 0 <= x0 && x0 < x1 && x1 <= image_w && 0 <= y0 && y0 < y1 && y1 <= image_h;
    }

    friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

inline std::string to_string(const PixelBox& b) {
    return "(" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) + "," +
           std::to_string(b.y1) + ")";
}

class RegionMask {
public:
    RegionMask() = default;
    RegionMask(int width, int height) : width_(width), height_(height) {
        if (width < 1 || height < 1) throw ShapeMismatch("mask dimensions must be positive");
        bits_.assign(static_cast<std::size_t>(width) * height, 0);
    }
    RegionMask(int width, int height, std::vector<std::uint8_t> bits) : width_(width), height_(height) {
        if (width < 1 || height < 1) throw ShapeMismatch("mask dimensions must be positive");
        if (bits.size() != static_cast<std::size_t>(width) * height)
            throw ShapeMismatch("mask data length " + std::to_string(bits.size()) + " != " + std::to_string(width) +
                                "x" + std::to_string(height));
        for (auto& b : bits) b = b ? 1 : 0;
        bits_ = std::move(bits);
    }

    static RegionMask filled(int width, int height, bool value = true) {
        RegionMask m(width, height);
        std::fill(m.bits_.begin(), m.bits_.end(), value ? 1 : 0);
        return m;
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }

    bool at(int x, int y) const noexcept { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int x, int y, bool v = true) noexcept { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

    /// Sets every pixel of `box` (clipped to the mask) to v.
    void fill(const PixelBox& box, bool v = true) noexcept {
        for (int y = std::max(0, box.y0); y < std::min(height_, box.y1); ++y)
            for (int x = std::max(0, box.x0); x < std::min(width_, box.x1); ++x) set(x, y, v);
    }

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
    }
    bool empty() const noexcept { return count() == 0; }

    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

    friend bool operator==(const RegionMask&, const RegionMask&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

class Image {
public:
    static constexpr int kChannels = 3;

    Image() = default;
    Image(int width, int height, double fill = 0.0) : width_(width), height_(height) {
        if (width < 1 || height < 1) throw ShapeMismatch("image dimensions must be positive");
        data_.assign(static_cast<std::size_t>(width) * height * kChannels, fill);
    }
    Image(int width, int height, std::vector<double> data) : width_(width), height_(height), data_(std::move(data)) {
        if (width < 1 || height < 1) throw ShapeMismatch("image dimensions must be positive");
        if (data_.size() != static_cast<std::size_t>(width) * height * kChannels)
            throw ShapeMismatch("image data length " + std::to_string(data_.size()) + " != " + std::to_string(width) +
                                "x" + std::to_string(height) + "x3");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }

    double at(int x, int y, int c) const noexcept { return data_[index(x, y, c)]; }
    double& at(int x, int y, int c) noexcept { return data_[index(x, y, c)]; }

    void fill(const PixelBox& box, double r, double g, double b) noexcept {
        for (int y = std::max(0, box.y0); y < std::min(height_, box.y1); ++y)
            for (int x = std::max(0, box.x0); x < std::min(width_, box.x1); ++x) {
                at(x, y, 0) = r;
                at(x, y, 1) = g;
                at(x, y, 2) = b;
            }
    }

    const std::vector<double>& data() const noexcept { return data_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int x, int y, int c) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

/// Tight bounding box of the set pixels.
inline PixelBox bbox_of_mask(const RegionMask& mask) {
    int x0 = mask.width(), y0 = mask.height(), x1 = 0, y1 = 0;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            if (!mask.at(x, y)) continue;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x + 1);
            y1 = std::max(y1, y + 1);
        }
    }
    if (x1 == 0) throw EmptyMask();
    return {x0, y0, x1, y1};
}

inline constexpr double kDefaultAlpha = 3.0;
inline constexpr int kDefaultMinSide = 48;

namespace detail {

struct Span {
    int lo;
    int hi;
};

// Grows [lo, hi) to at least min(min_side, limit) about its center; the odd
// extra pixel goes to the high side. Shifts inward when it leaves [0, limit).
inline Span enforce_min_side(Span s, int limit, int min_side) {
    const int target = std::min(min_side, limit);
    const int len = s.hi - s.lo;
    if (len >= target) return s;
    const int deficit = target - len;
    s.lo -= deficit / 2;
    s.hi += deficit - deficit / 2;
    if (s.lo < 0) {
        s.hi -= s.lo;
        s.lo = 0;
    }
    if (s.hi > limit) {
        s.lo -= s.hi - limit;
        s.hi = limit;
    }
    return s;
}

inline Span grow_and_clip(int lo, int hi, double alpha, int limit) {
    const double per_side = (alpha - 1.0) / 2.0 * static_cast<double>(hi - lo);
    const auto grow = static_cast<long long>(std::floor(per_side + 0.5));  // round half up
    const long long nlo = std::max<long long>(0, lo - grow);
    const long long nhi = std::min<long long>(limit, hi + grow);
    return {static_cast<int>(nlo), static_cast<int>(nhi)};
}

}  // namespace detail

/// Expands `box` by `alpha` per axis about its center, clips to the image and
/// enforces a minimum side length (capped at the image size).
///
/// alpha = 3 adds one full width on the left and right and one full height on
/// top and bottom. Fractional growth rounds half up.
inline PixelBox expand_box(const PixelBox& box, double alpha, int image_w, int image_h,
                           int min_side = kDefaultMinSide) {
    if (image_w < 1 || image_h < 1) throw InvalidBox("image dimensions must be positive");
    if (!box.within(image_w, image_h))
        throw InvalidBox("box " + to_string(box) + " is degenerate or outside " + std::to_string(image_w) + "x" +
                         std::to_string(image_h));
    if (!(alpha >= 1.0) || !std::isfinite(alpha)) throw InvalidBox("alpha must be finite and >= 1");
    if (min_side < 1) throw InvalidBox("min_side must be >= 1");

    auto xs = detail::grow_and_clip(box.x0, box.x1, alpha, image_w);
    auto ys = detail::grow_and_clip(box.y0, box.y1, alpha, image_h);
    xs = detail::enforce_min_side(xs, image_w, min_side);
    ys = detail::enforce_min_side(ys, image_h, min_side);
    return {xs.lo, ys.lo, xs.hi, ys.hi};
}

inline Image crop(const Image& image, const PixelBox& box) {
    if (!box.within(image.width(), image.height()))
        throw InvalidBox("crop box " + to_string(box) + " outside image");
    Image out(box.width(), box.height());
    for (int y = 0; y < box.height(); ++y)
        for (int x = 0; x < box.width(); ++x)
            for (int c = 0; c < Image::kChannels; ++c) out.at(x, y, c) = image.at(box.x0 + x, box.y0 + y, c);
    return out;
}

inline RegionMask crop_mask(const RegionMask& mask, const PixelBox& box) {
    if (!box.within(mask.width(), mask.height())) throw InvalidBox("crop box " + to_string(box) + " outside mask");
    RegionMask out(box.width(), box.height());
    for (int y = 0; y < box.height(); ++y)
        for (int x = 0; x < box.width(); ++x) out.set(x, y, mask.at(box.x0 + x, box.y0 + y));
    return out;
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
inline Image resize(const Image& image, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw ShapeMismatch("resize target must be at least 1x1");
    if (image.width() < 1 || image.height() < 1) throw ShapeMismatch("cannot resize an empty image");
    if (out_w == image.width() && out_h == image.height()) return image;

    const double sx = static_cast<double>(image.width()) / out_w;
    const double sy = static_cast<double>(image.height()) / out_h;
    Image out(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height() - 1));
        const int ya = static_cast<int>(fy);
        const int yb = std::min(ya + 1, image.height() - 1);
        const double ty = fy - ya;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width() - 1));
            const int xa = static_cast<int>(fx);
            const int xb = std::min(xa + 1, image.width() - 1);
            const double tx = fx - xa;
            for (int c = 0; c < Image::kChannels; ++c) {
                const double p00 = image.at(xa, ya, c), p10 = image.at(xb, ya, c);
                const double p01 = image.at(xa, yb, c), p11 = image.at(xb, yb, c);
                const double top = p00 + tx * (p10 - p00);
                const double bottom = p01 + tx * (p11 - p01);
                out.at(x, y, c) = top + ty * (bottom - top);
            }
        }
    }
    return out;
}

/// Nearest-neighbour resampling; the result stays binary.
inline RegionMask resize_mask(const RegionMask& mask, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw ShapeMismatch("resize target must be at least 1x1");
    RegionMask out(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        const int sy = static_cast<int>((2LL * y + 1) * mask.height() / (2LL * out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = static_cast<int>((2LL * x + 1) * mask.width() / (2LL * out_w));
            out.set(x, y, mask.at(sx, sy));
        }
    }
    return out;
}

/// Global view and focal crop of one region, both at encoder resolution.
struct FocalPrompt {
    Image full_image;
    RegionMask full_mask;
    PixelBox crop_box;  // in source-image pixels
    int source_width = 0;
    int source_height = 0;
    Image focal_image;
    RegionMask focal_mask;
};

inline FocalPrompt build_focal_prompt(const Image& image, const RegionMask& mask, double alpha = kDefaultAlpha,
                                      int min_side = kDefaultMinSide, int enc_res = 32) {
    if (image.width() != mask.width() || image.height() != mask.height())
        throw ShapeMismatch("image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                            " but mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()));
    if (enc_res < 1) throw ShapeMismatch("encoder resolution must be positive");
    const PixelBox box = bbox_of_mask(mask);
    const PixelBox focal = expand_box(box, alpha, image.width(), image.height(), min_side);

    FocalPrompt p;
    p.crop_box = focal;
    p.source_width = image.width();
    p.source_height = image.height();
    p.full_image = resize(image, enc_res, enc_res);
    p.full_mask = resize_mask(mask, enc_res, enc_res);
    p.focal_image = resize(crop(image, focal), enc_res, enc_res);
    p.focal_mask = resize_mask(crop_mask(mask, focal), enc_res, enc_res);
    return p;
}

}  // namespace damkit
