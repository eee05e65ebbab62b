#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "orthoseg/error.hpp"

namespace orthoseg {

struct Rgb8 {
    std::uint8_t r = 0, g = 0, b = 0;

    friend bool operator==(const Rgb8&, const Rgb8&) = default;
    friend auto operator<=>(const Rgb8&, const Rgb8&) = default;
};

struct PixelPoint {
    int x = 0, y = 0;
    friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

/// Axis-aligned pixel rectangle.
struct PixelRect {
    int x = 0, y = 0, w = 0, h = 0;

    int right() const { return x + w; }
    int bottom() const { return y + h; }
    bool empty() const { return w <= 0 || h <= 0; }
    bool contains(int px, int py) const { return px >= x && py >= y && px < x + w && py < y + h; }
    bool contains(const PixelRect& o) const {
        return o.x >= x && o.y >= y && o.right() <= right() && o.bottom() <= bottom();
    }
    PixelRect intersect(const PixelRect& o) const;

    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

inline PixelRect PixelRect::intersect(const PixelRect& o) const {
    const int x0 = x > o.x ? x : o.x;
    const int y0 = y > o.y ? y : o.y;
    const int x1 = right() < o.right() ? right() : o.right();
    const int y1 = bottom() < o.bottom() ? bottom() : o.bottom();
    if (x1 <= x0 || y1 <= y0)
        return {x0, y0, 0, 0};
    return {x0, y0, x1 - x0, y1 - y0};
}

/// Interleaved RGB8 image, row-major.
class ImageRgb {
public:
    ImageRgb() = default;
    ImageRgb(int width, int height, Rgb8 fill = {})
        : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height * 3) {
        require(width >= 0 && height >= 0, "image dimensions must be non-negative");
        if (fill != Rgb8{})
            for (std::size_t i = 0; i < data_.size(); i += 3) {
                data_[i] = fill.r;
                data_[i + 1] = fill.g;
                data_[i + 2] = fill.b;
            }
    }
    ImageRgb(int width, int height, std::vector<std::uint8_t> data)
        : width_(width), height_(height), data_(std::move(data)) {
        require(data_.size() == static_cast<std::size_t>(width) * height * 3, "RGB buffer size mismatch");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return width_ == 0 || height_ == 0; }

    Rgb8 at(int x, int y) const {
        const std::size_t i = index(x, y);
        return {data_[i], data_[i + 1], data_[i + 2]};
    }
    void set(int x, int y, Rgb8 c) {
        const std::size_t i = index(x, y);
        data_[i] = c.r;
        data_[i + 1] = c.g;
        data_[i + 2] = c.b;
    }
    const std::uint8_t* row(int y) const { return data_.data() + static_cast<std::size_t>(y) * width_ * 3; }
    std::uint8_t* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_ * 3; }

    std::span<const std::uint8_t> bytes() const { return data_; }
    std::span<std::uint8_t> bytes() { return data_; }

    ImageRgb crop(const PixelRect& r) const;

    friend bool operator==(const ImageRgb&, const ImageRgb&) = default;

private:
    std::size_t index(int x, int y) const { return (static_cast<std::size_t>(y) * width_ + x) * 3; }

    int width_ = 0, height_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Binary mask, one byte per pixel (0 or 1), row-major.
class Mask {
public:
    Mask() = default;
    Mask(int width, int height, std::uint8_t fill = 0)
        : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {}

    int width() const { return width_; }
    int height() const { return height_; }

    std::uint8_t operator()(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    std::uint8_t& operator()(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    /// Zero outside the mask bounds.
    std::uint8_t get(int x, int y) const {
        if (x < 0 || y < 0 || x >= width_ || y >= height_)
            return 0;
        return (*this)(x, y);
    }

    std::span<const std::uint8_t> bytes() const { return data_; }
    std::span<std::uint8_t> bytes() { return data_; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : data_)
            n += v != 0;
        return n;
    }

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    int width_ = 0, height_ = 0;
    std::vector<std::uint8_t> data_;
};

inline ImageRgb ImageRgb::crop(const PixelRect& r) const {
    require(PixelRect{0, 0, width_, height_}.contains(r), "crop rectangle outside image");
    ImageRgb out(r.w, r.h);
    for (int y = 0; y < r.h; ++y) {
        const std::uint8_t* src = row(r.y + y) + static_cast<std::size_t>(r.x) * 3;
        std::copy(src, src + static_cast<std::size_t>(r.w) * 3, out.row(y));
    }
    return out;
}

/// Intersection over union of two equally sized masks. Two empty masks give 1.
double mask_iou(const Mask& a, const Mask& b);

} // namespace orthoseg
