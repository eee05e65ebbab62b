#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "orthoseg/image.hpp"

namespace testutil {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("orthoseg_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline orthoseg::ImageRgb noise_image(int w, int h, unsigned seed) {
    std::mt19937 rng(seed);
    orthoseg::ImageRgb img(w, h);
    for (auto& b : img.bytes())
        b = static_cast<std::uint8_t>(rng());
    return img;
}

inline orthoseg::Mask random_mask(int w, int h, double density, unsigned seed) {
    std::mt19937 rng(seed);
    std::bernoulli_distribution d(density);
    orthoseg::Mask m(w, h);
    for (auto& b : m.bytes())
        b = d(rng) ? 1 : 0;
    return m;
}

inline orthoseg::Mask disk_mask(int w, int h, double cx, double cy, double r) {
    orthoseg::Mask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double ddx = x + 0.5 - cx, ddy = y + 0.5 - cy;
            m(x, y) = ddx * ddx + ddy * ddy <= r * r;
        }
    return m;
}

} // namespace testutil
