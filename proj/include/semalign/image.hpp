#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "semalign/error.hpp"

namespace semalign {

/// A 3-channel image stored planar (channel, row, column) with intensities in [0,1].
class Image {
public:
    static constexpr int kChannels = 3;
    static constexpr int kNative = 32;

    Image() : Image(kNative, kNative) {}
    Image(int height, int width, float fill = 0.0f)
        : height_(height), width_(width),
          px_(static_cast<std::size_t>(kChannels) * height * width, fill) {}
    Image(int height, int width, std::vector<float> planar)
        : height_(height), width_(width), px_(std::move(planar)) {
        if (px_.size() != static_cast<std::size_t>(kChannels) * height * width)
            throw Error("image buffer size does not match its dimensions");
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return px_.size(); }

    float& at(int c, int y, int x) noexcept { return px_[index(c, y, x)]; }
    float at(int c, int y, int x) const noexcept { return px_[index(c, y, x)]; }

    std::span<float> pixels() noexcept { return px_; }
    std::span<const float> pixels() const noexcept { return px_; }

    bool in_unit_range() const noexcept {
        return std::all_of(px_.begin(), px_.end(),
                           [](float v) { return v >= 0.0f && v <= 1.0f; });
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int c, int y, int x) const noexcept {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int height_;
    int width_;
    std::vector<float> px_;
};

inline float quantize_u8(float v) noexcept {
    return static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

inline Image quantized(const Image& img) {
    Image out = img;
    for (float& v : out.pixels()) v = quantize_u8(v);
    return out;
}

}  // namespace semalign
