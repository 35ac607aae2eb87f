#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "matchcut/error.hpp"

namespace matchcut {

/// Layout of a video tensor: frames x channels x height x width, row-major.
struct VideoShape {
    int frames = 0;
    int channels = 0;
    int height = 0;
    int width = 0;

    std::size_t numel() const noexcept {
        return static_cast<std::size_t>(frames) * channels * height * width;
    }
    std::size_t frame_size() const noexcept {
        return static_cast<std::size_t>(channels) * height * width;
    }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height) * width; }
    bool valid() const noexcept { return frames > 0 && channels > 0 && height > 0 && width > 0; }

    friend bool operator==(const VideoShape&, const VideoShape&) = default;
};

std::string to_string(const VideoShape& s);

struct LatentTag {};
struct PixelTag {};

/// Dense video tensor. The tag keeps latent-space and pixel-space videos from
/// being mixed up; conversions between the two go through a LatentCodec.
template <class Tag>
class Video {
public:
    Video() = default;
    explicit Video(VideoShape shape, double fill = 0.0) : shape_(shape), data_(shape.numel(), fill) {}
    Video(VideoShape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.numel()) throw ShapeError("video data size does not match shape " + to_string(shape_));
    }

    const VideoShape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::size_t index(int f, int c, int y, int x) const noexcept {
        return ((static_cast<std::size_t>(f) * shape_.channels + c) * shape_.height + y) * shape_.width + x;
    }
    double& at(int f, int c, int y, int x) noexcept { return data_[index(f, c, y, x)]; }
    double at(int f, int c, int y, int x) const noexcept { return data_[index(f, c, y, x)]; }

    std::span<double> plane(int f, int c) noexcept {
        return std::span<double>(data_).subspan(index(f, c, 0, 0), shape_.plane_size());
    }
    std::span<const double> plane(int f, int c) const noexcept {
        return std::span<const double>(data_).subspan(index(f, c, 0, 0), shape_.plane_size());
    }

    bool all_finite() const noexcept {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Exact elementwise equality (treats +0 and -0 as equal).
    friend bool operator==(const Video& a, const Video& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    VideoShape shape_{};
    std::vector<double> data_;
};

using LatentVideo = Video<LatentTag>;
using PixelVideo = Video<PixelTag>;

template <class Tag>
void require_same_shape(const Video<Tag>& a, const Video<Tag>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

/// Reinterprets a tensor under another tag. Used by the identity codec only.
template <class To, class From>
Video<To> retag(const Video<From>& v) {
    return Video<To>(v.shape(), v.storage());
}

template <class Tag>
Video<Tag> clamp01(Video<Tag> v) {
    for (double& x : v.values()) x = x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
    return v;
}

/// Copies frames [begin, end) into a new video.
template <class Tag>
Video<Tag> slice_frames(const Video<Tag>& v, int begin, int end) {
    VideoShape s = v.shape();
    s.frames = end - begin;
    std::vector<double> out(v.storage().begin() + static_cast<std::ptrdiff_t>(begin * v.shape().frame_size()),
                            v.storage().begin() + static_cast<std::ptrdiff_t>(end * v.shape().frame_size()));
    return Video<Tag>(s, std::move(out));
}

}  // namespace matchcut
