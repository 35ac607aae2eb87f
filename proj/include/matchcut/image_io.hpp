#pragma once

// Video persistence.
//
// Two on-disk forms are supported:
//  * PNG-sequence directory: frame_0000.png, frame_0001.png, ... plus
//    manifest.json {"format": "matchcut.video.v1", "frames", "height",
//    "width", "channels", "fps", "params"}.
//  * Single-file animated PNG (.apng / .png): 8-bit, non-interlaced, one
//    fcTL/fdAT pair per frame, looping forever.
// Both are lossless at 8 bits per channel; float pixels are clamped to
// [0, 1] and rounded to the nearest of 256 levels on write.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <vector>

#include "matchcut/tensor.hpp"

namespace matchcut {

inline constexpr int kDefaultFps = 8;

std::uint8_t quantize8(double v) noexcept;

/// Encodes frame `f` of a 1- or 3-channel video as a PNG.
std::vector<std::uint8_t> encode_png_frame(const PixelVideo& video, int frame);
std::vector<std::uint8_t> encode_apng(const PixelVideo& video, int fps = kDefaultFps);
PixelVideo decode_apng(std::span<const std::uint8_t> bytes);

/// Reads any PNG the system libpng understands as a single-frame video with
/// 3 channels (or 1 with `gray`).
PixelVideo load_png_image(const std::filesystem::path& path, bool gray = false);
PixelVideo decode_png_image(std::span<const std::uint8_t> bytes, bool gray = false);

void save_video_dir(const std::filesystem::path& dir, const PixelVideo& video,
                    const nlohmann::json& params = nlohmann::json::object(), int fps = kDefaultFps);
PixelVideo load_video_dir(const std::filesystem::path& dir);

/// Dispatches on the path: *.apng or *.png selects the single-file form,
/// anything else is treated as a PNG-sequence directory.
void save_video(const std::filesystem::path& path, const PixelVideo& video,
                const nlohmann::json& params = nlohmann::json::object());
PixelVideo load_video(const std::filesystem::path& path);

/// Lays out frames left to right (rows = videos) into one image; used for
/// frame-strip contact sheets.
PixelVideo contact_sheet(std::span<const PixelVideo> rows, int max_frames, int gap = 1);

}  // namespace matchcut
