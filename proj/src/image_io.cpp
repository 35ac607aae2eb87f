#include "matchcut/image_io.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "matchcut/tensor_io.hpp"

namespace matchcut {

namespace fs = std::filesystem;

namespace {

constexpr std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4], std::span<const std::uint8_t> data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

int color_type_for(int channels) {
    if (channels == 1) return 0;
    if (channels == 3) return 2;
    throw ShapeError("PNG export supports 1 or 3 channels, got " + std::to_string(channels));
}

std::vector<std::uint8_t> ihdr(int width, int height, int channels) {
    std::vector<std::uint8_t> d;
    put_u32(d, static_cast<std::uint32_t>(width));
    put_u32(d, static_cast<std::uint32_t>(height));
    d.push_back(8);
    d.push_back(static_cast<std::uint8_t>(color_type_for(channels)));
    d.push_back(0);
    d.push_back(0);
    d.push_back(0);
    return d;
}

/// Filter-type-0 scanlines compressed with zlib.
std::vector<std::uint8_t> compressed_frame(const PixelVideo& v, int f) {
    const auto& s = v.shape();
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(s.height) * (1 + s.width * s.channels));
    for (int y = 0; y < s.height; ++y) {
        raw.push_back(0);
        for (int x = 0; x < s.width; ++x)
            for (int c = 0; c < s.channels; ++c) raw.push_back(quantize8(v.at(f, c, y, x)));
    }
    uLongf len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(len);
    if (compress2(out.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("zlib compression failed");
    out.resize(len);
    return out;
}

std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

/// Inflates and unfilters one 8-bit non-interlaced image.
std::vector<std::uint8_t> inflate_image(std::span<const std::uint8_t> zdata, int width, int height, int bpp) {
    const std::size_t stride = static_cast<std::size_t>(width) * bpp;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (stride + 1));
    uLongf len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &len, zdata.data(), static_cast<uLong>(zdata.size())) != Z_OK || len != raw.size())
        throw IoError("corrupt APNG frame data");
    std::vector<std::uint8_t> out(static_cast<std::size_t>(height) * stride);
    for (int y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
        const std::uint8_t* in = raw.data() + static_cast<std::size_t>(y) * (stride + 1) + 1;
        std::uint8_t* row = out.data() + static_cast<std::size_t>(y) * stride;
        const std::uint8_t* prev = y > 0 ? row - stride : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<std::size_t>(bpp) ? row[i - static_cast<std::size_t>(bpp)] : 0;
            const int b = prev ? prev[i] : 0;
            const int c = (prev && i >= static_cast<std::size_t>(bpp)) ? prev[i - static_cast<std::size_t>(bpp)] : 0;
            int value = in[i];
            switch (filter) {
                case 0: break;
                case 1: value += a; break;
                case 2: value += b; break;
                case 3: value += (a + b) / 2; break;
                case 4: value += paeth(a, b, c); break;
                default: throw IoError("unknown PNG filter type");
            }
            row[i] = static_cast<std::uint8_t>(value);
        }
    }
    return out;
}

}  // namespace

std::uint8_t quantize8(double v) noexcept {
    if (!(v > 0.0)) return 0;
    if (v >= 1.0) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

std::vector<std::uint8_t> encode_png_frame(const PixelVideo& video, int frame) {
    const auto& s = video.shape();
    std::vector<std::uint8_t> out(kSignature, kSignature + 8);
    put_chunk(out, "IHDR", ihdr(s.width, s.height, s.channels));
    put_chunk(out, "IDAT", compressed_frame(video, frame));
    put_chunk(out, "IEND", {});
    return out;
}

std::vector<std::uint8_t> encode_apng(const PixelVideo& video, int fps) {
    const auto& s = video.shape();
    std::vector<std::uint8_t> out(kSignature, kSignature + 8);
    put_chunk(out, "IHDR", ihdr(s.width, s.height, s.channels));
    std::vector<std::uint8_t> actl;
    put_u32(actl, static_cast<std::uint32_t>(s.frames));
    put_u32(actl, 0);
    put_chunk(out, "acTL", actl);
    std::uint32_t seq = 0;
    for (int f = 0; f < s.frames; ++f) {
        std::vector<std::uint8_t> fctl;
        put_u32(fctl, seq++);
        put_u32(fctl, static_cast<std::uint32_t>(s.width));
        put_u32(fctl, static_cast<std::uint32_t>(s.height));
        put_u32(fctl, 0);
        put_u32(fctl, 0);
        put_u16(fctl, 1);
        put_u16(fctl, static_cast<std::uint16_t>(fps));
        fctl.push_back(0);
        fctl.push_back(0);
        put_chunk(out, "fcTL", fctl);
        auto data = compressed_frame(video, f);
        if (f == 0) {
            put_chunk(out, "IDAT", data);
        } else {
            std::vector<std::uint8_t> fdat;
            put_u32(fdat, seq++);
            fdat.insert(fdat.end(), data.begin(), data.end());
            put_chunk(out, "fdAT", fdat);
        }
    }
    put_chunk(out, "IEND", {});
    return out;
}

PixelVideo decode_apng(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) throw IoError("not a PNG file");
    int width = 0, height = 0, channels = 0;
    std::vector<std::vector<std::uint8_t>> frames;
    bool in_frame = false;
    std::size_t pos = 8;
    while (pos + 12 <= bytes.size()) {
        const std::uint32_t len = get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw IoError("truncated PNG chunk");
        const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
        const std::uint8_t* data = bytes.data() + pos + 8;
        if (type == "IHDR") {
            width = static_cast<int>(get_u32(data));
            height = static_cast<int>(get_u32(data + 4));
            if (data[8] != 8 || data[12] != 0) throw IoError("only 8-bit non-interlaced animations are supported");
            switch (data[9]) {
                case 0: channels = 1; break;
                case 2: channels = 3; break;
                default: throw IoError("unsupported PNG color type for animation");
            }
        } else if (type == "fcTL") {
            frames.emplace_back();
            in_frame = true;
        } else if (type == "IDAT") {
            if (!in_frame) frames.emplace_back(), in_frame = true;
            frames.back().insert(frames.back().end(), data, data + len);
        } else if (type == "fdAT") {
            if (frames.empty()) throw IoError("fdAT before fcTL");
            frames.back().insert(frames.back().end(), data + 4, data + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (channels == 0 || frames.empty()) throw IoError("PNG has no image data");
    PixelVideo out({static_cast<int>(frames.size()), channels, height, width});
    for (int f = 0; f < static_cast<int>(frames.size()); ++f) {
        auto px = inflate_image(frames[static_cast<std::size_t>(f)], width, height, channels);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                for (int c = 0; c < channels; ++c)
                    out.at(f, c, y, x) =
                        px[(static_cast<std::size_t>(y) * width + x) * static_cast<std::size_t>(channels) + c] / 255.0;
    }
    return out;
}

PixelVideo decode_png_image(std::span<const std::uint8_t> bytes, bool gray) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw IoError(std::string("cannot decode PNG: ") + image.message);
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int channels = gray ? 1 : 3;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError(std::string("cannot decode PNG: ") + image.message);
    }
    const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
    PixelVideo out({1, channels, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                out.at(0, c, y, x) = buffer[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
    return out;
}

PixelVideo load_png_image(const fs::path& path, bool gray) { return decode_png_image(read_file_bytes(path), gray); }

void save_video_dir(const fs::path& dir, const PixelVideo& video, const nlohmann::json& params, int fps) {
    fs::create_directories(dir);
    const auto& s = video.shape();
    for (int f = 0; f < s.frames; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.png", f);
        write_file_bytes(dir / name, encode_png_frame(video, f));
    }
    nlohmann::json manifest = {{"format", "matchcut.video.v1"},
                               {"frames", s.frames},
                               {"height", s.height},
                               {"width", s.width},
                               {"channels", s.channels},
                               {"fps", fps},
                               {"params", params}};
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

PixelVideo load_video_dir(const fs::path& dir) {
    const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    const int frames = manifest.at("frames").get<int>();
    const bool gray = manifest.value("channels", 3) == 1;
    PixelVideo out;
    for (int f = 0; f < frames; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.png", f);
        auto frame = load_png_image(dir / name, gray);
        if (f == 0) {
            auto s = frame.shape();
            s.frames = frames;
            out = PixelVideo(s);
        } else if (frame.shape().height != out.shape().height || frame.shape().width != out.shape().width) {
            throw IoError("frame " + std::to_string(f) + " has a different size");
        }
        std::copy(frame.storage().begin(), frame.storage().end(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(f * out.shape().frame_size()));
    }
    return out;
}

void save_video(const fs::path& path, const PixelVideo& video, const nlohmann::json& params) {
    const auto ext = path.extension().string();
    if (ext == ".apng" || ext == ".png") {
        write_file_bytes(path, encode_apng(video));
    } else {
        save_video_dir(path, video, params);
    }
}

PixelVideo load_video(const fs::path& path) {
    if (fs::is_directory(path)) return load_video_dir(path);
    return decode_apng(read_file_bytes(path));
}

PixelVideo contact_sheet(std::span<const PixelVideo> rows, int max_frames, int gap) {
    if (rows.empty()) throw ShapeError("contact_sheet needs at least one row");
    const auto s = rows.front().shape();
    const int cols = std::min(max_frames, s.frames);
    const int W = cols * s.width + (cols - 1) * gap;
    const int H = static_cast<int>(rows.size()) * s.height + (static_cast<int>(rows.size()) - 1) * gap;
    PixelVideo sheet({1, s.channels, H, W}, 1.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].shape() != s) throw ShapeError("contact_sheet rows must share a shape");
        for (int k = 0; k < cols; ++k) {
            const int f = cols == 1 ? 0 : k * (s.frames - 1) / (cols - 1);
            for (int c = 0; c < s.channels; ++c)
                for (int y = 0; y < s.height; ++y)
                    for (int x = 0; x < s.width; ++x)
                        sheet.at(0, c, static_cast<int>(r) * (s.height + gap) + y, k * (s.width + gap) + x) =
                            rows[r].at(f, c, y, x);
        }
    }
    return sheet;
}

}  // namespace matchcut
