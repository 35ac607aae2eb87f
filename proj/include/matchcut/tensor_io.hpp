#pragma once

// Little-endian binary tensor container.
//
//   offset  size  field
//   0       4     magic "MCTC"
//   4       4     u32 format version (1)
//   8       4     u32 tensor count
//   then per tensor:
//           4     u32 name length n
//           n     UTF-8 name
//           4     u32 dtype (1 = float32, 2 = float64)
//           4     u32 rank r
//           8*r   u64 dims
//           ...   payload, prod(dims) elements of dtype, little-endian
//
// Weight files use float32 payloads; generation traces use float64 so replay
// is exact.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "matchcut/tensor.hpp"

namespace matchcut {

enum class DType : std::uint32_t { f32 = 1, f64 = 2 };

struct NamedTensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    DType dtype = DType::f32;
    std::vector<double> values;
};

class TensorArchive {
public:
    static constexpr std::uint32_t kVersion = 1;

    void add(std::string name, std::vector<std::uint64_t> dims, std::span<const double> values,
             DType dtype = DType::f32);
    void add(std::string name, std::vector<std::uint64_t> dims, std::span<const float> values);

    template <class Tag>
    void add_video(std::string name, const Video<Tag>& v, DType dtype = DType::f64) {
        const auto& s = v.shape();
        add(std::move(name),
            {static_cast<std::uint64_t>(s.frames), static_cast<std::uint64_t>(s.channels),
             static_cast<std::uint64_t>(s.height), static_cast<std::uint64_t>(s.width)},
            v.values(), dtype);
    }

    bool contains(const std::string& name) const;
    const NamedTensor& get(const std::string& name) const;
    const std::vector<NamedTensor>& tensors() const noexcept { return tensors_; }

    template <class Tag>
    Video<Tag> get_video(const std::string& name) const {
        const auto& t = get(name);
        if (t.dims.size() != 4) throw IoError("tensor '" + name + "' is not rank 4");
        VideoShape s{static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]),
                     static_cast<int>(t.dims[3])};
        return Video<Tag>(s, t.values);
    }

    std::vector<std::uint8_t> serialize() const;
    static TensorArchive deserialize(std::span<const std::uint8_t> bytes);

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

private:
    std::vector<NamedTensor> tensors_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace matchcut
