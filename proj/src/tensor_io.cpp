#include "matchcut/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

namespace matchcut {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'T', 'C'};

template <class T>
T swap_bytes(T value) {
    auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
    std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
}

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
    if constexpr (std::endian::native == std::endian::big) value = swap_bytes(value);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        if constexpr (std::endian::native == std::endian::big) value = swap_bytes(value);
        return value;
    }

    std::string get_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw IoError("tensor container truncated");
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
}

}  // namespace

void TensorArchive::add(std::string name, std::vector<std::uint64_t> dims, std::span<const double> values,
                        DType dtype) {
    if (element_count(dims) != values.size()) throw ShapeError("tensor '" + name + "': dims do not match payload");
    if (contains(name)) throw IoError("duplicate tensor name '" + name + "'");
    tensors_.push_back({std::move(name), std::move(dims), dtype, std::vector<double>(values.begin(), values.end())});
}

void TensorArchive::add(std::string name, std::vector<std::uint64_t> dims, std::span<const float> values) {
    std::vector<double> wide(values.begin(), values.end());
    add(std::move(name), std::move(dims), wide, DType::f32);
}

bool TensorArchive::contains(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return true;
    return false;
}

const NamedTensor& TensorArchive::get(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return t;
    throw IoError("tensor '" + name + "' not found in container");
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& t : tensors_) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dtype));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) put<std::uint64_t>(out, d);
        if (t.dtype == DType::f32) {
            for (double v : t.values) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        } else {
            for (double v : t.values) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not a tensor container (bad magic)");
    (void)r.get_string(4);
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw IoError("unsupported tensor container version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    TensorArchive archive;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.get_string(r.get<std::uint32_t>());
        const auto dtype = r.get<std::uint32_t>();
        if (dtype != 1 && dtype != 2) throw IoError("tensor '" + t.name + "': unknown dtype " + std::to_string(dtype));
        t.dtype = static_cast<DType>(dtype);
        const auto rank = r.get<std::uint32_t>();
        for (std::uint32_t k = 0; k < rank; ++k) t.dims.push_back(r.get<std::uint64_t>());
        const auto n = element_count(t.dims);
        r.need(n * (t.dtype == DType::f32 ? 4 : 8));
        t.values.resize(n);
        for (auto& v : t.values)
            v = t.dtype == DType::f32 ? static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()))
                                      : std::bit_cast<double>(r.get<std::uint64_t>());
        archive.tensors_.push_back(std::move(t));
    }
    if (!r.done()) throw IoError("trailing bytes after tensor container");
    return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const { write_file_bytes(path, serialize()); }

TensorArchive TensorArchive::load(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

}  // namespace matchcut
