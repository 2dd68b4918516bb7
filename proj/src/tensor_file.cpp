#include "tavr/tensor_file.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace tavr {

namespace {

constexpr char kMagic[4] = {'T', 'A', 'V', 'R'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xFF));
}

uint32_t get_u32(const char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(p[i])) << (8 * i);
    return v;
}

uint64_t get_u64(const char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(p[i])) << (8 * i);
    return v;
}

}  // namespace

void save_tensor(const std::string& path, const Shape& shape, const std::vector<float>& data) {
    if (numel(shape) != data.size())
        throw std::runtime_error("save_tensor: data size does not match shape for " + path);
    std::string buf;
    buf.reserve(16 + 8 * shape.size() + 4 * data.size());
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, uint32_t(shape.size()));
    for (size_t d : shape) put_u64(buf, d);
    static_assert(sizeof(float) == 4);
    for (float f : data) {
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(buf, bits);
    }
    // Write via a temp file and rename so readers never see a partial tensor.
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("save_tensor: cannot open " + tmp);
        out.write(buf.data(), std::streamsize(buf.size()));
        if (!out) throw std::runtime_error("save_tensor: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

void save_tensor(const std::string& path, const Tensor<float>& t) {
    save_tensor(path, t.shape(), t.vec());
}

std::pair<Shape, std::vector<float>> load_tensor_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_tensor: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw std::runtime_error("load_tensor: truncated header in " + path);
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw std::runtime_error("load_tensor: bad magic in " + path);
    uint32_t version = get_u32(buf.data() + 4);
    if (version != kVersion)
        throw std::runtime_error("load_tensor: unsupported version " + std::to_string(version) + " in " + path);
    uint32_t rank = get_u32(buf.data() + 8);
    if (rank > 8) throw std::runtime_error("load_tensor: implausible rank in " + path);
    size_t header = 12 + 8 * size_t(rank);
    if (buf.size() < header) throw std::runtime_error("load_tensor: truncated extents in " + path);
    Shape shape(rank);
    size_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        uint64_t e = get_u64(buf.data() + 12 + 8 * i);
        if (e > (1ull << 32)) throw std::runtime_error("load_tensor: implausible extent in " + path);
        shape[i] = size_t(e);
        count *= size_t(e);
    }
    if (buf.size() != header + 4 * count)
        throw std::runtime_error("load_tensor: payload size mismatch in " + path);
    std::vector<float> data(count);
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits = get_u32(buf.data() + header + 4 * i);
        std::memcpy(&data[i], &bits, 4);
    }
    return {std::move(shape), std::move(data)};
}

Tensor<float> load_tensor(const std::string& path) {
    auto [shape, data] = load_tensor_raw(path);
    return Tensor<float>(std::move(shape), std::move(data));
}

}  // namespace tavr
