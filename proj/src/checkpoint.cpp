#include "pcscnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

namespace pcsc {

namespace {

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file: " + path);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const std::vector<const Param*>& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    out.write("PCSC", 4);
    write_raw<uint32_t>(out, kCheckpointVersion);
    write_raw<uint32_t>(out, uint32_t(params.size()));
    for (const Param* p : params) {
        if (p->name.size() > 0xffff) throw std::runtime_error("checkpoint: param name too long: " + p->name);
        write_raw<uint16_t>(out, uint16_t(p->name.size()));
        out.write(p->name.data(), std::streamsize(p->name.size()));
        write_raw<uint32_t>(out, uint32_t(p->value.rows));
        write_raw<uint32_t>(out, uint32_t(p->value.cols));
        out.write(reinterpret_cast<const char*>(p->value.v.data()),
                  std::streamsize(p->value.v.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

std::vector<Param> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PCSC", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint32_t version = read_raw<uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    const uint32_t count = read_raw<uint32_t>(in, path);
    std::vector<Param> params;
    params.reserve(count);
    for (uint32_t e = 0; e < count; ++e) {
        const uint16_t len = read_raw<uint16_t>(in, path);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const int rows = int(read_raw<uint32_t>(in, path));
        const int cols = int(read_raw<uint32_t>(in, path));
        Matrix m(rows, cols);
        in.read(reinterpret_cast<char*>(m.v.data()), std::streamsize(m.v.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated file: " + path);
        params.emplace_back(std::move(name), std::move(m));
    }
    return params;
}

} // namespace pcsc
