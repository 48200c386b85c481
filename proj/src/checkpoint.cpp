#include "partpool/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "partpool/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace partpool {

namespace {
constexpr char kMagic[] = "PPOOL1\n";
constexpr std::size_t kMagicLen = 7;

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw DataError("checkpoint truncated");
    return v;
}
} // namespace

void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor4<float>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, kMagicLen);
    for (const auto& [name, t] : tensors) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(t.n));
        write_u32(os, static_cast<std::uint32_t>(t.c));
        write_u32(os, static_cast<std::uint32_t>(t.h));
        write_u32(os, static_cast<std::uint32_t>(t.w));
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

std::map<std::string, Tensor4<float>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[kMagicLen];
    is.read(magic, kMagicLen);
    if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw DataError("bad checkpoint magic in " + path);
    std::map<std::string, Tensor4<float>> out;
    while (true) {
        const int peek = is.peek();
        if (peek == EOF) break;
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw DataError("checkpoint truncated");
        const std::size_t n = read_u32(is), c = read_u32(is), h = read_u32(is),
                          w = read_u32(is);
        Tensor4<float> t(n, c, h, w);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!is) throw DataError("checkpoint truncated reading " + name);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

} // namespace partpool
