#include "dipair/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "dipair/errors.hpp"

namespace dipair {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'W', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw FormatError("checkpoint truncated");
    return v;
}

}  // namespace

void save_checkpoint(const ParameterStore& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(params.count()));
    for (const auto& p : params.all()) {
        write_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const auto& shape = p.tensor.shape();
        write_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) write_u32(os, static_cast<std::uint32_t>(d));
        const auto& data = p.tensor.data();
        os.write(reinterpret_cast<const char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
    if (!os) throw FormatError("write failed on " + path);
}

void load_checkpoint(ParameterStore& params, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path + " is not a weight checkpoint");
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = read_u32(is);
    if (count != params.count())
        throw FormatError("checkpoint has " + std::to_string(count) + " parameters, model has " +
                          std::to_string(params.count()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("checkpoint truncated in name");
        const std::uint32_t rank = read_u32(is);
        std::vector<std::int64_t> shape(rank);
        for (auto& d : shape) d = read_u32(is);
        auto& p = params.at(name);
        if (p.tensor.shape() != shape)
            throw FormatError("shape mismatch for " + name);
        auto& data = p.tensor.data();
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(float)));
        if (!is) throw FormatError("checkpoint truncated in payload of " + name);
    }
}

}  // namespace dipair
