#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>

#include "turnformer/numerics/parameters.hpp"

// Checkpoint layout, all integers little-endian:
//   "TFCK" | u32 format version | u64 config digest | u32 parameter count
//   per parameter: u32 name length | name bytes | u32 rank | u64 extents[rank]
//                  | f64 values, row-major

namespace turnformer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename U>
void write_le(std::ostream& os, U value) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFFu);
    os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::istream& is, const std::string& path) {
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError(path + ": truncated checkpoint");
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= U(buf[i]) << (8 * i);
    return value;
}

} // namespace detail

/// FNV-1a over a canonical config string.
inline std::uint64_t config_digest(std::string_view text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

template <typename T>
void save_checkpoint(const ParameterStore<T>& store, std::uint64_t digest, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
    os.write("TFCK", 4);
    detail::write_le<std::uint32_t>(os, kCheckpointVersion);
    detail::write_le<std::uint64_t>(os, digest);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
    for (const auto& e : store.entries()) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.tensor.rank()));
        for (auto x : e.tensor.shape()) detail::write_le<std::uint64_t>(os, x);
        for (auto v : e.tensor.data()) detail::write_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(double(v)));
    }
    if (!os) throw FormatError("failed writing checkpoint " + path);
}

/// Loads values into an already-constructed store. Names, order and shapes
/// must match exactly, as must the config digest.
template <typename T>
void load_checkpoint(ParameterStore<T>& store, std::uint64_t expected_digest, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "TFCK", 4) != 0) throw FormatError(path + ": not a checkpoint");
    auto version = detail::read_le<std::uint32_t>(is, path);
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    auto digest = detail::read_le<std::uint64_t>(is, path);
    if (digest != expected_digest) throw FormatError(path + ": checkpoint was written for a different model config");
    auto count = detail::read_le<std::uint32_t>(is, path);
    if (count != store.size())
        throw FormatError(path + ": expected " + std::to_string(store.size()) + " parameters, found " +
                          std::to_string(count));
    std::vector<std::vector<T>> values;
    for (const auto& e : store.entries()) {
        auto len = detail::read_le<std::uint32_t>(is, path);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError(path + ": truncated checkpoint");
        if (name != e.name) throw FormatError(path + ": expected parameter '" + e.name + "', found '" + name + "'");
        auto rank = detail::read_le<std::uint32_t>(is, path);
        Shape shape(rank);
        for (auto& x : shape) x = detail::read_le<std::uint64_t>(is, path);
        if (shape != e.tensor.shape())
            throw FormatError(path + ": shape mismatch for '" + name + "': " + shape_str(shape) + " vs " +
                              shape_str(e.tensor.shape()));
        std::vector<T> v(e.tensor.numel());
        for (auto& x : v) x = T(std::bit_cast<double>(detail::read_le<std::uint64_t>(is, path)));
        values.push_back(std::move(v));
    }
    store.restore(values);
}

} // namespace turnformer
