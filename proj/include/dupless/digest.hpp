#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "dupless/errors.hpp"

namespace dupless {

// FNV-1a 64-bit. Provenance fingerprints only, not cryptographic.
inline constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ull;

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = kFnvOffset) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

inline std::string digest_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for digest: " + path.string());
    std::uint64_t h = kFnvOffset;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    return to_hex(h);
}

}  // namespace dupless
