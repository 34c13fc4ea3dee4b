#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace vitas {

// FNV-1a 64. Stable across runs; used for artifact manifests, not security.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 14695981039346656037ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hash_file_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return "";
    std::uint64_t h = 14695981039346656037ULL;
    char buf[65536];
    while (f) {
        f.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

} // namespace vitas
