#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace ecgdx {

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex16(std::uint64_t v);

// FNV-1a digest of a whole file, as 16 hex chars. Throws on I/O failure.
std::string file_digest(const std::filesystem::path& path);

}  // namespace ecgdx
