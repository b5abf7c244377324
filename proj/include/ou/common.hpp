#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ou {

inline constexpr std::string_view kCodeVersion = "ou-0.1.0";
inline constexpr int kFormatVersion = 1;

// Error taxonomy: callers catch by category, messages carry the detail.
class OuError : public std::runtime_error {
public:
    explicit OuError(const std::string& msg) : std::runtime_error(msg) {}
};

class InputError : public OuError {
public:
    explicit InputError(const std::string& msg) : OuError("input error: " + msg) {}
};

class ConfigError : public OuError {
public:
    explicit ConfigError(const std::string& msg) : OuError("config error: " + msg) {}
};

class DataError : public OuError {
public:
    explicit DataError(const std::string& msg) : OuError("data error: " + msg) {}
};

class NumericError : public OuError {
public:
    explicit NumericError(const std::string& msg) : OuError("numeric error: " + msg) {}
};

// FNV-1a, used for config hashes, vocab hashes and parameter checksums.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

inline std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace ou
