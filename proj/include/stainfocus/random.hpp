#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace stainfocus {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xCBF29CE484222325ULL) noexcept {
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Child seed for a named sub-stream; independent of generation order.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0) noexcept {
    return splitmix64(splitmix64(base ^ fnv1a(tag)) + index);
}

}  // namespace stainfocus
