#pragma once

// Pixel-pattern conventions shared by the synthetic renderer and the planted
// model. Each patch is P x P per channel; patterns are rows of the Sylvester
// Hadamard matrix of order P*P, so distinct rows are exactly orthogonal.

#include <bit>
#include <cstdint>

namespace typocirc::patterns {

// Channel roles.
inline constexpr int kObjectChannel = 0;  // object texture, row y_image + 1
inline constexpr int kInkChannel = 1;     // constant "ink" level on overlaid patches, row 0
inline constexpr int kTypoChannel = 2;    // overlay glyph texture, row y_typo + 1

inline constexpr float kInkLevel = 1.0f;

inline bool valid_order(int n) { return n > 0 && std::has_single_bit(static_cast<unsigned>(n)); }

/// Entry (r, c) of the Sylvester Hadamard matrix: (-1)^popcount(r & c).
inline float hadamard(int r, int c) {
    return (std::popcount(static_cast<unsigned>(r & c)) & 1) ? -1.0f : 1.0f;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index * 4 + stream + 1));
}

}  // namespace typocirc::patterns
