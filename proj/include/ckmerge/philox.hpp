#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace ckmerge {

/// Philox4x32-10 counter-based PRNG block function. Pure: the same
/// counter/key pair yields the same 128 output bits on every platform, which
/// makes element-indexed generation order- and thread-independent.
struct Philox4x32 {
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// One logical random stream, keyed by (seed, stream id). Draws are addressed
/// by element index, so any subset can be generated in any order.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  /// Stream id mixing a tensor name with a purpose tag, so value, mask, and
  /// noise draws never collide.
  static CounterRng for_tensor(std::uint64_t seed, std::string_view tensor_name,
                               std::uint64_t purpose) {
    return CounterRng(seed, fnv1a64(tensor_name) ^ purpose);
  }

  std::array<std::uint32_t, 4> words(std::uint64_t index) const {
    return Philox4x32::block(
        {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
        {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
  }

  std::uint64_t bits64(std::uint64_t index) const {
    const auto w = words(index);
    return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01(std::uint64_t index) const {
    return static_cast<double>(bits64(index) >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box–Muller; one draw consumes one Philox block.
  double normal(std::uint64_t index) const {
    const auto w = words(index);
    const std::uint64_t a = (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
    const std::uint64_t b = (static_cast<std::uint64_t>(w[2]) << 32) | w[3];
    const double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;        // [0, 1)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
};

// Purpose tags for per-tensor streams.
inline constexpr std::uint64_t kPurposeValues = 0x0000000000000000ull;
inline constexpr std::uint64_t kPurposeMask = 0x9E3779B97F4A7C15ull;
inline constexpr std::uint64_t kPurposeNoise = 0xD1B54A32D192ED03ull;

}  // namespace ckmerge
