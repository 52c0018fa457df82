#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ckmerge/errors.hpp"

namespace ckmerge {

static_assert(std::endian::native == std::endian::little,
              "checkpoint buffers are little-endian; big-endian hosts are unsupported");

/// Element type of a stored tensor. All merge arithmetic runs in F32 working
/// precision; these are storage formats only.
enum class Dtype : std::uint8_t { F32, F16, BF16, F64 };

constexpr std::size_t byte_width(Dtype d) {
  switch (d) {
    case Dtype::F32: return 4;
    case Dtype::F16: return 2;
    case Dtype::BF16: return 2;
    case Dtype::F64: return 8;
  }
  return 0;
}

constexpr std::string_view dtype_name(Dtype d) {
  switch (d) {
    case Dtype::F32: return "F32";
    case Dtype::F16: return "F16";
    case Dtype::BF16: return "BF16";
    case Dtype::F64: return "F64";
  }
  return "?";
}

inline Dtype parse_dtype(std::string_view s) {
  if (s == "F32") return Dtype::F32;
  if (s == "F16") return Dtype::F16;
  if (s == "BF16") return Dtype::BF16;
  if (s == "F64") return Dtype::F64;
  throw FormatError("unknown dtype string \"" + std::string(s) + "\"");
}

// ---------------------------------------------------------------------------
// Bit-level half-precision conversions. Widening is exact; narrowing rounds
// to nearest-even, overflowing to infinity. NaN payloads are kept (truncated
// on narrowing, never promoted to infinity).
// ---------------------------------------------------------------------------

inline float f16_to_f32(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1Fu;
  const std::uint32_t man = h & 0x3FFu;
  std::uint32_t bits;
  if (exp == 0) {
    if (man == 0) {
      bits = sign;
    } else {
      // subnormal: renormalize into the f32 exponent range
      int shift = 0;
      std::uint32_t m = man;
      while ((m & 0x400u) == 0) {
        m <<= 1;
        ++shift;
      }
      bits = sign | static_cast<std::uint32_t>(127 - 14 - shift) << 23 |
             ((m & 0x3FFu) << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7F800000u | (man << 13);
  } else {
    bits = sign | ((exp - 15 + 127) << 23) | (man << 13);
  }
  return std::bit_cast<float>(bits);
}

inline std::uint16_t f32_to_f16(float value) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  const auto sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
  const std::uint32_t abs = bits & 0x7FFFFFFFu;
  if (abs >= 0x7F800000u) {
    if (abs > 0x7F800000u) {
      auto payload = static_cast<std::uint16_t>((abs & 0x007FFFFFu) >> 13);
      return static_cast<std::uint16_t>(sign | 0x7C00u |
                                        (payload ? payload : 0x200u));
    }
    return static_cast<std::uint16_t>(sign | 0x7C00u);
  }
  // everything at or above 65520 rounds to infinity
  if (abs >= 0x477FF000u) return static_cast<std::uint16_t>(sign | 0x7C00u);

  const int exp32 = static_cast<int>(abs >> 23);
  const std::uint32_t man32 = abs & 0x7FFFFFu;
  if (exp32 >= 113) {
    // normal f16 result: round 23-bit mantissa to 10 bits
    const std::uint32_t round_bit = (man32 >> 12) & 1u;
    const std::uint32_t sticky = (man32 & 0xFFFu) ? 1u : 0u;
    std::uint32_t man10 = man32 >> 13;
    man10 += round_bit & (sticky | (man10 & 1u));
    auto exp16 = static_cast<std::uint32_t>(exp32 - 112);
    if (man10 == 0x400u) {
      man10 = 0;
      exp16 += 1;
    }
    return static_cast<std::uint16_t>(sign | (exp16 << 10) | man10);
  }
  if (exp32 < 102) return sign;  // below half the smallest subnormal
  // subnormal result: shift the 24-bit significand down with RNE
  const std::uint32_t sig = man32 | 0x800000u;
  const int shift = (113 - exp32) + 13;  // in [14, 24]
  const std::uint32_t half = 1u << (shift - 1);
  const std::uint32_t dropped = sig & ((1u << shift) - 1u);
  std::uint32_t man10 = sig >> shift;
  if (dropped > half || (dropped == half && (man10 & 1u))) man10 += 1;
  return static_cast<std::uint16_t>(sign | man10);
}

inline float bf16_to_f32(std::uint16_t h) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
}

inline std::uint16_t f32_to_bf16(float value) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  if ((bits & 0x7FFFFFFFu) > 0x7F800000u) {
    // NaN: truncate the payload, keep the result a NaN
    auto h = static_cast<std::uint16_t>(bits >> 16);
    return (h & 0x7Fu) ? h : static_cast<std::uint16_t>(h | 0x40u);
  }
  bits += 0x7FFFu + ((bits >> 16) & 1u);
  return static_cast<std::uint16_t>(bits >> 16);
}

// ---------------------------------------------------------------------------
// Buffer conversions between a storage dtype and F32 working precision.
// ---------------------------------------------------------------------------

inline std::vector<float> to_f32(Dtype dtype, std::span<const std::byte> data) {
  const std::size_t width = byte_width(dtype);
  if (data.size() % width != 0)
    throw FormatError("buffer size " + std::to_string(data.size()) +
                      " is not a multiple of element width " + std::to_string(width));
  const std::size_t n = data.size() / width;
  std::vector<float> out(n);
  switch (dtype) {
    case Dtype::F32:
      if (n) std::memcpy(out.data(), data.data(), data.size());
      break;
    case Dtype::F16:
      for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t h;
        std::memcpy(&h, data.data() + 2 * i, 2);
        out[i] = f16_to_f32(h);
      }
      break;
    case Dtype::BF16:
      for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t h;
        std::memcpy(&h, data.data() + 2 * i, 2);
        out[i] = bf16_to_f32(h);
      }
      break;
    case Dtype::F64:
      for (std::size_t i = 0; i < n; ++i) {
        double d;
        std::memcpy(&d, data.data() + 8 * i, 8);
        out[i] = static_cast<float>(d);
      }
      break;
  }
  return out;
}

inline float load_f32_element(Dtype dtype, const std::byte* p) {
  switch (dtype) {
    case Dtype::F32: {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    case Dtype::F16: {
      std::uint16_t h;
      std::memcpy(&h, p, 2);
      return f16_to_f32(h);
    }
    case Dtype::BF16: {
      std::uint16_t h;
      std::memcpy(&h, p, 2);
      return bf16_to_f32(h);
    }
    case Dtype::F64: {
      double d;
      std::memcpy(&d, p, 8);
      return static_cast<float>(d);
    }
  }
  return 0.0f;
}

inline std::vector<std::byte> from_f32(std::span<const float> values, Dtype dtype) {
  const std::size_t n = values.size();
  std::vector<std::byte> out(n * byte_width(dtype));
  switch (dtype) {
    case Dtype::F32:
      if (n) std::memcpy(out.data(), values.data(), out.size());
      break;
    case Dtype::F16:
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint16_t h = f32_to_f16(values[i]);
        std::memcpy(out.data() + 2 * i, &h, 2);
      }
      break;
    case Dtype::BF16:
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint16_t h = f32_to_bf16(values[i]);
        std::memcpy(out.data() + 2 * i, &h, 2);
      }
      break;
    case Dtype::F64:
      for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(values[i]);
        std::memcpy(out.data() + 8 * i, &d, 8);
      }
      break;
  }
  return out;
}

}  // namespace ckmerge
