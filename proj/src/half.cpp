#include "voxelforge/half.hpp"

#include <bit>
#include <cmath>

#if defined(__F16C__)
#include <immintrin.h>
#endif

namespace vxf {

Half half_from_single(float value) noexcept {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  const auto sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
  const std::uint32_t magnitude = bits & 0x7fffffffu;

  if (magnitude >= 0x7f800000u) {
    if (magnitude == 0x7f800000u) return Half{static_cast<std::uint16_t>(sign | 0x7c00u)};
    // Quiet NaN, keeping the upper payload bits.
    return Half{static_cast<std::uint16_t>(sign | 0x7e00u | ((magnitude >> 13) & 0x3ffu))};
  }
  // 65520 is the midpoint between 65504 and 2^16; ties go to the even
  // neighbour, which is infinity.
  if (magnitude >= 0x477ff000u) return Half{static_cast<std::uint16_t>(sign | 0x7c00u)};

  if (magnitude < 0x38800000u) {
    // Half subnormal range: result is m * 2^-24.
    if (magnitude <= 0x33000000u) return Half{sign};
    const std::uint32_t exponent = magnitude >> 23;
    const std::uint32_t mantissa = (magnitude & 0x7fffffu) | 0x800000u;
    const std::uint32_t shift = 126u - exponent;
    std::uint32_t m = mantissa >> shift;
    const std::uint32_t rest = mantissa & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1u);
    if (rest > halfway || (rest == halfway && (m & 1u))) ++m;
    return Half{static_cast<std::uint16_t>(sign | m)};
  }

  std::uint32_t h = (magnitude - 0x38000000u) >> 13;
  const std::uint32_t rest = magnitude & 0x1fffu;
  if (rest > 0x1000u || (rest == 0x1000u && (h & 1u))) ++h;
  return Half{static_cast<std::uint16_t>(sign | h)};
}

float single_from_half(Half value) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(value.bits & 0x8000u) << 16;
  const std::uint32_t exponent = (value.bits >> 10) & 0x1fu;
  const std::uint32_t mantissa = value.bits & 0x3ffu;

  if (exponent == 0) {
    // Zero or subnormal; m * 2^-24 is exact in binary32.
    const float magnitude = static_cast<float>(mantissa) * 0x1p-24f;
    return sign ? -magnitude : magnitude;
  }
  if (exponent == 31) {
    return std::bit_cast<float>(sign | 0x7f800000u | (mantissa << 13));
  }
  return std::bit_cast<float>(sign | ((exponent + 112u) << 23) | (mantissa << 13));
}

bool is_half_representable(float value) noexcept {
  if (std::isnan(value)) return true;
  return std::bit_cast<std::uint32_t>(round_to_half(value)) ==
         std::bit_cast<std::uint32_t>(value);
}

void round_to_half_inplace_scalar(std::span<float> values) noexcept {
  for (float& v : values) v = round_to_half(v);
}

void round_to_half_inplace(std::span<float> values) noexcept {
#if defined(__F16C__)
  std::size_t i = 0;
  const std::size_t n = values.size();
  float* p = values.data();
  for (; i + 8 <= n; i += 8) {
    const __m256 x = _mm256_loadu_ps(p + i);
    const __m128i h = _mm256_cvtps_ph(x, _MM_FROUND_TO_NEAREST_INT);
    _mm256_storeu_ps(p + i, _mm256_cvtph_ps(h));
  }
  round_to_half_inplace_scalar(values.subspan(i));
#else
  round_to_half_inplace_scalar(values);
#endif
}

}  // namespace vxf
