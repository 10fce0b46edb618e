#pragma once

#include <cstdint>
#include <span>

namespace vxf {

/// IEEE 754 binary16 value held as its raw bit pattern.
struct Half {
  std::uint16_t bits = 0;

  friend bool operator==(Half, Half) = default;
};

inline constexpr float kHalfMax = 65504.0f;

/// Round-to-nearest-even conversion. Overflow saturates to infinity, values
/// at or below 2^-25 in magnitude flush to signed zero, NaN stays NaN.
Half half_from_single(float value) noexcept;

/// Exact widening conversion.
float single_from_half(Half value) noexcept;

inline float round_to_half(float value) noexcept {
  return single_from_half(half_from_single(value));
}

bool is_half_representable(float value) noexcept;

/// Rounds every element to the nearest binary16 value, in place. Uses the
/// F16C instructions when the build enables them; the result is bitwise
/// identical to the scalar path.
void round_to_half_inplace(std::span<float> values) noexcept;

void round_to_half_inplace_scalar(std::span<float> values) noexcept;

}  // namespace vxf
