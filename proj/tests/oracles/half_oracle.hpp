#pragma once

// Reference binary16 rounding that never looks at float bit fields: it
// enumerates every finite non-negative half as a double, then picks the
// nearest one by binary search (ties to the even pattern).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace vxf::oracle {

// Value of the non-negative finite half with pattern `p` (< 0x7c00),
// computed arithmetically from its fields.
inline double half_value(std::uint16_t p) {
  const int e = p >> 10;
  const int m = p & 0x3ff;
  if (e == 0) return std::ldexp(static_cast<double>(m), -24);
  return std::ldexp(1.0 + m / 1024.0, e - 15);
}

class HalfTable {
 public:
  HalfTable() {
    values_.resize(0x7c00);
    for (std::uint16_t p = 0; p < 0x7c00; ++p) values_[p] = half_value(p);
  }

  // Returns the half bit pattern nearest to x. NaN maps to 0x7e00 with x's
  // sign (payload is not modelled).
  std::uint16_t nearest(float x) const {
    const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
    if (std::isnan(x)) return static_cast<std::uint16_t>(sign | 0x7e00);
    const double a = std::fabs(static_cast<double>(x));
    // Halfway between the largest finite half (65504) and 2^16 goes to inf,
    // as does anything above.
    if (a >= 65520.0) return static_cast<std::uint16_t>(sign | 0x7c00);
    const auto hi = std::lower_bound(values_.begin(), values_.end(), a);
    if (hi == values_.begin()) return sign;
    if (hi == values_.end()) return static_cast<std::uint16_t>(sign | 0x7bff);
    const auto lo = hi - 1;
    const double dlo = a - *lo, dhi = *hi - a;
    auto p_lo = static_cast<std::uint16_t>(lo - values_.begin());
    auto p_hi = static_cast<std::uint16_t>(hi - values_.begin());
    if (*hi == a) return static_cast<std::uint16_t>(sign | p_hi);
    std::uint16_t p;
    if (dlo < dhi) p = p_lo;
    else if (dhi < dlo) p = p_hi;
    else p = (p_lo & 1) ? p_hi : p_lo;
    return static_cast<std::uint16_t>(sign | p);
  }

  double value(std::uint16_t p) const { return values_[p]; }

 private:
  std::vector<double> values_;
};

}  // namespace vxf::oracle
