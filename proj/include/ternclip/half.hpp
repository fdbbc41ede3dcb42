#pragma once

#include <cstdint>

namespace ternclip {

// IEEE 754 binary16 conversions. float -> half rounds to nearest, ties to even;
// overflow saturates to infinity; NaN stays NaN.
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

// Value after a round trip through binary16.
inline float round_to_half(float value) { return half_to_float(float_to_half(value)); }

}  // namespace ternclip
