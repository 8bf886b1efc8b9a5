// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Branch-free exp and sin/cos that the compiler can vectorise. Both evaluate
// in double precision with Cody-Waite range reduction and are accurate to a
// few ulp. Every element goes through the same arithmetic whether it lands in
// a vector lane or a scalar tail, so results never depend on array position.

#include <bit>
#include <cmath>
#include <cstdint>

namespace nisf::fastmath {

namespace detail {

// Round-to-nearest for |x| < 2^51 without a libm call.
constexpr double kRoundMagic = 6755399441055744.0;  // 1.5 * 2^52

inline double round_nearest(double x) { return (x + kRoundMagic) - kRoundMagic; }

constexpr float kRoundMagicF = 12582912.0f;  // 1.5 * 2^23

inline float round_nearest(float x) { return (x + kRoundMagicF) - kRoundMagicF; }

}  // namespace detail

/// exp(x); returns 0 below -708 and saturates the argument at 709.
inline double exp(double x) {
    constexpr double log2e = 1.4426950408889634074;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    const double lo = x < -745.0 ? -745.0 : x;
    const double xc = lo > 709.0 ? 709.0 : lo;
    const double n = detail::round_nearest(xc * log2e);
    const double r = (xc - n * ln2_hi) - n * ln2_lo;
    // Taylor series to degree 13 on |r| <= ln2/2.
    double p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const double nn = n < -1022.0 ? -1022.0 : n;
    const double scale = std::bit_cast<double>((static_cast<std::int64_t>(nn) + 1023) << 52);
    const double out = p * scale;
    return x < -708.0 ? 0.0 : out;
}

struct SinCos {
    double sin;
    double cos;
};

/// sin and cos of x for |x| up to about 1e5.
inline SinCos sincos(double x) {
    constexpr double two_over_pi = 6.36619772367581382433e-01;
    constexpr double pio2_1 = 1.57079632673412561417e+00;
    constexpr double pio2_2 = 6.07710050630396597660e-11;
    constexpr double pio2_3 = 2.02226624871116645580e-21;
    const double k = detail::round_nearest(x * two_over_pi);
    const double r = ((x - k * pio2_1) - k * pio2_2) - k * pio2_3;
    const double z = r * r;

    double s = 1.58969099521155010221e-10;
    s = s * z - 2.50507602534068634195e-08;
    s = s * z + 2.75573137070700676789e-06;
    s = s * z - 1.98412698298579493134e-04;
    s = s * z + 8.33333333332248946124e-03;
    s = s * z - 1.66666666666666324348e-01;
    const double sin_r = r + r * z * s;

    double c = -1.13596475577881948265e-11;
    c = c * z + 2.08757232129817482790e-09;
    c = c * z - 2.75573143513906633035e-07;
    c = c * z + 2.48015872894767294178e-05;
    c = c * z - 1.38888888888741095749e-03;
    c = c * z + 4.16666666666666019037e-02;
    const double hz = 0.5 * z;
    const double w = 1.0 - hz;
    const double cos_r = w + (((1.0 - w) - hz) + z * z * c);

    const std::int64_t q = static_cast<std::int64_t>(k);
    const bool odd = (q & 1) != 0;
    const double sin_sel = odd ? cos_r : sin_r;
    const double cos_sel = odd ? sin_r : cos_r;
    // Flip sign bits: sin for quadrants 2,3 and cos for quadrants 1,2.
    const std::uint64_t sin_flip = static_cast<std::uint64_t>(q & 2) << 62;
    const std::uint64_t cos_flip = static_cast<std::uint64_t>((q + 1) & 2) << 62;
    return {std::bit_cast<double>(std::bit_cast<std::uint64_t>(sin_sel) ^ sin_flip),
            std::bit_cast<double>(std::bit_cast<std::uint64_t>(cos_sel) ^ cos_flip)};
}

/// Single-precision exp, about 1 ulp; 0 below -87.
inline float exp(float x) {
    const float lo = x < -88.0f ? -88.0f : x;
    const float xc = lo > 88.0f ? 88.0f : lo;
    const float n = detail::round_nearest(xc * 1.44269504088896341f);
    const float r = (xc - n * 0.693359375f) + n * 2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    const float nn = n < -126.0f ? -126.0f : n;
    const float scale = std::bit_cast<float>((static_cast<std::int32_t>(nn) + 127) << 23);
    const float out = p * scale;
    return x < -87.0f ? 0.0f : out;
}

struct SinCosF {
    float sin;
    float cos;
};

/// Single-precision sin and cos for |x| up to about 1e4.
inline SinCosF sincos(float x) {
    const float k = detail::round_nearest(x * 0.636619772367581343f);
    const float r = ((x - k * 1.5703125f) - k * 4.837512969970703125e-4f) - k * 7.54978995489188216e-8f;
    const float z = r * r;
    float s = -1.9515295891e-4f;
    s = s * z + 8.3321608736e-3f;
    s = s * z - 1.6666654611e-1f;
    const float sin_r = r + r * z * s;
    float c = 2.443315711809948e-5f;
    c = c * z - 1.388731625493765e-3f;
    c = c * z + 4.166664568298827e-2f;
    const float cos_r = (1.0f - 0.5f * z) + z * z * c;

    const std::int32_t q = static_cast<std::int32_t>(k);
    const bool odd = (q & 1) != 0;
    const float sin_sel = odd ? cos_r : sin_r;
    const float cos_sel = odd ? sin_r : cos_r;
    const std::uint32_t sin_flip = static_cast<std::uint32_t>(q & 2) << 30;
    const std::uint32_t cos_flip = static_cast<std::uint32_t>((q + 1) & 2) << 30;
    return {std::bit_cast<float>(std::bit_cast<std::uint32_t>(sin_sel) ^ sin_flip),
            std::bit_cast<float>(std::bit_cast<std::uint32_t>(cos_sel) ^ cos_flip)};
}

}  // namespace nisf::fastmath
