// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic (3D+t) short-axis cardiac phantom with analytic labels.
//
// Geometry lives in physical millimetres. The left ventricle is a pair of
// nested ellipsoids (endocardium, epicardium) sharing a centre near the basal
// slices; the right ventricle is a rotated ellipsoid beside it, clipped by the
// LV epicardium so it wraps the septum as a crescent. All radii follow a
// sinusoidal contraction over the cardiac cycle of T frames.
//
// Voxel (i, j, k, t) has its centre at (i*sx, j*sy, k*sz) and time t.
// Arrays are stored with x fastest, then y, z, t.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "nisf/errors.hpp"

namespace nisf {

enum Label : std::uint8_t { kBackground = 0, kLvPool = 1, kLvMyocardium = 2, kRvPool = 3 };
inline constexpr std::size_t kNumPhantomClasses = 4;

inline const std::array<std::string, kNumPhantomClasses>& class_names() {
    static const std::array<std::string, kNumPhantomClasses> names{"background", "lv_pool", "lv_myocardium",
                                                                   "rv_pool"};
    return names;
}

using GridShape = std::array<std::size_t, 4>;  // x, y, z, t

/// A subject's volume: intensities in [0, 1], labels, spacing and an optional
/// observation mask (1 = observed). Ground truth stays in the arrays when
/// voxels are masked out.
struct VolumeSample {
    std::string subject_id;
    GridShape shape{0, 0, 0, 0};
    std::array<double, 4> spacing{1, 1, 1, 1};
    std::vector<double> intensity;
    std::vector<std::uint8_t> labels;
    std::vector<std::uint8_t> mask;  // empty means fully observed

    std::size_t voxel_count() const { return shape[0] * shape[1] * shape[2] * shape[3]; }
    std::size_t frame_size() const { return shape[0] * shape[1] * shape[2]; }
    std::size_t index(std::size_t x, std::size_t y, std::size_t z, std::size_t t) const {
        return ((t * shape[2] + z) * shape[1] + y) * shape[0] + x;
    }
    bool observed(std::size_t i) const { return mask.empty() || mask[i] != 0; }
    std::size_t observed_count() const {
        if (mask.empty()) return voxel_count();
        return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m; }));
    }

    void validate(std::size_t num_classes = kNumPhantomClasses) const {
        const std::size_t n = voxel_count();
        if (intensity.size() != n || labels.size() != n || (!mask.empty() && mask.size() != n))
            throw DimensionError("volume arrays do not match shape");
        for (double v : intensity) {
            if (!(v >= 0.0 && v <= 1.0)) throw ContractError("volume intensity outside [0, 1]");
        }
        for (auto l : labels) {
            if (l >= num_classes) throw ContractError("volume label out of range");
        }
    }

    bool operator==(const VolumeSample&) const = default;
};

/// Analytic description of one phantom subject. Lengths in mm, time in frames.
struct PhantomSpec {
    std::uint64_t seed = 0;
    GridShape shape{32, 32, 8, 10};
    std::array<double, 3> spacing{2.0, 2.0, 10.0};

    std::array<double, 3> lv_center{};
    std::array<double, 3> lv_radii{};  // endocardial semi-axes at rest
    double wall = 0;                    // myocardial thickness at rest
    double rv_angle = 0;                // direction of the RV from the LV axis, radians
    double rv_offset = 0;
    std::array<double, 3> rv_radii{};  // along offset, across, along z
    double contraction = 0;             // fractional radius change at peak systole
    double phase = 0;
    std::array<double, 2> body_center{};
    std::array<double, 2> body_radii{};

    double i_air = 0, i_body = 0, i_myo = 0, i_lv = 0, i_rv = 0;
    double noise_sigma = 0;
    double bias = 0;  // linear multiplicative bias across x

    /// 0 at rest, 1 at peak contraction.
    double contraction_state(double t) const {
        const double period = static_cast<double>(shape[3]);
        return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * t / period + phase));
    }
    std::array<double, 3> endo_radii(double t) const {
        const double c = contraction_state(t);
        const double s_xy = 1.0 - contraction * c;
        const double s_z = 1.0 - 0.3 * contraction * c;
        return {lv_radii[0] * s_xy, lv_radii[1] * s_xy, lv_radii[2] * s_z};
    }
    std::array<double, 3> epi_radii(double t) const {
        const auto e = endo_radii(t);
        const double w = wall * (1.0 + contraction * contraction_state(t));
        return {e[0] + w, e[1] + w, e[2] + w};
    }
    std::array<double, 3> rv_semi_axes(double t) const {
        const double s = 1.0 - 0.5 * contraction * contraction_state(t);
        return {rv_radii[0] * s, rv_radii[1] * s, rv_radii[2] * s};
    }
    double tissue_mean(std::uint8_t label, bool in_body) const {
        switch (label) {
            case kLvPool: return i_lv;
            case kLvMyocardium: return i_myo;
            case kRvPool: return i_rv;
            default: return in_body ? i_body : i_air;
        }
    }

    bool in_body(double x, double y) const {
        const double u = (x - body_center[0]) / body_radii[0];
        const double v = (y - body_center[1]) / body_radii[1];
        return u * u + v * v <= 1.0;
    }
};

/// Class at a physical point (mm) and continuous time (frames). Membership
/// uses closed ellipsoids; LV pool wins over myocardium, myocardium over RV.
inline std::uint8_t label_at(const PhantomSpec& spec, const std::array<double, 3>& p, double t) {
    const auto endo = spec.endo_radii(t);
    const auto epi = spec.epi_radii(t);
    const double dx = p[0] - spec.lv_center[0];
    const double dy = p[1] - spec.lv_center[1];
    const double dz = p[2] - spec.lv_center[2];
    const double q_endo = (dx / endo[0]) * (dx / endo[0]) + (dy / endo[1]) * (dy / endo[1]) + (dz / endo[2]) * (dz / endo[2]);
    if (q_endo <= 1.0) return kLvPool;
    const double q_epi = (dx / epi[0]) * (dx / epi[0]) + (dy / epi[1]) * (dy / epi[1]) + (dz / epi[2]) * (dz / epi[2]);
    if (q_epi <= 1.0) return kLvMyocardium;
    const auto rv = spec.rv_semi_axes(t);
    const double ca = std::cos(spec.rv_angle), sa = std::sin(spec.rv_angle);
    const double rx = dx - spec.rv_offset * ca;
    const double ry = dy - spec.rv_offset * sa;
    const double u = rx * ca + ry * sa;
    const double v = -rx * sa + ry * ca;
    const double q_rv = (u / rv[0]) * (u / rv[0]) + (v / rv[1]) * (v / rv[1]) + (dz / rv[2]) * (dz / rv[2]);
    if (q_rv <= 1.0) return kRvPool;
    return kBackground;
}

/// Physical extent covered by the grid, first to last voxel centre.
inline constexpr std::array<double, 3> kPhantomExtentMm{62.0, 62.0, 70.0};

inline std::array<double, 3> phantom_spacing(const GridShape& shape) {
    std::array<double, 3> s{};
    for (int a = 0; a < 3; ++a) {
        s[a] = shape[a] > 1 ? kPhantomExtentMm[a] / static_cast<double>(shape[a] - 1) : kPhantomExtentMm[a];
    }
    return s;
}

/// Draws the subject's geometry and appearance. Ranges are fixed here and
/// documented in the README.
inline PhantomSpec draw_phantom_spec(std::uint64_t seed, const GridShape& shape = {32, 32, 8, 10}) {
    if (shape[0] < 2 || shape[1] < 2 || shape[2] < 1 || shape[3] < 1)
        throw ContractError("phantom grid needs at least 2 voxels in-plane");
    std::mt19937_64 rng(seed);
    auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    PhantomSpec s;
    s.seed = seed;
    s.shape = shape;
    s.spacing = phantom_spacing(shape);
    s.lv_center = {uni(33.0, 37.0), uni(28.0, 33.0), uni(4.0, 14.0)};
    s.lv_radii = {uni(9.0, 12.5), uni(9.0, 12.5), uni(48.0, 60.0)};
    s.wall = uni(5.0, 7.0);
    s.rv_angle = std::numbers::pi + uni(-0.45, 0.45);
    s.rv_offset = uni(13.0, 17.0);
    s.rv_radii = {uni(9.0, 12.0), uni(15.0, 19.0), uni(34.0, 46.0)};
    s.contraction = uni(0.15, 0.3);
    s.phase = uni(0.0, 2.0 * std::numbers::pi);
    s.body_center = {uni(29.0, 33.0), uni(29.0, 33.0)};
    s.body_radii = {uni(27.0, 31.0), uni(25.0, 29.0)};
    s.i_air = uni(0.02, 0.06);
    s.i_body = uni(0.42, 0.5);
    s.i_myo = uni(0.17, 0.24);
    s.i_lv = uni(0.86, 0.93);
    s.i_rv = uni(0.76, 0.83);
    s.noise_sigma = uni(0.02, 0.04);
    s.bias = uni(-0.08, 0.08);
    return s;
}

/// Renders a subject from its spec. Labels come from label_at at each voxel
/// centre; intensities add bias and clamped Gaussian noise to tissue means.
inline VolumeSample render_phantom(const PhantomSpec& spec, const std::string& subject_id) {
    VolumeSample vol;
    vol.subject_id = subject_id;
    vol.shape = spec.shape;
    vol.spacing = {spec.spacing[0], spec.spacing[1], spec.spacing[2], 1.0};
    const std::size_t n = vol.voxel_count();
    vol.intensity.resize(n);
    vol.labels.resize(n);
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double x_mid = 0.5 * kPhantomExtentMm[0];
    for (std::size_t t = 0; t < spec.shape[3]; ++t) {
        for (std::size_t z = 0; z < spec.shape[2]; ++z) {
            for (std::size_t y = 0; y < spec.shape[1]; ++y) {
                for (std::size_t x = 0; x < spec.shape[0]; ++x) {
                    const std::array<double, 3> p{static_cast<double>(x) * spec.spacing[0],
                                                  static_cast<double>(y) * spec.spacing[1],
                                                  static_cast<double>(z) * spec.spacing[2]};
                    const std::uint8_t label = label_at(spec, p, static_cast<double>(t));
                    const double base = spec.tissue_mean(label, spec.in_body(p[0], p[1]));
                    const double gain = 1.0 + spec.bias * (p[0] - x_mid) / x_mid;
                    const double v = base * gain + spec.noise_sigma * noise(rng);
                    const std::size_t i = vol.index(x, y, z, t);
                    vol.labels[i] = label;
                    vol.intensity[i] = std::clamp(v, 0.0, 1.0);
                }
            }
        }
    }
    return vol;
}

inline std::string subject_name(std::uint64_t seed) { return "phantom_" + std::to_string(seed); }

struct PhantomSubject {
    PhantomSpec spec;
    VolumeSample volume;
};

/// Per-class voxel fractions of a default-shape subject stay inside these
/// ranges (background, LV pool, LV myocardium, RV pool), from a scan of
/// seeds 0..299 with margin.
inline constexpr std::array<std::array<double, 2>, kNumPhantomClasses> kClassFractionBounds{
    {{0.70, 0.95}, {0.02, 0.10}, {0.04, 0.16}, {0.01, 0.08}}};

inline std::array<double, kNumPhantomClasses> class_fractions(const VolumeSample& v) {
    std::array<std::size_t, kNumPhantomClasses> count{};
    for (auto l : v.labels) ++count[l];
    std::array<double, kNumPhantomClasses> f{};
    for (std::size_t k = 0; k < kNumPhantomClasses; ++k)
        f[k] = static_cast<double>(count[k]) / static_cast<double>(v.voxel_count());
    return f;
}

/// Deterministic per seed.
inline PhantomSubject generate_subject(std::uint64_t seed, const GridShape& shape = {32, 32, 8, 10}) {
    PhantomSubject s;
    s.spec = draw_phantom_spec(seed, shape);
    s.volume = render_phantom(s.spec, subject_name(seed));
    return s;
}

enum class DegradeMode { drop_slices, mask_region, subsample_time };

struct Degradation {
    DegradeMode mode = DegradeMode::drop_slices;
    std::vector<std::size_t> slices;             // drop_slices: z indices
    std::array<std::size_t, 3> region_lo{};      // mask_region: inclusive x, y, z
    std::array<std::size_t, 3> region_hi{};      // mask_region: exclusive x, y, z
    std::size_t time_stride = 1;                 // subsample_time: keep t % stride == 0
};

/// Marks removed voxels in the observation mask. Values stay in place so the
/// same sample doubles as ground truth.
inline VolumeSample degrade(const VolumeSample& volume, const Degradation& d) {
    VolumeSample out = volume;
    if (out.mask.empty()) out.mask.assign(out.voxel_count(), 1);
    const auto& sh = out.shape;
    switch (d.mode) {
        case DegradeMode::drop_slices:
            for (std::size_t z : d.slices) {
                if (z >= sh[2]) throw ContractError("degrade: slice " + std::to_string(z) + " out of range");
            }
            break;
        case DegradeMode::mask_region:
            for (int a = 0; a < 3; ++a) {
                if (d.region_lo[a] > d.region_hi[a] || d.region_hi[a] > sh[a])
                    throw ContractError("degrade: invalid mask region");
            }
            break;
        case DegradeMode::subsample_time:
            if (d.time_stride < 1) throw ContractError("degrade: time stride must be >= 1");
            break;
    }
    for (std::size_t t = 0; t < sh[3]; ++t) {
        for (std::size_t z = 0; z < sh[2]; ++z) {
            for (std::size_t y = 0; y < sh[1]; ++y) {
                for (std::size_t x = 0; x < sh[0]; ++x) {
                    bool drop = false;
                    switch (d.mode) {
                        case DegradeMode::drop_slices:
                            drop = std::find(d.slices.begin(), d.slices.end(), z) != d.slices.end();
                            break;
                        case DegradeMode::mask_region:
                            drop = x >= d.region_lo[0] && x < d.region_hi[0] && y >= d.region_lo[1] &&
                                   y < d.region_hi[1] && z >= d.region_lo[2] && z < d.region_hi[2];
                            break;
                        case DegradeMode::subsample_time:
                            drop = t % d.time_stride != 0;
                            break;
                    }
                    if (drop) out.mask[out.index(x, y, z, t)] = 0;
                }
            }
        }
    }
    if (out.observed_count() == 0) throw ContractError("degrade: no observed voxels left");
    return out;
}

/// Drops the observation mask, undoing any degradation.
inline VolumeSample restore(const VolumeSample& volume) {
    VolumeSample out = volume;
    out.mask.clear();
    return out;
}

}  // namespace nisf
