// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Querying a fitted (model, latent) pair at arbitrary coordinates: dense
// grids, arbitrary planes, held-out slices, and the nearest-neighbour
// resampling baseline that works on voxel data alone.
//
// Geometry conventions. A volume of extent n_a and spacing s_a along axis a
// spans L_a = (n_a - 1) * s_a millimetres between its first and last voxel
// centres; normalised coordinate c maps to c * L_a mm. Time uses frame units
// (spacing 1). Outputs are in raster order with the first axis fastest.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nisf/batch.hpp"
#include "nisf/errors.hpp"
#include "nisf/field_model.hpp"
#include "nisf/latent_inference.hpp"
#include "nisf/metrics.hpp"
#include "nisf/phantom.hpp"
#include "nisf/tensor.hpp"

namespace nisf {

/// Axis-aligned sampling lattice in normalised coordinates (x, y, z, t).
struct GridSpec {
    std::array<std::size_t, 4> counts{1, 1, 1, 1};
    std::array<double, 4> lo{0, 0, 0, 0};
    std::array<double, 4> hi{1, 1, 1, 1};
    bool allow_extrapolation = false;

    void validate() const {
        for (int a = 0; a < 4; ++a) {
            if (counts[a] < 1) throw ContractError("grid spec: axis " + std::to_string(a) + " has zero samples");
            if (!(lo[a] <= hi[a])) throw ContractError("grid spec: axis " + std::to_string(a) + " has lo > hi");
            if (!allow_extrapolation && (lo[a] < 0.0 || hi[a] > 1.0))
                throw ContractError("grid spec: range leaves [0, 1] without allow_extrapolation");
        }
    }
    std::size_t size() const { return counts[0] * counts[1] * counts[2] * counts[3]; }

    /// Sample i of axis a: lo + (hi - lo) * i / (n - 1); single-sample axes
    /// sit at the middle of their range.
    double coordinate(int a, std::size_t i) const {
        if (counts[a] == 1) return 0.5 * (lo[a] + hi[a]);
        return lo[a] + (hi[a] - lo[a]) * (static_cast<double>(i) / static_cast<double>(counts[a] - 1));
    }

    /// The lattice of a volume's voxel centres.
    static GridSpec matching(const GridShape& shape) {
        GridSpec g;
        for (int a = 0; a < 4; ++a) g.counts[a] = shape[a];
        return g;
    }
    /// `factor`-times denser lattice over the same range; every original
    /// sample is also a sample of the dense lattice.
    GridSpec upsampled(std::size_t factor) const {
        GridSpec g = *this;
        for (int a = 0; a < 4; ++a) {
            if (counts[a] > 1) g.counts[a] = factor * (counts[a] - 1) + 1;
        }
        return g;
    }
};

template <class Real>
struct FieldSamples {
    Tensor<Real> coords;  // [P x coord_dim]
    std::vector<Real> intensity;
    std::vector<std::uint8_t> labels;
    std::vector<Real> probs;           // [P x M]
    std::vector<std::uint8_t> inside;  // 1 when every coordinate is within [0, 1]
    std::size_t out_of_range = 0;
};

namespace detail {

template <class Real>
FieldSamples<Real> evaluate_points(const FieldModel<Real>& model, const Tensor<Real>& latent, std::vector<Real> coords,
                                   std::size_t threads) {
    const std::size_t cd = model.config().coord_dim;
    const std::size_t p = coords.size() / cd;
    FieldSamples<Real> s;
    s.inside.resize(p, 1);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t a = 0; a < cd; ++a) {
            const Real c = coords[i * cd + a];
            if (!(c >= Real(0) && c <= Real(1))) s.inside[i] = 0;
        }
        if (!s.inside[i]) ++s.out_of_range;
    }
    s.coords = Tensor<Real>({p, cd}, std::move(coords));
    Prediction<Real> pred = predict(model, latent, s.coords, threads);
    s.intensity = std::move(pred.intensity);
    s.labels = std::move(pred.labels);
    s.probs = std::move(pred.probs);
    return s;
}

}  // namespace detail

/// Evaluates both heads on every lattice point. Models with 3-D coordinates
/// ignore the time axis, which must then hold a single sample.
template <class Real>
FieldSamples<Real> sample_grid(const FieldModel<Real>& model, const Tensor<Real>& latent, const GridSpec& spec,
                               std::size_t threads = 1) {
    spec.validate();
    const std::size_t cd = model.config().coord_dim;
    if (cd != 3 && cd != 4) throw DimensionError("sample_grid: model coordinates must be 3-D or 4-D");
    if (cd == 3 && spec.counts[3] != 1) throw ContractError("sample_grid: 3-D model cannot sample a time axis");
    std::vector<Real> coords;
    coords.reserve(spec.size() * cd);
    for (std::size_t t = 0; t < spec.counts[3]; ++t) {
        for (std::size_t z = 0; z < spec.counts[2]; ++z) {
            for (std::size_t y = 0; y < spec.counts[1]; ++y) {
                for (std::size_t x = 0; x < spec.counts[0]; ++x) {
                    coords.push_back(static_cast<Real>(spec.coordinate(0, x)));
                    coords.push_back(static_cast<Real>(spec.coordinate(1, y)));
                    coords.push_back(static_cast<Real>(spec.coordinate(2, z)));
                    if (cd == 4) coords.push_back(static_cast<Real>(spec.coordinate(3, t)));
                }
            }
        }
    }
    return detail::evaluate_points(model, latent, std::move(coords), threads);
}

/// Physical frame of a volume: extents and millimetre spacing.
struct VolumeGeometry {
    GridShape shape{1, 1, 1, 1};
    std::array<double, 4> spacing{1, 1, 1, 1};

    static VolumeGeometry of(const VolumeSample& v) { return {v.shape, v.spacing}; }
    double length(int a) const { return static_cast<double>(shape[a] - 1) * spacing[a]; }
};

/// Planar section. Pixel (k, l) lies at
///   origin + (k / (nu - 1)) * extent_u * dir_u + (l / (nv - 1)) * extent_v * dir_v
/// where origin is normalised, directions are physical unit vectors and
/// extents are millimetres.
struct PlaneSpec {
    std::array<double, 3> origin{0, 0, 0};
    std::array<double, 3> dir_u{1, 0, 0};
    std::array<double, 3> dir_v{0, 1, 0};
    std::size_t nu = 1, nv = 1;
    double extent_u = 0, extent_v = 0;  // mm
    double t = 0;                       // normalised time
    VolumeGeometry geometry;

    void validate() const {
        auto dot = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
            return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        };
        const std::array<double, 3> cross{dir_u[1] * dir_v[2] - dir_u[2] * dir_v[1],
                                          dir_u[2] * dir_v[0] - dir_u[0] * dir_v[2],
                                          dir_u[0] * dir_v[1] - dir_u[1] * dir_v[0]};
        if (dot(cross, cross) < 1e-18) throw ContractError("plane spec: direction vectors are parallel or zero");
        if (std::abs(dot(dir_u, dir_u) - 1.0) > 1e-9 || std::abs(dot(dir_v, dir_v) - 1.0) > 1e-9 ||
            std::abs(dot(dir_u, dir_v)) > 1e-9)
            throw ContractError("plane spec: direction vectors must be orthonormal within 1e-9");
        if (nu < 1 || nv < 1) throw ContractError("plane spec: zero pixels");
        if (!(extent_u >= 0) || !(extent_v >= 0)) throw ContractError("plane spec: negative extent");
        for (int a = 0; a < 3; ++a) {
            if (geometry.shape[a] < 2) throw ContractError("plane spec: volume axes must have extent >= 2");
        }
    }
    std::size_t size() const { return nu * nv; }

    /// Normalised (x, y, z) of pixel (k, l).
    std::array<double, 3> normalized(std::size_t k, std::size_t l) const {
        const double fu = nu > 1 ? static_cast<double>(k) / static_cast<double>(nu - 1) : 0.0;
        const double fv = nv > 1 ? static_cast<double>(l) / static_cast<double>(nv - 1) : 0.0;
        std::array<double, 3> c{};
        for (int a = 0; a < 3; ++a) {
            const double span_u = dir_u[a] * extent_u / geometry.length(a);
            const double span_v = dir_v[a] * extent_v / geometry.length(a);
            c[a] = origin[a] + span_u * fu + span_v * fv;
        }
        return c;
    }
    /// Millimetre position of pixel (k, l).
    std::array<double, 3> physical(std::size_t k, std::size_t l) const {
        const auto c = normalized(k, l);
        return {c[0] * geometry.length(0), c[1] * geometry.length(1), c[2] * geometry.length(2)};
    }
    double frame() const { return t * static_cast<double>(geometry.shape[3] - 1); }
};

/// Plane through a physical point with the given in-plane directions,
/// centred on that point.
inline PlaneSpec centered_plane(const VolumeGeometry& g, const std::array<double, 3>& center_mm,
                                const std::array<double, 3>& dir_u, const std::array<double, 3>& dir_v,
                                double extent_u, double extent_v, std::size_t nu, std::size_t nv, double t) {
    PlaneSpec p;
    p.geometry = g;
    p.dir_u = dir_u;
    p.dir_v = dir_v;
    p.extent_u = extent_u;
    p.extent_v = extent_v;
    p.nu = nu;
    p.nv = nv;
    p.t = t;
    for (int a = 0; a < 3; ++a)
        p.origin[a] = (center_mm[a] - 0.5 * extent_u * dir_u[a] - 0.5 * extent_v * dir_v[a]) / g.length(a);
    p.validate();
    return p;
}

/// Evaluates the field on every pixel of a plane; pixels outside the unit
/// cube are evaluated by extrapolation and flagged.
template <class Real>
FieldSamples<Real> sample_plane(const FieldModel<Real>& model, const Tensor<Real>& latent, const PlaneSpec& spec,
                                std::size_t threads = 1) {
    spec.validate();
    const std::size_t cd = model.config().coord_dim;
    if (cd != 3 && cd != 4) throw DimensionError("sample_plane: model coordinates must be 3-D or 4-D");
    std::vector<Real> coords;
    coords.reserve(spec.size() * cd);
    for (std::size_t l = 0; l < spec.nv; ++l) {
        for (std::size_t k = 0; k < spec.nu; ++k) {
            const auto c = spec.normalized(k, l);
            for (int a = 0; a < 3; ++a) coords.push_back(static_cast<Real>(c[a]));
            if (cd == 4) coords.push_back(static_cast<Real>(spec.t));
        }
    }
    return detail::evaluate_points(model, latent, std::move(coords), threads);
}

struct ResampledImage {
    std::vector<double> intensity;
    std::vector<std::uint8_t> labels;
    std::vector<std::uint8_t> inside;
    std::vector<std::size_t> source_index;  // voxel each pixel copied; SIZE_MAX outside
    std::size_t out_of_volume = 0;
};

namespace detail {

/// Nearest voxel-centre index along one axis, comparing the two bracketing
/// centres by squared distance; equal distances go to the lower index.
/// Returns false outside [0, L] (with a relative tolerance of 1e-12).
inline bool nearest_index(double p, double spacing, std::size_t n, std::size_t& out) {
    const double length = static_cast<double>(n - 1) * spacing;
    const double tol = 1e-12 * std::max(1.0, length);
    if (!(p >= -tol && p <= length + tol)) return false;
    if (n == 1) {
        out = 0;
        return true;
    }
    double f = std::floor(p / spacing);
    if (f < 0) f = 0;
    if (f > static_cast<double>(n - 1)) f = static_cast<double>(n - 1);
    std::size_t i = static_cast<std::size_t>(f);
    // Check the neighbours of the estimate so rounding in p / spacing cannot
    // pick the wrong bracket.
    std::size_t best = i;
    double best_d = (p - static_cast<double>(i) * spacing) * (p - static_cast<double>(i) * spacing);
    const std::size_t lo = i > 0 ? i - 1 : 0, hi = std::min(n - 1, i + 1);
    for (std::size_t j = lo; j <= hi; ++j) {
        const double d = (p - static_cast<double>(j) * spacing) * (p - static_cast<double>(j) * spacing);
        if (d < best_d || (d == best_d && j < best)) {
            best = j;
            best_d = d;
        }
    }
    out = best;
    return true;
}

}  // namespace detail

/// Nearest-voxel lookup of physical points (mm) at a time given in frames.
/// Points outside the hull of voxel centres get 0 and are flagged.
inline ResampledImage nearest_neighbor_points(const VolumeSample& vol, const std::vector<std::array<double, 3>>& points,
                                              double frame) {
    ResampledImage img;
    const std::size_t n = points.size();
    img.intensity.assign(n, 0.0);
    img.labels.assign(n, 0);
    img.inside.assign(n, 0);
    img.source_index.assign(n, std::numeric_limits<std::size_t>::max());
    std::size_t ti = 0;
    const bool time_ok = detail::nearest_index(frame, 1.0, vol.shape[3], ti);
    for (std::size_t i = 0; i < n; ++i) {
        std::array<std::size_t, 3> idx{};
        bool ok = time_ok;
        for (int a = 0; a < 3 && ok; ++a) ok = detail::nearest_index(points[i][a], vol.spacing[a], vol.shape[a], idx[a]);
        if (!ok) {
            ++img.out_of_volume;
            continue;
        }
        const std::size_t v = vol.index(idx[0], idx[1], idx[2], ti);
        img.inside[i] = 1;
        img.source_index[i] = v;
        img.intensity[i] = vol.intensity[v];
        img.labels[i] = vol.labels[v];
    }
    return img;
}

inline std::vector<std::array<double, 3>> plane_points_mm(const PlaneSpec& spec) {
    std::vector<std::array<double, 3>> pts;
    pts.reserve(spec.size());
    for (std::size_t l = 0; l < spec.nv; ++l) {
        for (std::size_t k = 0; k < spec.nu; ++k) pts.push_back(spec.physical(k, l));
    }
    return pts;
}

inline ResampledImage nearest_neighbor_resample(const VolumeSample& vol, const PlaneSpec& spec) {
    spec.validate();
    return nearest_neighbor_points(vol, plane_points_mm(spec), spec.frame());
}

/// Grid variant: every time sample is looked up at its own nearest frame.
inline ResampledImage nearest_neighbor_resample(const VolumeSample& vol, const GridSpec& spec) {
    spec.validate();
    ResampledImage out;
    const VolumeGeometry g = VolumeGeometry::of(vol);
    for (std::size_t t = 0; t < spec.counts[3]; ++t) {
        std::vector<std::array<double, 3>> pts;
        for (std::size_t z = 0; z < spec.counts[2]; ++z) {
            for (std::size_t y = 0; y < spec.counts[1]; ++y) {
                for (std::size_t x = 0; x < spec.counts[0]; ++x) {
                    pts.push_back({spec.coordinate(0, x) * g.length(0), spec.coordinate(1, y) * g.length(1),
                                   spec.coordinate(2, z) * g.length(2)});
                }
            }
        }
        ResampledImage part = nearest_neighbor_points(vol, pts, spec.coordinate(3, t) * g.length(3) / g.spacing[3]);
        out.intensity.insert(out.intensity.end(), part.intensity.begin(), part.intensity.end());
        out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
        out.inside.insert(out.inside.end(), part.inside.begin(), part.inside.end());
        out.source_index.insert(out.source_index.end(), part.source_index.begin(), part.source_index.end());
        out.out_of_volume += part.out_of_volume;
    }
    return out;
}

/// Ground-truth labels of a plane from the analytic phantom.
inline std::vector<std::uint8_t> phantom_plane_labels(const PhantomSpec& phantom, const PlaneSpec& spec) {
    std::vector<std::uint8_t> out;
    out.reserve(spec.size());
    const double frame = spec.frame();
    for (const auto& p : plane_points_mm(spec)) out.push_back(label_at(phantom, p, frame));
    return out;
}

/// Keeps the entries whose mask is set.
template <class T>
std::vector<T> select_masked(const std::vector<T>& values, const std::vector<std::uint8_t>& mask) {
    std::vector<T> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (mask[i]) out.push_back(values[i]);
    }
    return out;
}

struct SliceComparison {
    std::size_t slice = 0;
    DiceReport model;
    DiceReport baseline;          // copy of the nearest observed slice
    std::size_t baseline_source = 0;
    ReconstructionError model_recon;
    ReconstructionError baseline_recon;
};

template <class Real>
struct HeldoutResult {
    SliceComparison comparison;
    InferenceResult<Real> inference;
    std::vector<std::uint8_t> predicted_labels;  // slice voxels, raster order over (x, y, t)
};

/// Nearest observed slice to `slice`, measured along z; ties go to the lower
/// index.
inline std::size_t nearest_observed_slice(const VolumeSample& vol, const std::vector<std::size_t>& removed,
                                          std::size_t slice) {
    const std::size_t nz = vol.shape[2];
    std::size_t best = nz;
    for (std::size_t z = 0; z < nz; ++z) {
        if (std::find(removed.begin(), removed.end(), z) != removed.end()) continue;
        const std::size_t d = z > slice ? z - slice : slice - z;
        const std::size_t bd = best == nz ? nz + 1 : (best > slice ? best - slice : slice - best);
        if (d < bd) best = z;
    }
    if (best == nz) throw ContractError("no observed slice left");
    return best;
}

/// Removes slice `slice` from the observations, fits a latent to the rest and
/// compares the prediction on the removed slice with copying the nearest
/// observed slice.
template <class Real>
HeldoutResult<Real> predict_heldout_slice(const FieldModel<Real>& model, const VolumeSample& truth, std::size_t slice,
                                          const InferConfig& config) {
    if (slice >= truth.shape[2]) {
        throw ContractError("held-out slice " + std::to_string(slice) + " outside 0.." +
                            std::to_string(truth.shape[2] - 1));
    }
    const std::size_t cd = model.config().coord_dim, m = model.config().num_classes;
    Degradation d;
    d.mode = DegradeMode::drop_slices;
    d.slices = {slice};
    const VolumeSample observed = degrade(truth, d);
    const PointBatch<Real> obs = make_observations<Real>(observed, cd, m);

    HeldoutResult<Real> r;
    r.inference = infer_latent(model, obs.coords, obs.intensities, config);

    const PointBatch<Real> full = make_full_grid<Real>(truth, cd, m);
    const std::size_t plane = truth.shape[0] * truth.shape[1];
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < full.size(); ++i) {
        if ((full.voxel_index[i] / plane) % truth.shape[2] == slice) rows.push_back(i);
    }
    const PointBatch<Real> slice_batch = gather_rows(full, rows);
    const Prediction<Real> p = predict(model, r.inference.latent, slice_batch.coords, config.threads);
    r.predicted_labels = p.labels;

    const std::size_t src = nearest_observed_slice(truth, d.slices, slice);
    std::vector<std::uint8_t> base_labels;
    std::vector<double> base_int, true_int, pred_int;
    for (std::size_t i = 0; i < slice_batch.size(); ++i) {
        const std::size_t v = slice_batch.voxel_index[i];
        const std::size_t copy = v - slice * plane + src * plane;
        base_labels.push_back(truth.labels[copy]);
        base_int.push_back(truth.intensity[copy]);
        true_int.push_back(truth.intensity[v]);
        pred_int.push_back(static_cast<double>(p.intensity[i]));
    }
    SliceComparison& c = r.comparison;
    c.slice = slice;
    c.baseline_source = src;
    c.model = dice_report(p.labels, slice_batch.labels, m);
    c.baseline = dice_report(base_labels, slice_batch.labels, m);
    c.model_recon = reconstruction_error(pred_int, true_int);
    c.baseline_recon = reconstruction_error(base_int, true_int);
    return r;
}

}  // namespace nisf
