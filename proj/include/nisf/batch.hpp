// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Turning voxel grids into point batches of normalised coordinates.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nisf/errors.hpp"
#include "nisf/phantom.hpp"
#include "nisf/tensor.hpp"

namespace nisf {

/// index / (extent - 1); a single-voxel axis maps to 0.5.
inline double normalize_coord(std::size_t index, std::size_t extent) {
    if (extent < 1) throw ContractError("normalize_coord: extent must be >= 1");
    if (index >= extent) {
        throw ContractError("normalize_coord: index " + std::to_string(index) + " outside extent " +
                            std::to_string(extent));
    }
    if (extent == 1) return 0.5;
    return static_cast<double>(index) / static_cast<double>(extent - 1);
}

inline std::array<double, 4> normalize_coords(const std::array<std::size_t, 4>& index, const GridShape& extent) {
    std::array<double, 4> c{};
    for (int a = 0; a < 4; ++a) c[a] = normalize_coord(index[a], extent[a]);
    return c;
}

template <class Real>
struct PointBatch {
    Tensor<Real> coords;          // [B x N]
    Tensor<Real> intensities;     // [B x 1]
    Tensor<Real> labels_onehot;   // [B x M]
    std::vector<std::uint8_t> labels;
    std::vector<std::size_t> voxel_index;  // flat index into the source volume
    std::size_t excluded = 0;              // masked voxels left out

    std::size_t size() const { return voxel_index.size(); }
};

namespace detail {

template <class Real>
PointBatch<Real> collect_points(const VolumeSample& vol, std::size_t t_begin, std::size_t t_end,
                                std::size_t coord_dim, std::size_t num_classes) {
    if (coord_dim != 3 && coord_dim != 4) throw DimensionError("coordinates must be 3-D or 4-D");
    const auto& sh = vol.shape;
    PointBatch<Real> b;
    std::vector<Real> coords, inten, onehot;
    const std::size_t cap = (t_end - t_begin) * vol.frame_size();
    coords.reserve(cap * coord_dim);
    inten.reserve(cap);
    onehot.reserve(cap * num_classes);
    for (std::size_t t = t_begin; t < t_end; ++t) {
        const Real ct = static_cast<Real>(normalize_coord(t, sh[3]));
        for (std::size_t z = 0; z < sh[2]; ++z) {
            const Real cz = static_cast<Real>(normalize_coord(z, sh[2]));
            for (std::size_t y = 0; y < sh[1]; ++y) {
                const Real cy = static_cast<Real>(normalize_coord(y, sh[1]));
                for (std::size_t x = 0; x < sh[0]; ++x) {
                    const std::size_t i = vol.index(x, y, z, t);
                    if (!vol.observed(i)) {
                        ++b.excluded;
                        continue;
                    }
                    coords.push_back(static_cast<Real>(normalize_coord(x, sh[0])));
                    coords.push_back(cy);
                    coords.push_back(cz);
                    if (coord_dim == 4) coords.push_back(ct);
                    inten.push_back(static_cast<Real>(vol.intensity[i]));
                    const std::uint8_t label = vol.labels[i];
                    if (label >= num_classes) throw ContractError("label exceeds class count");
                    for (std::size_t k = 0; k < num_classes; ++k) onehot.push_back(k == label ? Real(1) : Real(0));
                    b.labels.push_back(label);
                    b.voxel_index.push_back(i);
                }
            }
        }
    }
    const std::size_t n = b.voxel_index.size();
    b.coords = Tensor<Real>({n, coord_dim}, std::move(coords));
    b.intensities = Tensor<Real>({n, 1}, std::move(inten));
    b.labels_onehot = Tensor<Real>({n, num_classes}, std::move(onehot));
    return b;
}

}  // namespace detail

/// All observed voxels of time frame t in raster order (x fastest).
template <class Real>
PointBatch<Real> make_batch(const VolumeSample& vol, std::size_t t, std::size_t coord_dim = 4,
                            std::size_t num_classes = kNumPhantomClasses) {
    if (t >= vol.shape[3]) {
        throw ContractError("make_batch: frame " + std::to_string(t) + " outside " + std::to_string(vol.shape[3]) +
                            " frames");
    }
    return detail::collect_points<Real>(vol, t, t + 1, coord_dim, num_classes);
}

/// All observed voxels across every frame.
template <class Real>
PointBatch<Real> make_observations(const VolumeSample& vol, std::size_t coord_dim = 4,
                                   std::size_t num_classes = kNumPhantomClasses) {
    return detail::collect_points<Real>(vol, 0, vol.shape[3], coord_dim, num_classes);
}

/// Ground-truth copy of a volume without its observation mask.
template <class Real>
PointBatch<Real> make_full_grid(const VolumeSample& vol, std::size_t coord_dim = 4,
                                std::size_t num_classes = kNumPhantomClasses) {
    VolumeSample full = restore(vol);
    return detail::collect_points<Real>(full, 0, vol.shape[3], coord_dim, num_classes);
}

/// Rows [begin, end) of a batch.
template <class Real>
PointBatch<Real> slice_rows(const PointBatch<Real>& b, std::size_t begin, std::size_t end) {
    const std::size_t n = b.coords.dim(1), m = b.labels_onehot.dim(1);
    PointBatch<Real> out;
    const auto cv = b.coords.values();
    const auto iv = b.intensities.values();
    const auto ov = b.labels_onehot.values();
    out.coords = Tensor<Real>({end - begin, n}, std::vector<Real>(cv.begin() + begin * n, cv.begin() + end * n));
    out.intensities = Tensor<Real>({end - begin, 1}, std::vector<Real>(iv.begin() + begin, iv.begin() + end));
    out.labels_onehot =
        Tensor<Real>({end - begin, m}, std::vector<Real>(ov.begin() + begin * m, ov.begin() + end * m));
    out.labels.assign(b.labels.begin() + begin, b.labels.begin() + end);
    out.voxel_index.assign(b.voxel_index.begin() + begin, b.voxel_index.begin() + end);
    return out;
}

/// Rows picked by index, in the given order.
template <class Real>
PointBatch<Real> gather_rows(const PointBatch<Real>& b, const std::vector<std::size_t>& rows) {
    const std::size_t n = b.coords.dim(1), m = b.labels_onehot.dim(1);
    std::vector<Real> c, in, oh;
    PointBatch<Real> out;
    c.reserve(rows.size() * n);
    in.reserve(rows.size());
    oh.reserve(rows.size() * m);
    const auto cv = b.coords.values();
    const auto iv = b.intensities.values();
    const auto ov = b.labels_onehot.values();
    for (std::size_t r : rows) {
        c.insert(c.end(), cv.begin() + r * n, cv.begin() + (r + 1) * n);
        in.push_back(iv[r]);
        oh.insert(oh.end(), ov.begin() + r * m, ov.begin() + (r + 1) * m);
        out.labels.push_back(b.labels[r]);
        out.voxel_index.push_back(b.voxel_index[r]);
    }
    out.coords = Tensor<Real>({rows.size(), n}, std::move(c));
    out.intensities = Tensor<Real>({rows.size(), 1}, std::move(in));
    out.labels_onehot = Tensor<Real>({rows.size(), m}, std::move(oh));
    return out;
}

}  // namespace nisf
