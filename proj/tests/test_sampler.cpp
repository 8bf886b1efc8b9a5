// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "nisf/batch.hpp"
#include "nisf/sampler.hpp"

using namespace nisf;
using T = Tensor<double>;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.latent_dim = 8;
    c.hidden_width = 16;
    c.num_residual_layers = 2;
    return c;
}

// Exhaustive search over every voxel centre; returns SIZE_MAX outside the hull.
std::size_t brute_force_nearest(const VolumeSample& v, const std::array<double, 3>& p, std::size_t t) {
    for (int a = 0; a < 3; ++a) {
        const double len = static_cast<double>(v.shape[a] - 1) * v.spacing[a];
        if (p[a] < 0 || p[a] > len) return std::numeric_limits<std::size_t>::max();
    }
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t z = 0; z < v.shape[2]; ++z)
        for (std::size_t y = 0; y < v.shape[1]; ++y)
            for (std::size_t x = 0; x < v.shape[0]; ++x) {
                const double dx = p[0] - static_cast<double>(x) * v.spacing[0];
                const double dy = p[1] - static_cast<double>(y) * v.spacing[1];
                const double dz = p[2] - static_cast<double>(z) * v.spacing[2];
                const double d = dx * dx + dy * dy + dz * dz;
                if (d < best_d) {
                    best_d = d;
                    best = v.index(x, y, z, t);
                }
            }
    return best;
}

}  // namespace

TEST(GridSpec, MatchingGridReproducesBatchCoordinates) {
    const auto vol = generate_subject(3, {5, 4, 3, 2}).volume;
    const auto model = init_params<double>(tiny_config(), 1);
    const T h = init_latent<double>(8, 0.1, 2);
    const auto s = sample_grid(model, h, GridSpec::matching(vol.shape));
    const auto b = make_observations<double>(vol);
    ASSERT_EQ(s.coords.numel(), b.coords.numel());
    for (std::size_t i = 0; i < b.coords.numel(); ++i) EXPECT_EQ(s.coords[i], b.coords[i]);
    EXPECT_EQ(s.out_of_range, 0u);
}

TEST(GridSpec, SinglePointAtCentre) {
    const auto model = init_params<double>(tiny_config(), 1);
    GridSpec g;
    const auto s = sample_grid(model, init_latent<double>(8, 0.1, 2), g);
    ASSERT_EQ(s.labels.size(), 1u);
    for (std::size_t a = 0; a < 4; ++a) EXPECT_EQ(s.coords[a], 0.5);
}

TEST(GridSpec, UpsampledGridContainsOriginalValues) {
    const auto model = init_params<double>(tiny_config(), 4);
    const T h = init_latent<double>(8, 0.1, 5);
    const GridSpec g = GridSpec::matching({5, 4, 3, 2});
    const GridSpec u = g.upsampled(4);
    EXPECT_EQ(u.counts, (std::array<std::size_t, 4>{17, 13, 9, 5}));
    const auto coarse = sample_grid(model, h, g);
    const auto fine = sample_grid(model, h, u);
    std::size_t i = 0;
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t z = 0; z < 3; ++z)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 5; ++x, ++i) {
                    const std::size_t j = (((4 * t) * 9 + 4 * z) * 13 + 4 * y) * 17 + 4 * x;
                    ASSERT_EQ(fine.intensity[j], coarse.intensity[i]);
                    ASSERT_EQ(fine.labels[j], coarse.labels[i]);
                }
}

TEST(GridSpec, ValidationAndExtrapolation) {
    GridSpec g;
    g.hi[0] = 1.5;
    EXPECT_THROW(g.validate(), ContractError);
    g.allow_extrapolation = true;
    g.counts = {3, 1, 1, 1};
    const auto model = init_params<double>(tiny_config(), 1);
    const auto s = sample_grid(model, init_latent<double>(8, 0.1, 2), g);
    EXPECT_EQ(s.out_of_range, 1u);
    EXPECT_EQ(s.inside, (std::vector<std::uint8_t>{1, 1, 0}));
}

TEST(Plane, AxisAlignedMatchesGridSlice) {
    const GridShape shape{6, 5, 4, 3};
    const auto vol = generate_subject(8, shape).volume;
    const auto g = VolumeGeometry::of(vol);
    const auto model = init_params<double>(tiny_config(), 6);
    const T h = init_latent<double>(8, 0.1, 7);
    const std::size_t z = 2, t = 1;
    PlaneSpec p;
    p.geometry = g;
    p.origin = {0.0, 0.0, normalize_coord(z, 4)};
    p.nu = 6;
    p.nv = 5;
    p.extent_u = g.length(0);
    p.extent_v = g.length(1);
    p.t = normalize_coord(t, 3);
    const auto plane = sample_plane(model, h, p);
    const auto grid = sample_grid(model, h, GridSpec::matching(shape));
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 6; ++x) {
            const std::size_t gi = vol.index(x, y, z, t);
            EXPECT_NEAR(plane.intensity[y * 6 + x], grid.intensity[gi], 1e-12);
            EXPECT_EQ(plane.labels[y * 6 + x], grid.labels[gi]);
        }
    // The nearest-neighbour resampler on the same plane copies that slice.
    const auto nn = nearest_neighbor_resample(vol, p);
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 6; ++x) EXPECT_EQ(nn.source_index[y * 6 + x], vol.index(x, y, z, t));
}

TEST(Plane, OutsideVolumeIsFlagged) {
    const auto vol = generate_subject(8, {6, 5, 4, 3}).volume;
    PlaneSpec p;
    p.geometry = VolumeGeometry::of(vol);
    p.origin = {2.0, 2.0, 2.0};
    p.nu = 4;
    p.nv = 3;
    p.extent_u = 10;
    p.extent_v = 10;
    const auto model = init_params<double>(tiny_config(), 6);
    const auto s = sample_plane(model, init_latent<double>(8, 0.1, 7), p);
    EXPECT_EQ(s.out_of_range, 12u);
    EXPECT_EQ(nearest_neighbor_resample(vol, p).out_of_volume, 12u);
}

TEST(Plane, RejectsNonOrthonormalDirections) {
    PlaneSpec p;
    p.geometry = {{4, 4, 4, 1}, {1, 1, 1, 1}};
    p.dir_v = {1, 0, 0};
    EXPECT_THROW(p.validate(), ContractError);
    p.dir_v = {0, 2, 0};
    EXPECT_THROW(p.validate(), ContractError);
}

TEST(Plane, CenteredPlaneIsCentred) {
    const VolumeGeometry g{{32, 32, 8, 10}, {2, 2, 10, 1}};
    const double c = std::sqrt(0.5);
    const auto p = centered_plane(g, {31, 31, 35}, {c, c, 0}, {0, 0, 1}, 40, 60, 41, 61, 0.5);
    const auto mid = p.physical(20, 30);
    EXPECT_NEAR(mid[0], 31, 1e-9);
    EXPECT_NEAR(mid[1], 31, 1e-9);
    EXPECT_NEAR(mid[2], 35, 1e-9);
}

TEST(NearestNeighbor, VoxelCentreReturnsThatVoxel) {
    const auto vol = generate_subject(9, {5, 5, 3, 2}).volume;
    const auto img = nearest_neighbor_points(vol, {{2 * vol.spacing[0], 3 * vol.spacing[1], 1 * vol.spacing[2]}}, 1.0);
    EXPECT_EQ(img.source_index[0], vol.index(2, 3, 1, 1));
    EXPECT_EQ(img.intensity[0], vol.intensity[vol.index(2, 3, 1, 1)]);
}

TEST(NearestNeighbor, TieGoesToLowerIndex) {
    VolumeSample vol;
    vol.shape = {4, 2, 2, 1};
    vol.spacing = {2, 2, 10, 1};
    vol.intensity.assign(16, 0.5);
    vol.labels.assign(16, 0);
    const auto img = nearest_neighbor_points(vol, {{3.0, 0.0, 5.0}}, 0.0);
    EXPECT_EQ(img.source_index[0], vol.index(1, 0, 0, 0));
}

TEST(NearestNeighbor, AnisotropicMatchesBruteForce) {
    for (const GridShape& shape : {GridShape{16, 16, 16, 1}, GridShape{9, 12, 5, 2}, GridShape{16, 3, 16, 1}}) {
        VolumeSample vol = generate_subject(12, shape).volume;
        vol.spacing = {2.0, 2.0, 10.0, 1.0};
        std::mt19937_64 rng(shape[0] * 100 + shape[1]);
        std::vector<std::array<double, 3>> pts;
        for (int i = 0; i < 4000; ++i) {
            std::array<double, 3> p{};
            for (int a = 0; a < 3; ++a) {
                const double len = static_cast<double>(shape[a] - 1) * vol.spacing[a];
                p[a] = std::uniform_real_distribution<double>(-0.1 * len, 1.1 * len)(rng);
                // Some queries exactly on voxel centres and midpoints.
                if (i % 7 == 0) p[a] = vol.spacing[a] * static_cast<double>(rng() % shape[a]);
                if (i % 11 == 0) p[a] = vol.spacing[a] * (0.5 + static_cast<double>(rng() % (shape[a] - 1)));
            }
            pts.push_back(p);
        }
        const std::size_t t = shape[3] - 1;
        const auto img = nearest_neighbor_points(vol, pts, static_cast<double>(t));
        for (std::size_t i = 0; i < pts.size(); ++i) ASSERT_EQ(img.source_index[i], brute_force_nearest(vol, pts[i], t)) << i;
    }
}

TEST(Heldout, SliceIsAbsentFromObservations) {
    const auto vol = generate_subject(13, {6, 6, 5, 2}).volume;
    Degradation d;
    d.slices = {2};
    const auto obs = make_observations<double>(degrade(vol, d));
    for (std::size_t r = 0; r < obs.size(); ++r) EXPECT_NE(obs.coords.at(r, 2), normalize_coord(2, 5));
    EXPECT_EQ(obs.size(), vol.voxel_count() - 6 * 6 * 2);
}

TEST(Heldout, NearestObservedSlice) {
    const auto vol = generate_subject(13, {4, 4, 8, 1}).volume;
    EXPECT_EQ(nearest_observed_slice(vol, {3}, 3), 2u);
    EXPECT_EQ(nearest_observed_slice(vol, {0}, 0), 1u);
    EXPECT_EQ(nearest_observed_slice(vol, {3, 2}, 3), 4u);
}

TEST(Heldout, ComparisonOnTinyModel) {
    const auto vol = generate_subject(14, {6, 6, 4, 2}).volume;
    const auto model = init_params<double>(tiny_config(), 2);
    InferConfig ic;
    ic.selected_steps = 3;
    const auto r = predict_heldout_slice(model, vol, 2, ic);
    EXPECT_EQ(r.predicted_labels.size(), 6u * 6u * 2u);
    EXPECT_EQ(r.comparison.baseline_source, 1u);
    EXPECT_EQ(r.comparison.model.per_class.size(), 3u);
    EXPECT_THROW(predict_heldout_slice(model, vol, 4, ic), ContractError);
}

TEST(Heldout, NoSlicesRemovedIsPlainInference) {
    const auto vol = generate_subject(15, {6, 6, 4, 2}).volume;
    const auto model = init_params<double>(tiny_config(), 2);
    InferConfig ic;
    ic.selected_steps = 4;
    Degradation none;
    none.slices = {};
    const auto obs_a = make_observations<double>(degrade(vol, none));
    const auto obs_b = make_observations<double>(vol);
    const auto a = infer_latent(model, obs_a.coords, obs_a.intensities, ic);
    const auto b = infer_latent(model, obs_b.coords, obs_b.intensities, ic);
    EXPECT_TRUE(std::equal(a.latent.values().begin(), a.latent.values().end(), b.latent.values().begin()));
}

TEST(Resolution, ValuesDependOnlyOnCoordinate) {
    const auto model = init_params<double>(tiny_config(), 9);
    const T h = init_latent<double>(8, 0.1, 10);
    const T c({1, 4}, {0.25, 0.5, 0.75, 0.5});
    const auto single = predict(model, h, c);
    GridSpec g;
    g.counts = {5, 3, 5, 3};
    const auto grid = sample_grid(model, h, g);
    const std::size_t j = ((1 * 5 + 3) * 3 + 1) * 5 + 1;
    EXPECT_EQ(grid.intensity[j], single.intensity[0]);
}
