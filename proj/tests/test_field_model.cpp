// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "nisf/field_model.hpp"
#include "nisf/gradcheck.hpp"

using namespace nisf;
using T = Tensor<double>;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.latent_dim = 8;
    c.hidden_width = 16;
    c.num_residual_layers = 3;
    return c;
}

T random_coords(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(n * dim);
    for (auto& x : v) x = u(rng);
    return T({n, dim}, v);
}

T random_latent(std::size_t d, std::uint64_t seed, double sigma = 0.1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    std::vector<double> v(d);
    for (auto& x : v) x = n(rng);
    return T({d}, v);
}

}  // namespace

TEST(Gabor, OneAtZero) {
    for (double w : {1.0, 10.0, 30.0})
        for (double s : {0.5, 5.0}) EXPECT_EQ(gabor_activation(T::scalar(0.0), w, s).item(), 1.0);
}

TEST(Gabor, EnvelopeDecays) {
    const double s0 = 5.0;
    EXPECT_LT(std::abs(gabor_activation(T::scalar(10.0 / s0), 10.0, s0).item()), 1e-40);
    EXPECT_LT(std::abs(gabor_activation(T::scalar(1e6), 10.0, s0).item()), 1e-300);
}

TEST(Gabor, MatchesClosedForm) {
    for (double x = -0.6; x <= 0.6; x += 0.01) {
        const double ref = std::cos(10.0 * x) * std::exp(-25.0 * x * x);
        EXPECT_NEAR(gabor_activation(T::scalar(x), 10.0, 5.0).item(), ref, 1e-15);
    }
}

TEST(Gabor, DerivativeAtHalf) {
    const LossFn fn = [](const std::vector<T>& v) { return gabor_activation(v[0], 10.0, 5.0); };
    EXPECT_LE(gradcheck("gabor", fn, {T::scalar(0.5)}).max_rel_error, 1e-6);
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    const T x = T::scalar(0.5, true);
    tape.backward(gabor_activation(x, 10.0, 5.0));
    const double env = std::exp(-25.0 * 0.25);
    const double ref = -10.0 * std::sin(5.0) * env - 50.0 * 0.5 * std::cos(5.0) * env;
    EXPECT_NEAR(x.grad()[0], ref, 1e-14);
}

TEST(Config, RejectsInvalid) {
    ModelConfig c;
    c.num_classes = 1;
    EXPECT_THROW(c.validate(), ContractError);
    c = ModelConfig{};
    c.hidden_width = 0;
    EXPECT_THROW(FieldModel<double>{c}, ContractError);
    c = ModelConfig{};
    c.gabor_s0 = 0;
    EXPECT_THROW(c.validate(), ContractError);
}

TEST(Config, ParameterCountMatchesHandCount) {
    const ModelConfig c = gradcheck_model_config();
    // input 4*8 + 4*8 + 8, two blocks of 2*(64+8), heads 8*4+4 and 8+1
    EXPECT_EQ(c.parameter_count(), 72u + 288u + 36u + 9u);
    EXPECT_EQ(FieldModel<double>(c).parameter_count(), c.parameter_count());
    EXPECT_EQ(FieldModel<double>(ModelConfig{}).parameter_count(), ModelConfig{}.parameter_count());
}

TEST(Forward, ShapesAndProbabilities) {
    const ModelConfig c = small_config();
    const auto model = init_params<double>(c, 1);
    const auto out = model.forward(random_coords(257, 4, 2), random_latent(8, 3));
    EXPECT_EQ(out.seg_probs.shape(), (Shape{257, 4}));
    EXPECT_EQ(out.intensity.shape(), (Shape{257, 1}));
    for (std::size_t r = 0; r < 257; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += out.seg_probs.at(r, k);
        EXPECT_NEAR(s, 1.0, 1e-9);
        EXPECT_GT(out.intensity[r], 0.0);
        EXPECT_LT(out.intensity[r], 1.0);
    }
    EXPECT_EQ(out.out_of_range_points, 0u);
}

TEST(Forward, RejectsBadShapes) {
    const auto model = init_params<double>(small_config(), 1);
    EXPECT_THROW(model.forward(random_coords(4, 3, 1), random_latent(8, 1)), DimensionError);
    EXPECT_THROW(model.forward(random_coords(4, 4, 1), random_latent(7, 1)), DimensionError);
}

TEST(Forward, CountsOutOfRangeCoordinates) {
    const auto model = init_params<double>(small_config(), 1);
    const T c({3, 4}, {0.5, 0.5, 0.5, 0.5, 1.5, 0.5, 0.5, 0.5, -0.1, 2.0, 0.5, 0.5});
    EXPECT_EQ(model.forward(c, random_latent(8, 1)).out_of_range_points, 2u);
}

TEST(Forward, ZeroHeadsGiveUniformProbabilitiesAndHalfIntensity) {
    InitOptions opt;
    opt.head_gain = 0;
    const auto model = init_params<double>(small_config(), 4, opt);
    const auto out = model.forward(random_coords(50, 4, 5), random_latent(8, 6));
    for (std::size_t i = 0; i < out.seg_probs.numel(); ++i) EXPECT_EQ(out.seg_probs[i], 0.25);
    for (std::size_t i = 0; i < out.intensity.numel(); ++i) EXPECT_EQ(out.intensity[i], 0.5);
}

TEST(Forward, PointwiseIndependence) {
    const ModelConfig c = small_config();
    const auto model = init_params<double>(c, 7);
    const T coords = random_coords(37, 4, 8);
    const T h = random_latent(8, 9);
    const auto batch = model.forward(coords, h);
    for (std::size_t r = 0; r < 37; ++r) {
        const T one({1, 4}, {coords.at(r, 0), coords.at(r, 1), coords.at(r, 2), coords.at(r, 3)});
        const auto single = model.forward(one, h);
        for (std::size_t k = 0; k < 4; ++k) ASSERT_EQ(single.seg_probs[k], batch.seg_probs.at(r, k));
        ASSERT_EQ(single.intensity[0], batch.intensity[r]);
    }
}

TEST(Forward, PermutedBatchGivesPermutedOutputs) {
    const auto model = init_params<double>(small_config(), 7);
    const T coords = random_coords(20, 4, 10);
    std::vector<std::size_t> perm(20);
    for (std::size_t i = 0; i < 20; ++i) perm[i] = (i * 7 + 3) % 20;
    std::vector<double> pv;
    for (std::size_t i : perm)
        for (std::size_t a = 0; a < 4; ++a) pv.push_back(coords.at(i, a));
    const T h = random_latent(8, 11);
    const auto a = model.forward(coords, h);
    const auto b = model.forward(T({20, 4}, pv), h);
    for (std::size_t i = 0; i < 20; ++i) {
        ASSERT_EQ(b.intensity[i], a.intensity[perm[i]]);
        for (std::size_t k = 0; k < 4; ++k) ASSERT_EQ(b.seg_probs.at(i, k), a.seg_probs.at(perm[i], k));
    }
}

TEST(Forward, SharedAndPerRowLatentAgree) {
    const auto model = init_params<double>(small_config(), 12);
    const T coords = random_coords(9, 4, 13);
    const T h = random_latent(8, 14);
    std::vector<double> rows;
    for (int r = 0; r < 9; ++r) rows.insert(rows.end(), h.values().begin(), h.values().end());
    const auto a = model.forward(coords, h);
    const auto b = model.forward(coords, T({9, 8}, rows));
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(a.intensity[i], b.intensity[i], 1e-14);
}

TEST(Init, SameSeedIsBitIdentical) {
    const auto a = init_params<double>(small_config(), 42);
    const auto b = init_params<double>(small_config(), 42);
    EXPECT_EQ(a.checksum(), b.checksum());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        const auto va = a.parameters()[i].values(), vb = b.parameters()[i].values();
        EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
    }
}

TEST(Init, DifferentSeedsDiffer) {
    EXPECT_NE(init_params<double>(small_config(), 1).checksum(), init_params<double>(small_config(), 2).checksum());
}

TEST(Init, TrunkActivationScale) {
    for (const ModelConfig& c : {ModelConfig{}, small_config()}) {
        const auto model = init_params<double>(c, 3);
        const auto out = model.forward(random_coords(1024, 4, 4), random_latent(c.latent_dim, 5));
        const auto v = out.trunk.values();
        double mean = 0, sq = 0;
        for (double x : v) mean += x / static_cast<double>(v.size());
        for (double x : v) sq += (x - mean) * (x - mean) / static_cast<double>(v.size());
        const double sd = std::sqrt(sq);
        EXPECT_GE(sd, 0.1);
        EXPECT_LE(sd, 2.0);
    }
}

TEST(Model, FrozenCopyIsIndependent) {
    auto model = init_params<double>(small_config(), 3);
    model.set_trainable(true);
    const auto frozen = model.frozen_copy();
    EXPECT_FALSE(frozen.trainable());
    EXPECT_TRUE(model.trainable());
    model.parameters()[0].mutable_values()[0] += 1.0;
    EXPECT_NE(model.checksum(), frozen.checksum());
}

TEST(Model, FullLossGradientMatchesFiniteDifferences) {
    const auto r = gradcheck_train_loss(21);
    EXPECT_EQ(r.checked, gradcheck_model_config().parameter_count() + 4);
    EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}
