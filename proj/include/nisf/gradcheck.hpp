// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite-difference checks of the reverse-mode gradients, in double
// precision. Relative error is |analytic - numeric| / max(|analytic|,
// |numeric|, floor); the floor keeps near-zero gradients from dividing by
// round-off.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nisf/field_model.hpp"
#include "nisf/objectives.hpp"
#include "nisf/tensor.hpp"

namespace nisf {

struct GradcheckOptions {
    double step = 1e-5;
    double tolerance = 1e-6;
    double floor = 1e-3;
};

struct GradcheckResult {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0;
    double max_abs_error = 0;
    std::string worst;  // "<input>[<index>]"
    double tolerance = 0;

    bool pass() const { return checked > 0 && max_rel_error <= tolerance; }
};

using LossFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares d loss / d inputs against central differences for every scalar of
/// every input. `loss` must build its graph from the tensors it is handed.
inline GradcheckResult gradcheck(const std::string& name, const LossFn& loss, std::vector<Tensor<double>> inputs,
                                 const GradcheckOptions& opt = {}, const std::vector<std::string>& input_names = {}) {
    for (auto& t : inputs) t = t.detach(true);
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        Tape<double>::Scope scope(tape);
        const Tensor<double> l = loss(inputs);
        tape.backward(l);
        for (const auto& t : inputs) {
            const auto g = t.grad();
            analytic.emplace_back(t.numel(), 0.0);
            std::copy(g.begin(), g.end(), analytic.back().begin());
        }
    }
    GradcheckResult r;
    r.name = name;
    r.tolerance = opt.tolerance;
    Tape<double>::Scope off(nullptr);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto values = inputs[k].mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double x0 = values[i];
            values[i] = x0 + opt.step;
            const double fp = loss(inputs).item();
            values[i] = x0 - opt.step;
            const double fm = loss(inputs).item();
            values[i] = x0;
            const double numeric = (fp - fm) / (2.0 * opt.step);
            const double rel = relative_error(analytic[k][i], numeric, opt.floor);
            r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[k][i] - numeric));
            if (rel > r.max_rel_error || r.checked == 0) {
                r.max_rel_error = std::max(r.max_rel_error, rel);
                r.worst = (k < input_names.size() ? input_names[k] : "input" + std::to_string(k)) + "[" +
                          std::to_string(i) + "]";
            }
            ++r.checked;
        }
    }
    return r;
}

/// Tiny configuration used by the end-to-end check.
inline ModelConfig gradcheck_model_config() {
    ModelConfig c;
    c.coord_dim = 4;
    c.latent_dim = 4;
    c.hidden_width = 8;
    c.num_residual_layers = 2;
    c.num_classes = 4;
    return c;
}

/// Full training objective with respect to every network parameter and the
/// latent, on random coordinates, intensities and labels.
inline GradcheckResult gradcheck_train_loss(std::uint64_t seed, std::size_t batch = 6,
                                            const GradcheckOptions& opt = {1e-5, 1e-4, 1e-3}) {
    const ModelConfig mc = gradcheck_model_config();
    InitOptions init;
    init.coord_scale = 1.0;
    FieldModel<double> model = init_params<double>(mc, seed, init);
    std::mt19937_64 rng(seed ^ 0xa5a5a5a5ull);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 0.1);
    std::vector<double> c(batch * mc.coord_dim), it(batch), oh(batch * mc.num_classes, 0.0), h(mc.latent_dim);
    for (auto& v : c) v = u(rng);
    for (auto& v : it) v = u(rng);
    for (std::size_t r = 0; r < batch; ++r) oh[r * mc.num_classes + (r % mc.num_classes)] = 1.0;
    for (auto& v : h) v = n(rng);
    const Tensor<double> coords({batch, mc.coord_dim}, c), targets({batch, 1}, it), seg({batch, mc.num_classes}, oh);

    std::vector<Tensor<double>> inputs = model.parameters();
    std::vector<std::string> names = model.parameter_names();
    inputs.emplace_back(Shape{mc.latent_dim}, h);
    names.emplace_back("latent");
    const LossWeights weights{};
    LossFn fn = [&](const std::vector<Tensor<double>>& in) {
        FieldModel<double> m = model;
        for (std::size_t i = 0; i + 1 < in.size(); ++i) m.parameters()[i] = in[i];
        return train_loss(m, in.back(), coords, targets, seg, weights).total;
    };
    return gradcheck("train_loss", fn, inputs, opt, names);
}

/// Per-operation checks on random inputs.
inline std::vector<GradcheckResult> gradcheck_ops(std::uint64_t seed, const GradcheckOptions& opt = {}) {
    std::mt19937_64 rng(seed);
    auto rand = [&rng](Shape s, double lo = -1.0, double hi = 1.0) {
        std::uniform_real_distribution<double> u(lo, hi);
        std::vector<double> v(shape_numel(s));
        for (auto& x : v) x = u(rng);
        return Tensor<double>(std::move(s), std::move(v));
    };
    // Fixed random weights turn a tensor output into a scalar without
    // symmetries that could hide a transposed gradient.
    auto project = [](const Tensor<double>& y) {
        std::mt19937_64 local(y.numel() * 7919u);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> w(y.numel());
        for (auto& x : w) x = u(local);
        return sum(y * Tensor<double>(y.shape(), std::move(w)));
    };
    std::vector<GradcheckResult> out;
    auto run = [&](const std::string& name, LossFn fn, std::vector<Tensor<double>> in) {
        out.push_back(gradcheck(name, fn, std::move(in), opt));
    };
    run("matmul", [&](const auto& v) { return project(matmul(v[0], v[1])); }, {rand({3, 4}), rand({4, 5})});
    run("affine", [&](const auto& v) { return project(affine(v[0], v[1], v[2])); },
        {rand({5, 3}), rand({3, 4}), rand({4})});
    run("add_rows", [&](const auto& v) { return project(add_rows(v[0], v[1])); }, {rand({3, 4}), rand({1, 4})});
    run("add", [&](const auto& v) { return project(v[0] + v[1]); }, {rand({2, 3}), rand({2, 3})});
    run("sub", [&](const auto& v) { return project(v[0] - v[1]); }, {rand({2, 3}), rand({2, 3})});
    run("mul", [&](const auto& v) { return project(v[0] * v[1]); }, {rand({2, 3}), rand({2, 3})});
    run("div", [&](const auto& v) { return project(v[0] / v[1]); }, {rand({2, 3}), rand({2, 3}, 0.5, 2.0)});
    run("scale_shift", [&](const auto& v) { return project(shift(scale(v[0], 1.7), -0.3)); }, {rand({4})});
    run("exp", [&](const auto& v) { return project(exp(v[0])); }, {rand({6})});
    run("cos", [&](const auto& v) { return project(cos(v[0])); }, {rand({6}, -3.0, 3.0)});
    run("square", [&](const auto& v) { return project(square(v[0])); }, {rand({6})});
    run("sigmoid", [&](const auto& v) { return project(sigmoid(v[0])); }, {rand({6}, -4.0, 4.0)});
    run("log", [&](const auto& v) { return project(log(v[0])); }, {rand({6}, 0.1, 2.0)});
    run("softmax", [&](const auto& v) { return project(softmax(v[0])); }, {rand({3, 4}, -2.0, 2.0)});
    run("sum_mean", [&](const auto& v) { return sum(v[0]) + scale(mean(square(v[0])), 3.0); }, {rand({2, 5})});
    run("sum_rows", [&](const auto& v) { return project(sum_rows(v[0])); }, {rand({4, 3})});
    run("reshape", [&](const auto& v) { return project(reshape(square(v[0]), {3, 2})); }, {rand({2, 3})});
    run("gabor", [&](const auto& v) { return project(gabor_activation(v[0], 10.0, 5.0)); }, {rand({8}, -0.4, 0.4)});
    {
        const Tensor<double> target = rand({5, 1}, 0.0, 1.0);
        run("bce", [&, target](const auto& v) { return bce(v[0], target); }, {rand({5, 1}, 0.05, 0.95)});
    }
    {
        std::vector<double> oh(6 * 4, 0.0);
        for (std::size_t r = 0; r < 6; ++r) oh[r * 4 + (r * 3 + 1) % 4] = 1.0;
        const Tensor<double> target({6, 4}, oh);
        run("dice_loss", [&, target](const auto& v) { return dice_loss(softmax(v[0]), target); },
            {rand({6, 4}, -2.0, 2.0)});
    }
    return out;
}

}  // namespace nisf
