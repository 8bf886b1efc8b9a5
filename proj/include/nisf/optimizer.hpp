// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nisf/errors.hpp"
#include "nisf/field_model.hpp"
#include "nisf/tensor.hpp"

namespace nisf {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// A named handle to a trainable tensor. Updates through the handle land in
/// the owning model or latent table.
template <class Real>
struct NamedParameter {
    std::string name;
    Tensor<Real> tensor;
};

template <class Real>
using ParameterSet = std::vector<NamedParameter<Real>>;

/// Moment estimates for one parameter group. Moments are allocated lazily on
/// the first step to match the group's shapes.
template <class Real>
struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<Real>> m;
    std::vector<std::vector<Real>> v;
};

/// One bias-corrected Adam update. Missing gradients count as zero; gradients
/// are left in place for the caller to reset.
template <class Real>
void adam_step(ParameterSet<Real>& params, AdamState<Real>& state) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor.numel(), Real(0));
            state.v.emplace_back(p.tensor.numel(), Real(0));
        }
    }
    if (state.m.size() != params.size()) {
        throw ContractError("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                            " groups, parameter set has " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].tensor.numel())
            throw ContractError("adam_step: state shape mismatch for " + params[i].name);
        for (Real g : params[i].tensor.grad()) {
            if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + params[i].name);
        }
    }

    ++state.step;
    const AdamConfig& c = state.config;
    const double t = static_cast<double>(state.step);
    const Real b1 = static_cast<Real>(c.beta1);
    const Real b2 = static_cast<Real>(c.beta2);
    const Real corr1 = static_cast<Real>(1.0 - std::pow(c.beta1, t));
    const Real corr2 = static_cast<Real>(1.0 - std::pow(c.beta2, t));
    const Real lr = static_cast<Real>(c.lr);
    const Real eps = static_cast<Real>(c.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].tensor.mutable_values();
        const auto grad = params[i].tensor.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const Real g = grad.empty() ? Real(0) : grad[j];
            m[j] = b1 * m[j] + (Real(1) - b1) * g;
            v[j] = b2 * v[j] + (Real(1) - b2) * g * g;
            const Real m_hat = m[j] / corr1;
            const Real v_hat = v[j] / corr2;
            values[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

enum class TrainMode { prior_training, inference };

/// Prior training optimises the network and the subject latent; inference
/// optimises the latent alone.
template <class Real>
ParameterSet<Real> select_trainables(TrainMode mode, const FieldModel<Real>& model, const Tensor<Real>& latent) {
    ParameterSet<Real> set;
    if (mode == TrainMode::prior_training) {
        const auto& names = model.parameter_names();
        const auto& params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) set.push_back({names[i], params[i]});
    }
    set.push_back({"latent", latent});
    return set;
}

template <class Real>
std::size_t parameter_set_size(const ParameterSet<Real>& set) {
    std::size_t n = 0;
    for (const auto& p : set) n += p.tensor.numel();
    return n;
}

}  // namespace nisf
