// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Auto-decoder inference: fit a fresh latent code to an unseen subject's
// intensities with the network frozen, then read segmentations off the
// segmentation head.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <random>
#include <string>
#include <vector>

#include "nisf/batch.hpp"
#include "nisf/errors.hpp"
#include "nisf/field_model.hpp"
#include "nisf/metrics.hpp"
#include "nisf/objectives.hpp"
#include "nisf/optimizer.hpp"
#include "nisf/parallel.hpp"
#include "nisf/tensor.hpp"

namespace nisf {

struct InferConfig {
    std::size_t max_steps = 1000;
    std::size_t selected_steps = 672;
    double lr_infer = 1e-4;
    double lambda_latent = 1e-4;
    double init_sigma = 1e-2;  // h ~ N(0, init_sigma^2)
    std::uint64_t seed = 0;
    std::size_t record_cadence = 25;
    std::size_t points_per_step = 0;  // 0: every observation each step
    std::size_t threads = 1;          // prediction fan-out

    void validate() const {
        if (selected_steps > max_steps) throw ContractError("infer config: selected_steps exceeds max_steps");
        if (record_cadence < 1) throw ContractError("infer config: record_cadence must be >= 1");
        if (!(lr_infer > 0) || lambda_latent < 0 || !(init_sigma >= 0))
            throw ContractError("infer config: invalid learning rate, lambda or init sigma");
    }
};

struct TraceRow {
    std::size_t step = 0;
    double recon_loss = 0;  // reconstruction BCE over all observations
    double total_loss = 0;
    double latent_norm = 0;
    std::vector<double> dice;  // foreground classes; empty without ground truth
    double mean_dice = std::numeric_limits<double>::quiet_NaN();
};

struct InferenceTrace {
    std::vector<TraceRow> rows;

    std::vector<std::size_t> steps() const {
        std::vector<std::size_t> s;
        for (const auto& r : rows) s.push_back(r.step);
        return s;
    }
    std::vector<double> mean_dice() const {
        std::vector<double> d;
        for (const auto& r : rows) d.push_back(r.mean_dice);
        return d;
    }
};

template <class Real>
struct InferenceResult {
    Tensor<Real> latent;
    InferenceTrace trace;
};

template <class Real>
struct Prediction {
    std::vector<std::uint8_t> labels;
    std::vector<Real> probs;      // [B x M] row-major
    std::vector<Real> intensity;  // [B]
    std::size_t out_of_range_points = 0;
};

/// Frozen evaluation of both heads, chunked over rows. Rows never interact,
/// so the result does not depend on chunking or thread count.
template <class Real>
Prediction<Real> predict(const FieldModel<Real>& model, const Tensor<Real>& latent, const Tensor<Real>& coords,
                         std::size_t threads = 1, std::size_t chunk = 8192) {
    const std::size_t n = coords.dim(0), cd = coords.dim(1), m = model.config().num_classes;
    Prediction<Real> p;
    p.labels.resize(n);
    p.probs.resize(n * m);
    p.intensity.resize(n);
    const std::size_t chunks = (n + chunk - 1) / chunk;
    std::vector<std::size_t> oor(chunks, 0);
    const Tensor<Real> h = latent.detach();
    parallel_for(chunks, threads, [&](std::size_t c) {
        typename Tape<Real>::Scope no_tape(nullptr);
        const std::size_t begin = c * chunk, end = std::min(n, begin + chunk);
        const auto cv = coords.values();
        Tensor<Real> sub({end - begin, cd}, std::vector<Real>(cv.begin() + begin * cd, cv.begin() + end * cd));
        const FieldOutput<Real> out = model.forward(sub, h);
        oor[c] = out.out_of_range_points;
        const auto pv = out.seg_probs.values();
        const auto iv = out.intensity.values();
        for (std::size_t r = 0; r < end - begin; ++r) {
            const Real* row = pv.data() + r * m;
            p.labels[begin + r] = static_cast<std::uint8_t>(std::max_element(row, row + m) - row);
            std::copy(row, row + m, p.probs.begin() + (begin + r) * m);
            p.intensity[begin + r] = iv[r];
        }
    });
    for (std::size_t v : oor) p.out_of_range_points += v;
    return p;
}

/// Labels are the argmax over classes (lowest class on ties).
template <class Real>
Prediction<Real> decode_segmentation(const FieldModel<Real>& model, const Tensor<Real>& latent,
                                     const Tensor<Real>& coords, std::size_t threads = 1) {
    return predict(model, latent, coords, threads);
}

/// Per-subject seed: depends on the subject id, never on its position in a list.
inline std::uint64_t subject_seed(std::uint64_t base, const std::string& subject_id) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : subject_id) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return base ^ h;
}

template <class Real>
Tensor<Real> init_latent(std::size_t dim, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Real> v(dim);
    for (auto& x : v) x = static_cast<Real>(sigma * normal(rng));
    return Tensor<Real>({dim}, std::move(v), true);
}

/// Ground truth used only to annotate the trace with Dice.
template <class Real>
struct AnalysisTruth {
    Tensor<Real> coords;
    std::vector<std::uint8_t> labels;
};

namespace detail {

inline void require_unit_coords(std::span<const double> v) {
    for (double c : v) {
        if (!(c >= 0.0 && c <= 1.0)) throw ContractError("observation coordinates must lie in [0, 1]");
    }
}
inline void require_unit_coords(std::span<const float> v) {
    for (float c : v) {
        if (!(c >= 0.0f && c <= 1.0f)) throw ContractError("observation coordinates must lie in [0, 1]");
    }
}

}  // namespace detail

/// Fits a new latent by minimising the reconstruction objective for exactly
/// config.selected_steps Adam steps. The network is never modified.
template <class Real>
InferenceResult<Real> infer_latent(const FieldModel<Real>& model, const Tensor<Real>& obs_coords,
                                   const Tensor<Real>& obs_intensity, const InferConfig& config,
                                   const AnalysisTruth<Real>* truth = nullptr) {
    config.validate();
    if (!obs_coords.defined() || obs_coords.numel() == 0) throw ContractError("infer_latent: no observations");
    if (obs_coords.rank() != 2 || obs_coords.dim(1) != model.config().coord_dim) {
        throw DimensionError("infer_latent: observation coords " + shape_str(obs_coords.shape()) +
                             " do not match the model's " + std::to_string(model.config().coord_dim) +
                             "-D coordinates");
    }
    detail::require_unit_coords(obs_coords.values());

    const FieldModel<Real> frozen = model.frozen_copy();
    const std::size_t d = model.config().latent_dim, n_obs = obs_coords.dim(0);
    InferenceResult<Real> result;
    result.latent = init_latent<Real>(d, config.init_sigma, config.seed);
    ParameterSet<Real> trainables = select_trainables(TrainMode::inference, frozen, result.latent);
    AdamState<Real> adam;
    adam.config.lr = config.lr_infer;
    const LossWeights weights{1.0, 0.0, config.lambda_latent};
    std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dull);

    auto record = [&](std::size_t step) {
        TraceRow row;
        row.step = step;
        typename Tape<Real>::Scope no_tape(nullptr);
        const Tensor<Real> h = result.latent.detach();
        const Loss<Real> full = infer_loss(frozen, h, obs_coords, obs_intensity, weights);
        row.recon_loss = full.report.bce_recon;
        row.total_loss = full.report.total;
        if (!std::isfinite(row.total_loss)) throw NumericalError("infer_latent: non-finite loss at step " + std::to_string(step));
        double norm = 0;
        for (Real v : h.values()) norm += static_cast<double>(v) * static_cast<double>(v);
        row.latent_norm = std::sqrt(norm);
        if (truth != nullptr) {
            const Prediction<Real> p = predict(frozen, h, truth->coords, config.threads);
            const DiceReport r = dice_report(p.labels, truth->labels, model.config().num_classes);
            row.dice = r.per_class;
            row.mean_dice = r.mean;
        }
        result.trace.rows.push_back(std::move(row));
    };

    const bool subsample = config.points_per_step > 0 && config.points_per_step < n_obs;
    std::vector<std::size_t> order;
    if (subsample) {
        order.resize(n_obs);
        std::iota(order.begin(), order.end(), std::size_t{0});
    }
    const std::size_t cd = obs_coords.dim(1);
    for (std::size_t step = 0; step < config.selected_steps; ++step) {
        if (step % config.record_cadence == 0) record(step);
        Tensor<Real> coords = obs_coords, targets = obs_intensity;
        if (subsample) {
            // Partial Fisher-Yates: the first points_per_step entries are a uniform draw.
            for (std::size_t i = 0; i < config.points_per_step; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, n_obs - 1);
                std::swap(order[i], order[pick(rng)]);
            }
            std::vector<Real> c, t;
            c.reserve(config.points_per_step * cd);
            t.reserve(config.points_per_step);
            const auto cv = obs_coords.values();
            const auto tv = obs_intensity.values();
            for (std::size_t i = 0; i < config.points_per_step; ++i) {
                const std::size_t r = order[i];
                c.insert(c.end(), cv.begin() + r * cd, cv.begin() + (r + 1) * cd);
                t.push_back(tv[r]);
            }
            coords = Tensor<Real>({config.points_per_step, cd}, std::move(c));
            targets = Tensor<Real>({config.points_per_step, 1}, std::move(t));
        }
        Tape<Real> tape;
        typename Tape<Real>::Scope scope(tape);
        const Loss<Real> loss = infer_loss(frozen, result.latent, coords, targets, weights);
        tape.backward(loss.total);
        require_frozen_gradients(frozen);
        adam_step(trainables, adam);
        result.latent.reset_grad();
    }
    record(config.selected_steps);
    result.latent = result.latent.detach();
    return result;
}

/// Validation-selected stopping step: argmax of the mean Dice curve, earliest
/// step on ties.
inline std::size_t select_early_stop_steps(const std::vector<InferenceTrace>& curves) {
    if (curves.empty()) throw ContractError("select_early_stop_steps: no validation curves");
    const std::vector<std::size_t> grid = curves.front().steps();
    if (grid.empty()) throw ContractError("select_early_stop_steps: empty curve");
    std::vector<double> mean(grid.size(), 0.0);
    for (const auto& c : curves) {
        if (c.steps() != grid) throw ContractError("select_early_stop_steps: curves use different step grids");
        const auto d = c.mean_dice();
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (std::isnan(d[i])) throw ContractError("select_early_stop_steps: curve lacks Dice values");
            mean[i] += d[i] / static_cast<double>(curves.size());
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < mean.size(); ++i) {
        if (mean[i] > mean[best]) best = i;
    }
    return grid[best];
}

/// Mean of several Dice curves on a shared step grid.
inline std::vector<double> mean_dice_curve(const std::vector<InferenceTrace>& curves) {
    if (curves.empty()) throw ContractError("mean_dice_curve: no curves");
    std::vector<double> mean(curves.front().rows.size(), 0.0);
    for (const auto& c : curves) {
        const auto d = c.mean_dice();
        if (d.size() != mean.size()) throw ContractError("mean_dice_curve: curves differ in length");
        for (std::size_t i = 0; i < d.size(); ++i) mean[i] += d[i] / static_cast<double>(curves.size());
    }
    return mean;
}

}  // namespace nisf
