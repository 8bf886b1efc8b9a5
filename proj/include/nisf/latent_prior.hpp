// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Prior training: the network and one latent row per training subject are
// optimised jointly on the full training objective. Every visit to a subject
// draws one time frame uniformly and uses all of its observed voxels.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "nisf/batch.hpp"
#include "nisf/errors.hpp"
#include "nisf/field_model.hpp"
#include "nisf/latent_inference.hpp"
#include "nisf/objectives.hpp"
#include "nisf/optimizer.hpp"
#include "nisf/phantom.hpp"
#include "nisf/tensor.hpp"

namespace nisf {

/// Latent matrix H (one row per training subject) with an Adam state per row.
template <class Real>
struct LatentTable {
    std::size_t dim = 0;
    std::vector<std::string> ids;
    std::vector<Tensor<Real>> rows;
    std::vector<AdamState<Real>> states;
    std::unordered_map<std::string, std::size_t> index;

    /// Rows drawn i.i.d. from N(0, sigma^2).
    static LatentTable init(const std::vector<std::string>& subject_ids, std::size_t dim, std::uint64_t seed,
                            const AdamConfig& adam, double sigma = 0.1) {
        LatentTable t;
        t.dim = dim;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (const auto& id : subject_ids) {
            if (t.index.count(id)) throw ContractError("latent table: duplicate subject id " + id);
            std::vector<Real> v(dim);
            for (auto& x : v) x = static_cast<Real>(sigma * normal(rng));
            t.index.emplace(id, t.rows.size());
            t.ids.push_back(id);
            t.rows.emplace_back(Shape{dim}, std::move(v), true);
            t.states.push_back(AdamState<Real>{adam, 0, {}, {}});
        }
        return t;
    }

    std::size_t size() const { return rows.size(); }
    std::size_t row_of(const std::string& id) const {
        const auto it = index.find(id);
        if (it == index.end()) throw ContractError("latent table has no subject " + id);
        return it->second;
    }
};

struct TrainConfig {
    std::size_t epochs = 1;
    AdamConfig adam{};        // lr_prior lives in adam.lr
    double latent_lr = 0;     // Adam rate for latent rows; 0 reuses adam.lr
    LossWeights weights{};
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // epochs; 0 disables
    std::size_t points_per_step = 0;   // 0: the full frame

    void validate() const {
        if (epochs < 1) throw ContractError("train config: epochs must be >= 1");
        if (!(adam.lr > 0)) throw ContractError("train config: learning rate must be > 0");
        if (!(latent_lr >= 0)) throw ContractError("train config: latent_lr must be >= 0");
        weights.validate();
    }
};

template <class Real>
struct TrainState {
    FieldModel<Real> model;
    LatentTable<Real> latents;
    AdamState<Real> model_adam;
    std::size_t epochs_done = 0;
    std::size_t steps_done = 0;
};

struct TrainLogRow {
    std::size_t step = 0;
    std::size_t epoch = 0;
    std::string subject_id;
    std::size_t t = 0;
    LossReport loss;
    double wall_seconds = 0;

    static std::string csv_header() { return "step,epoch,subject_id,t," + LossReport::csv_header() + ",wall_time"; }
};

inline std::ostream& operator<<(std::ostream& os, const TrainLogRow& r) {
    os << r.step << ',' << r.epoch << ',' << r.subject_id << ',' << r.t << ',' << r.loss << ',' << r.wall_seconds;
    return os;
}

template <class Real>
TrainState<Real> make_train_state(const ModelConfig& model_config, const std::vector<std::string>& subject_ids,
                                  const TrainConfig& config, const InitOptions& init = {}) {
    TrainState<Real> st;
    st.model = init_params<Real>(model_config, config.seed, init);
    st.model.set_trainable(true);
    AdamConfig latent_adam = config.adam;
    if (config.latent_lr > 0) latent_adam.lr = config.latent_lr;
    st.latents = LatentTable<Real>::init(subject_ids, model_config.latent_dim, config.seed + 1, latent_adam);
    st.model_adam.config = config.adam;
    return st;
}

/// One joint update on a batch for latent row `row`.
template <class Real>
LossReport train_step(TrainState<Real>& st, std::size_t row, const PointBatch<Real>& batch, const LossWeights& weights) {
    st.model.set_trainable(true);
    Tape<Real> tape;
    typename Tape<Real>::Scope scope(tape);
    Tensor<Real>& latent = st.latents.rows.at(row);
    const Loss<Real> loss =
        train_loss(st.model, latent, batch.coords, batch.intensities, batch.labels_onehot, weights);
    if (!std::isfinite(loss.report.total)) throw NumericalError("non-finite training loss");
    tape.backward(loss.total);
    ParameterSet<Real> net = select_trainables(TrainMode::prior_training, st.model, latent);
    ParameterSet<Real> lat{net.back()};
    net.pop_back();
    adam_step(net, st.model_adam);
    adam_step(lat, st.latents.states[row]);
    st.model.reset_grads();
    latent.reset_grad();
    ++st.steps_done;
    return loss.report;
}

struct TrainHooks {
    std::function<void(const TrainLogRow&)> on_step;
    std::function<void(std::size_t epochs_done)> on_epoch_end;
};

/// Epoch-seeded generator: resuming at an epoch boundary replays the same
/// subject order and frame draws as an uninterrupted run.
inline std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x6e697366u};
    return std::mt19937_64(seq);
}

/// Runs epochs st.epochs_done .. config.epochs-1. Subject order is shuffled
/// per epoch; each visit samples one frame uniformly.
template <class Real>
std::vector<TrainLogRow> train_prior(TrainState<Real>& st, const std::vector<VolumeSample>& subjects,
                                     const TrainConfig& config, const TrainHooks& hooks = {}) {
    config.validate();
    if (subjects.empty()) throw ContractError("train_prior: no training subjects");
    const std::size_t cd = st.model.config().coord_dim, m = st.model.config().num_classes;
    std::vector<std::size_t> rows;
    for (const auto& s : subjects) rows.push_back(st.latents.row_of(s.subject_id));

    std::vector<TrainLogRow> log;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t epoch = st.epochs_done; epoch < config.epochs; ++epoch) {
        auto rng = epoch_rng(config.seed, epoch);
        std::vector<std::size_t> order(subjects.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t s : order) {
            const VolumeSample& subject = subjects[s];
            const std::size_t t = std::uniform_int_distribution<std::size_t>(0, subject.shape[3] - 1)(rng);
            PointBatch<Real> batch = make_batch<Real>(subject, t, cd, m);
            if (batch.size() == 0) continue;
            if (config.points_per_step > 0 && config.points_per_step < batch.size()) {
                std::vector<std::size_t> pick(batch.size());
                std::iota(pick.begin(), pick.end(), std::size_t{0});
                std::shuffle(pick.begin(), pick.end(), rng);
                pick.resize(config.points_per_step);
                std::sort(pick.begin(), pick.end());
                batch = gather_rows(batch, pick);
            }
            TrainLogRow row;
            row.step = st.steps_done;
            row.epoch = epoch;
            row.subject_id = subject.subject_id;
            row.t = t;
            try {
                row.loss = train_step(st, rows[s], batch, config.weights);
            } catch (const NumericalError& e) {
                throw NumericalError("training diverged at step " + std::to_string(row.step) + ", subject " +
                                     subject.subject_id + ", frame " + std::to_string(t) + ": " + e.what());
            }
            row.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (hooks.on_step) hooks.on_step(row);
            log.push_back(std::move(row));
        }
        st.epochs_done = epoch + 1;
        if (hooks.on_epoch_end) hooks.on_epoch_end(st.epochs_done);
    }
    return log;
}

/// Validation subject: observations to fit on plus full ground truth.
template <class Real>
struct ValidationCase {
    std::string subject_id;
    PointBatch<Real> observations;
    AnalysisTruth<Real> truth;
};

template <class Real>
ValidationCase<Real> make_validation_case(const VolumeSample& vol, std::size_t coord_dim, std::size_t num_classes) {
    ValidationCase<Real> c;
    c.subject_id = vol.subject_id;
    c.observations = make_observations<Real>(vol, coord_dim, num_classes);
    PointBatch<Real> full = make_full_grid<Real>(vol, coord_dim, num_classes);
    c.truth.coords = full.coords;
    c.truth.labels = full.labels;
    return c;
}

struct ValidationResult {
    std::vector<InferenceTrace> curves;  // one per subject, steps 0..max_steps
    std::vector<std::size_t> steps;
    std::vector<double> mean_dice;
    std::size_t selected_steps = 0;
};

/// Runs latent inference to config.max_steps on every validation subject and
/// records Dice against the step count.
template <class Real>
ValidationResult validate_prior(const FieldModel<Real>& model, const std::vector<ValidationCase<Real>>& cases,
                                const InferConfig& config) {
    if (cases.empty()) throw ContractError("validate_prior: no validation subjects");
    InferConfig run = config;
    run.selected_steps = config.max_steps;
    ValidationResult out;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        run.seed = subject_seed(config.seed, c.subject_id);
        out.curves.push_back(
            infer_latent(model, c.observations.coords, c.observations.intensities, run, &c.truth).trace);
    }
    out.steps = out.curves.front().steps();
    out.mean_dice = mean_dice_curve(out.curves);
    out.selected_steps = select_early_stop_steps(out.curves);
    return out;
}

}  // namespace nisf
