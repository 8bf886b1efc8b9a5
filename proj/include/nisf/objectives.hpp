// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training objective (joint segmentation + reconstruction) and inference
// objective (reconstruction only, latent regulariser).
//
//   train = bce_seg + dice_seg + alpha * bce_recon + lambda_params * |theta|^2 + lambda_latent * |h|^2
//   infer = bce_recon + lambda_latent * |h|^2
//
// Class 0 is background. Dice is averaged over the foreground classes only.

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "nisf/errors.hpp"
#include "nisf/field_model.hpp"
#include "nisf/tensor.hpp"

namespace nisf {

inline constexpr double kDiceSmoothing = 1e-6;

struct LossWeights {
    double alpha = 10.0;
    double lambda_params = 1e-6;
    double lambda_latent = 1e-4;

    void validate() const {
        if (alpha < 0 || lambda_params < 0 || lambda_latent < 0)
            throw ContractError("loss weights must be non-negative");
    }
};

/// Unweighted loss components plus the weights used to combine them.
/// l2_params and l2_latent are squared norms.
struct LossReport {
    double total = 0;
    double bce_seg = 0;
    double dice_seg = 0;
    double bce_recon = 0;
    double l2_params = 0;
    double l2_latent = 0;
    LossWeights weights;

    double recombined() const {
        return bce_seg + dice_seg + weights.alpha * bce_recon + weights.lambda_params * l2_params +
               weights.lambda_latent * l2_latent;
    }

    static std::string csv_header() { return "total,bce_seg,dice_seg,bce_recon,l2_params,l2_latent"; }
};

inline std::ostream& operator<<(std::ostream& os, const LossReport& r) {
    const auto old = os.precision(17);
    os << r.total << ',' << r.bce_seg << ',' << r.dice_seg << ',' << r.bce_recon << ',' << r.l2_params << ','
       << r.l2_latent;
    os.precision(old);
    return os;
}

template <class Real>
struct Loss {
    Tensor<Real> total;
    LossReport report;
};

/// Mean binary cross-entropy over all elements.
template <class Real>
Tensor<Real> bce(const Tensor<Real>& pred, const Tensor<Real>& target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("bce: prediction " + shape_str(pred.shape()) + " vs target " +
                             shape_str(target.shape()));
    }
    const Tensor<Real> one_minus_t = Real(1) - target;
    const Tensor<Real> ll = target * log(pred) + one_minus_t * log(Real(1) - pred);
    return -mean(ll);
}

template <class Real>
void require_one_hot(const Tensor<Real>& t) {
    if (t.rank() != 2) throw ContractError("one-hot target must be [B x M], got " + shape_str(t.shape()));
    const std::size_t m = t.dim(1);
    const auto v = t.values();
    for (std::size_t r = 0; r < t.dim(0); ++r) {
        int ones = 0;
        for (std::size_t k = 0; k < m; ++k) {
            const Real x = v[r * m + k];
            if (x == Real(1)) {
                ++ones;
            } else if (x != Real(0)) {
                ones = -1;
                break;
            }
        }
        if (ones != 1) throw ContractError("target row " + std::to_string(r) + " is not one-hot");
    }
}

/// Soft Dice loss: 1 - mean over classes 1..M-1 of (2 sum p t + eps) / (sum p + sum t + eps).
template <class Real>
Tensor<Real> dice_loss(const Tensor<Real>& probs, const Tensor<Real>& target_onehot) {
    if (probs.shape() != target_onehot.shape()) {
        throw DimensionError("dice_loss: prediction " + shape_str(probs.shape()) + " vs target " +
                             shape_str(target_onehot.shape()));
    }
    require_one_hot(target_onehot);
    if (probs.dim(0) < 1) throw ContractError("dice_loss: empty batch");
    const std::size_t m = probs.dim(1);
    if (m < 2) throw DimensionError("dice_loss: need at least one foreground class");
    const Real eps = static_cast<Real>(kDiceSmoothing);

    const Tensor<Real> target_sum = sum_rows(target_onehot);  // constant
    const Tensor<Real> inter = sum_rows(probs * target_onehot);
    const Tensor<Real> pred_sum = sum_rows(probs);
    const Tensor<Real> score = shift(scale(inter, Real(2)), eps) / shift(pred_sum + target_sum, eps);
    std::vector<Real> mask(m, Real(1));
    mask[0] = Real(0);
    const Tensor<Real> fg({m}, std::move(mask));
    return Real(1) - scale(sum(score * fg), Real(1) / static_cast<Real>(m - 1));
}

/// Squared L2 norm over a list of tensors.
template <class Real>
Tensor<Real> squared_norm(const std::vector<Tensor<Real>>& tensors) {
    Tensor<Real> total;
    for (const auto& t : tensors) {
        Tensor<Real> s = sum(square(t));
        total = total.defined() ? total + s : s;
    }
    return total.defined() ? total : Tensor<Real>::scalar(Real(0));
}

namespace detail {

template <class Real>
Tensor<Real> maybe_weighted(const Tensor<Real>& term, double w, double& value_out,
                            const std::vector<Tensor<Real>>& inputs) {
    // Terms with zero weight are still reported but kept off the tape.
    if (w == 0) {
        typename Tape<Real>::Scope pause(nullptr);
        value_out = squared_norm(inputs).item();
        return {};
    }
    value_out = term.item();
    return scale(term, static_cast<Real>(w));
}

template <class Real>
Tensor<Real> accumulate(const Tensor<Real>& acc, const Tensor<Real>& term) {
    if (!term.defined()) return acc;
    return acc.defined() ? acc + term : term;
}

}  // namespace detail

/// Joint objective for prior training. Pass an undefined `seg_targets` to
/// drop both segmentation terms.
template <class Real>
Loss<Real> train_loss(const FieldModel<Real>& model, const Tensor<Real>& latent, const Tensor<Real>& coords,
                      const Tensor<Real>& intensity_targets, const Tensor<Real>& seg_targets,
                      const LossWeights& weights) {
    weights.validate();
    if (intensity_targets.rank() != 2 || intensity_targets.dim(0) != coords.dim(0)) {
        throw DimensionError("train_loss: intensity targets " + shape_str(intensity_targets.shape()) +
                             " do not align with coords " + shape_str(coords.shape()));
    }
    const FieldOutput<Real> out = model.forward(coords, latent);
    Loss<Real> loss;
    loss.report.weights = weights;
    Tensor<Real> total;
    if (seg_targets.defined()) {
        if (seg_targets.rank() != 2 || seg_targets.dim(0) != coords.dim(0)) {
            throw DimensionError("train_loss: segmentation targets " + shape_str(seg_targets.shape()) +
                                 " do not align with coords " + shape_str(coords.shape()));
        }
        // Per-class BCE: summed over classes, averaged over points.
        const Tensor<Real> seg_bce = scale(bce(out.seg_probs, seg_targets), static_cast<Real>(seg_targets.dim(1)));
        const Tensor<Real> seg_dice = dice_loss(out.seg_probs, seg_targets);
        loss.report.bce_seg = seg_bce.item();
        loss.report.dice_seg = seg_dice.item();
        total = seg_bce + seg_dice;
    }
    const Tensor<Real> recon = bce(out.intensity, intensity_targets);
    loss.report.bce_recon = recon.item();
    total = detail::accumulate(total, scale(recon, static_cast<Real>(weights.alpha)));

    const auto& params = model.parameters();
    Tensor<Real> l2p = weights.lambda_params == 0 ? Tensor<Real>() : squared_norm(params);
    total = detail::accumulate(total, detail::maybe_weighted(l2p, weights.lambda_params, loss.report.l2_params, params));
    const std::vector<Tensor<Real>> lat{latent};
    Tensor<Real> l2h = weights.lambda_latent == 0 ? Tensor<Real>() : squared_norm(lat);
    total = detail::accumulate(total, detail::maybe_weighted(l2h, weights.lambda_latent, loss.report.l2_latent, lat));

    loss.total = total;
    loss.report.total = total.item();
    return loss;
}

/// Reconstruction-only objective for latent fitting. The model must be frozen.
template <class Real>
Loss<Real> infer_loss(const FieldModel<Real>& model, const Tensor<Real>& latent, const Tensor<Real>& coords,
                      const Tensor<Real>& intensity_targets, const LossWeights& weights) {
    weights.validate();
    if (model.trainable()) throw ContractError("infer_loss: model parameters must be frozen");
    if (intensity_targets.rank() != 2 || intensity_targets.dim(0) != coords.dim(0)) {
        throw DimensionError("infer_loss: intensity targets " + shape_str(intensity_targets.shape()) +
                             " do not align with coords " + shape_str(coords.shape()));
    }
    const FieldOutput<Real> out = model.forward(coords, latent);
    Loss<Real> loss;
    loss.report.weights = LossWeights{1.0, 0.0, weights.lambda_latent};
    const Tensor<Real> recon = bce(out.intensity, intensity_targets);
    loss.report.bce_recon = recon.item();
    const std::vector<Tensor<Real>> lat{latent};
    Tensor<Real> l2h = weights.lambda_latent == 0 ? Tensor<Real>() : squared_norm(lat);
    loss.total = detail::accumulate(recon, detail::maybe_weighted(l2h, weights.lambda_latent, loss.report.l2_latent, lat));
    loss.report.total = loss.total.item();
    return loss;
}

/// Throws if any model parameter picked up a gradient.
template <class Real>
void require_frozen_gradients(const FieldModel<Real>& model) {
    const auto& names = model.parameter_names();
    const auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].has_grad()) throw ContractError("frozen parameter " + names[i] + " received a gradient");
    }
}

}  // namespace nisf
