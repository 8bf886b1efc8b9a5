// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Two-headed residual coordinate network.
//
//   z0      = [c | h] * W_in + b_in          (concatenation done as c*W_c + h*W_h)
//   x0      = gabor(z0)
//   x_{l+1} = x_l + gabor(x_l * W1_l + b1_l) * W2_l + b2_l
//   seg     = softmax(x_L * W_seg + b_seg)    segmentation probabilities, M classes
//   i       = sigmoid(x_L * W_int + b_int)    image intensity in (0, 1)

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "nisf/errors.hpp"
#include "nisf/fastmath.hpp"
#include "nisf/tensor.hpp"

namespace nisf {

struct ModelConfig {
    std::size_t coord_dim = 4;  // x, y, z, t
    std::size_t latent_dim = 128;
    std::size_t hidden_width = 128;
    std::size_t num_residual_layers = 8;
    std::size_t num_classes = 4;  // background, LV pool, LV myocardium, RV pool
    double gabor_omega0 = 10.0;
    double gabor_s0 = 5.0;

    void validate() const {
        if (coord_dim < 1 || latent_dim < 1 || hidden_width < 1)
            throw ContractError("model config: coord_dim, latent_dim and hidden_width must be >= 1");
        if (num_classes < 2) throw ContractError("model config: num_classes must be >= 2");
        if (num_residual_layers < 1) throw ContractError("model config: num_residual_layers must be >= 1");
        if (!(gabor_omega0 > 0) || !(gabor_s0 > 0)) throw ContractError("model config: Gabor scales must be > 0");
    }

    /// Total scalar parameters of a FieldModel with this configuration.
    std::size_t parameter_count() const {
        const std::size_t n = coord_dim, d = latent_dim, w = hidden_width, m = num_classes;
        return (n + d) * w + w + num_residual_layers * (2 * w * w + 2 * w) + w * m + m + w + 1;
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Weight-scale knobs for init_params. Scales are the half-widths of the
/// uniform draws relative to 1/sqrt(fan_in), except where noted.
struct InitOptions {
    double coord_scale = 1.0;     // absolute half-width for W_c
    double coord_bias = 1.0;      // absolute half-width for b_in
    double latent_gain = 0.1;     // W_h half-width is latent_gain / (0.1 * sqrt(d))
    double hidden_gain = 1.0;     // W1
    double residual_gain = 0.5;   // W2
    double head_gain = 1.0;       // heads; 0 gives zero-initialised heads
};

/// Real Gabor wavelet psi(x) = cos(omega0 x) * exp(-(s0 x)^2), elementwise.
template <class Real>
Tensor<Real> gabor_activation(const Tensor<Real>& x, double omega0, double s0) {
    const double s2 = s0 * s0;
    const auto xv = x.values();
    const std::size_t n = xv.size();
    std::vector<Real> out(n);
    // env * sin(omega0 x), kept for the backward pass
    auto env_sin = std::make_shared<std::vector<Real>>(n);
    Real* es = env_sin->data();
    const Real w = static_cast<Real>(omega0), ss = static_cast<Real>(s2);
    // Past this bound the envelope underflows to exactly zero; clamping keeps
    // the trigonometric range reduction in its accurate range.
    const double exp_floor = std::is_same_v<Real, float> ? 87.0 : 708.0;
    const Real bound = s0 > 0 ? static_cast<Real>(std::sqrt(exp_floor) / s0) : std::numeric_limits<Real>::max();
    for (std::size_t i = 0; i < n; ++i) {
        const Real v = xv[i] < -bound ? -bound : (xv[i] > bound ? bound : xv[i]);
        const auto sc = fastmath::sincos(w * v);
        const Real env = fastmath::exp(-ss * v * v);
        out[i] = sc.cos * env;
        es[i] = sc.sin * env;
    }
    return detail::make_result<Real>(x.shape(), std::move(out), {&x}, "gabor",
                                     [env_sin, omega0, s2](detail::Node<Real>& self) {
                                         auto* gx = detail::grad_sink(self.parents[0]);
                                         if (gx == nullptr) return;
                                         const Real w = static_cast<Real>(omega0);
                                         const Real two_s2 = static_cast<Real>(2.0 * s2);
                                         const Real* xs = self.parents[0]->value.data();
                                         const Real* ys = self.value.data();
                                         const Real* es = env_sin->data();
                                         const Real* g = self.grad.data();
                                         Real* out = gx->data();
                                         for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                             out[i] += g[i] * (-w * es[i] - two_s2 * xs[i] * ys[i]);
                                         }
                                     });
}

template <class Real>
struct FieldOutput {
    Tensor<Real> seg_probs;  // [B x M]
    Tensor<Real> seg_logits;  // [B x M]
    Tensor<Real> intensity;  // [B x 1]
    Tensor<Real> trunk;      // [B x hidden]
    std::size_t out_of_range_points = 0;  // rows with a coordinate outside [0, 1]
};

template <class Real>
class FieldModel {
  public:
    FieldModel() = default;

    explicit FieldModel(const ModelConfig& config) : config_(config) {
        config_.validate();
        const std::size_t n = config_.coord_dim, d = config_.latent_dim, w = config_.hidden_width,
                          m = config_.num_classes;
        add("in.w_coord", {n, w});
        add("in.w_latent", {d, w});
        add("in.b", {w});
        for (std::size_t l = 0; l < config_.num_residual_layers; ++l) {
            const std::string p = "res" + std::to_string(l);
            add(p + ".w1", {w, w});
            add(p + ".b1", {w});
            add(p + ".w2", {w, w});
            add(p + ".b2", {w});
        }
        add("seg.w", {w, m});
        add("seg.b", {m});
        add("int.w", {w, 1});
        add("int.b", {1});
    }

    const ModelConfig& config() const { return config_; }

    std::vector<Tensor<Real>>& parameters() { return params_; }
    const std::vector<Tensor<Real>>& parameters() const { return params_; }
    const std::vector<std::string>& parameter_names() const { return names_; }

    std::size_t parameter_count() const {
        std::size_t total = 0;
        for (const auto& p : params_) total += p.numel();
        return total;
    }

    bool trainable() const { return !params_.empty() && params_.front().requires_grad(); }
    void set_trainable(bool on) {
        for (auto& p : params_) p.set_requires_grad(on);
    }
    void reset_grads() {
        for (auto& p : params_) p.reset_grad();
    }

    /// Deep copy with frozen parameters; the original is never touched by
    /// anything done to the copy.
    FieldModel frozen_copy() const {
        FieldModel copy = *this;
        for (auto& p : copy.params_) p = p.detach(false);
        return copy;
    }

    /// FNV-1a over the raw parameter bytes.
    std::uint64_t checksum() const {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& p : params_) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(p.values().data());
            for (std::size_t i = 0; i < p.numel() * sizeof(Real); ++i) {
                h ^= bytes[i];
                h *= 1099511628211ull;
            }
        }
        return h;
    }

    /// Evaluates both heads from one trunk pass. `latent` is [d], [1 x d]
    /// (shared by all rows) or [B x d].
    FieldOutput<Real> forward(const Tensor<Real>& coords, const Tensor<Real>& latent) const {
        const std::size_t n = config_.coord_dim, d = config_.latent_dim;
        if (coords.rank() != 2 || coords.dim(1) != n) {
            throw DimensionError("forward: coords must be [B x " + std::to_string(n) + "], got " +
                                 shape_str(coords.shape()));
        }
        const std::size_t batch = coords.dim(0);
        const bool shared = latent.numel() == d && (latent.rank() == 1 || (latent.rank() == 2 && latent.dim(0) == 1));
        const bool per_row = latent.rank() == 2 && latent.dim(0) == batch && latent.dim(1) == d;
        if (!shared && !per_row) {
            throw DimensionError("forward: latent must hold " + std::to_string(d) + " values per row, got " +
                                 shape_str(latent.shape()));
        }

        FieldOutput<Real> out;
        const auto cv = coords.values();
        for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t a = 0; a < n; ++a) {
                const Real c = cv[r * n + a];
                if (c < Real(0) || c > Real(1)) {
                    ++out.out_of_range_points;
                    break;
                }
            }
        }

        Tensor<Real> z = affine(coords, param(kCoordW), param(kInB));
        if (shared) {
            z = add_rows(z, matmul(reshape(latent, {1, d}), param(kLatentW)));
        } else {
            z = z + matmul(latent, param(kLatentW));
        }
        Tensor<Real> x = gabor(z);
        for (std::size_t l = 0; l < config_.num_residual_layers; ++l) {
            const std::size_t base = kFirstBlock + 4 * l;
            Tensor<Real> inner = gabor(affine(x, params_[base], params_[base + 1]));
            x = x + affine(inner, params_[base + 2], params_[base + 3]);
        }
        const std::size_t head = kFirstBlock + 4 * config_.num_residual_layers;
        out.trunk = x;
        out.seg_logits = affine(x, params_[head], params_[head + 1]);
        out.seg_probs = softmax(out.seg_logits);
        out.intensity = sigmoid(affine(x, params_[head + 2], params_[head + 3]));
        return out;
    }

  private:
    static constexpr std::size_t kCoordW = 0, kLatentW = 1, kInB = 2, kFirstBlock = 3;

    void add(std::string name, Shape shape) {
        names_.push_back(std::move(name));
        params_.push_back(Tensor<Real>::zeros(std::move(shape)));
    }
    const Tensor<Real>& param(std::size_t i) const { return params_[i]; }
    Tensor<Real> gabor(const Tensor<Real>& x) const {
        return gabor_activation(x, config_.gabor_omega0, config_.gabor_s0);
    }

    ModelConfig config_;
    std::vector<Tensor<Real>> params_;
    std::vector<std::string> names_;
};

/// Deterministic weight initialisation from a seed.
template <class Real>
FieldModel<Real> init_params(const ModelConfig& config, std::uint64_t seed, const InitOptions& opt = {}) {
    FieldModel<Real> model(config);
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Tensor<Real>& t, double half_width) {
        if (half_width <= 0) return;
        std::uniform_real_distribution<double> u(-half_width, half_width);
        for (auto& v : t.mutable_values()) v = static_cast<Real>(u(rng));
    };
    const double w = static_cast<double>(config.hidden_width);
    const double d = static_cast<double>(config.latent_dim);
    auto& p = model.parameters();
    fill(p[0], opt.coord_scale);
    fill(p[1], opt.latent_gain / (0.1 * std::sqrt(d)));
    fill(p[2], opt.coord_bias);
    std::size_t i = 3;
    for (std::size_t l = 0; l < config.num_residual_layers; ++l) {
        fill(p[i++], opt.hidden_gain / std::sqrt(w));
        fill(p[i++], opt.hidden_gain / std::sqrt(w));
        fill(p[i++], opt.residual_gain / std::sqrt(w));
        i++;  // b2 stays zero
    }
    fill(p[i++], opt.head_gain / std::sqrt(w));
    i++;
    fill(p[i++], opt.head_gain / std::sqrt(w));
    return model;
}

}  // namespace nisf
