// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint files: a text header followed by one little-endian binary blob.
//
//   NISF-CHECKPOINT 1
//   kind <model|train_state|latent>
//   scalar <f32|f64>
//   <key> <value>             any number of metadata lines
//   array <name> <length>     one line per stored array, in blob order
//   end_header
//   <blob>                    arrays back to back, `scalar` little-endian
//
// Values written by a build of the same precision reload bit-exactly.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "nisf/errors.hpp"
#include "nisf/field_model.hpp"
#include "nisf/latent_prior.hpp"
#include "nisf/optimizer.hpp"
#include "nisf/volume_io.hpp"

namespace nisf {

inline constexpr const char* kCheckpointMagic = "NISF-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    std::string kind;
    std::string scalar = "f64";
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, std::vector<double>>> arrays;

    void set(const std::string& key, const std::string& value) {
        for (auto& [k, v] : meta) {
            if (k == key) {
                v = value;
                return;
            }
        }
        meta.emplace_back(key, value);
    }
    template <class T>
    void set_number(const std::string& key, T value) {
        if constexpr (std::is_floating_point_v<T>) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(value));
            set(key, buf);
        } else {
            set(key, std::to_string(value));
        }
    }

    bool has(const std::string& key) const {
        for (const auto& kv : meta) {
            if (kv.first == key) return true;
        }
        return false;
    }
    const std::string& get(const std::string& key) const {
        for (const auto& kv : meta) {
            if (kv.first == key) return kv.second;
        }
        throw FormatError("checkpoint lacks key '" + key + "'");
    }
    std::uint64_t get_uint(const std::string& key) const {
        try {
            return std::stoull(get(key));
        } catch (const std::logic_error&) {
            throw FormatError("checkpoint key '" + key + "' is not an unsigned integer");
        }
    }
    double get_double(const std::string& key) const {
        try {
            return std::stod(get(key));
        } catch (const std::logic_error&) {
            throw FormatError("checkpoint key '" + key + "' is not a number");
        }
    }

    void add_array(const std::string& name, std::vector<double> values) { arrays.emplace_back(name, std::move(values)); }
    template <class Real>
    void add_array(const std::string& name, std::span<const Real> values) {
        arrays.emplace_back(name, std::vector<double>(values.begin(), values.end()));
    }
    const std::vector<double>& array(const std::string& name) const {
        for (const auto& a : arrays) {
            if (a.first == name) return a.second;
        }
        throw FormatError("checkpoint lacks array '" + name + "'");
    }
    bool has_array(const std::string& name) const {
        for (const auto& a : arrays) {
            if (a.first == name) return true;
        }
        return false;
    }
};

template <class Real>
constexpr const char* scalar_tag() {
    return std::is_same_v<Real, float> ? "f32" : "f64";
}

inline std::string serialize_checkpoint(const Checkpoint& c) {
    if (c.scalar != "f32" && c.scalar != "f64") throw ContractError("checkpoint scalar must be f32 or f64");
    std::ostringstream head;
    head << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
    head << "kind " << c.kind << '\n' << "scalar " << c.scalar << '\n';
    for (const auto& [k, v] : c.meta) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
            throw ContractError("checkpoint metadata '" + k + "' contains a separator");
        head << k << ' ' << v << '\n';
    }
    for (const auto& [name, values] : c.arrays) head << "array " << name << ' ' << values.size() << '\n';
    head << "end_header\n";
    std::string out = head.str();
    const bool f32 = c.scalar == "f32";
    for (const auto& a : c.arrays) {
        for (double v : a.second) {
            if (f32) {
                const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
                for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
            } else {
                char buf[8];
                detail::put_le64(std::bit_cast<std::uint64_t>(v), buf);
                out.append(buf, 8);
            }
        }
    }
    return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& where = "checkpoint") {
    Checkpoint c;
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const std::size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw TruncatedPayloadError(where + ": header ends before end_header");
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };
    {
        std::istringstream first(next_line());
        std::string magic;
        int version = -1;
        first >> magic >> version;
        if (magic != kCheckpointMagic) throw FormatError(where + " is not a checkpoint file");
        if (version != kCheckpointVersion) {
            throw VersionMismatchError(where + ": checkpoint version " + std::to_string(version) +
                                       ", this build reads version " + std::to_string(kCheckpointVersion));
        }
    }
    std::vector<std::pair<std::string, std::size_t>> layout;
    for (;;) {
        const std::string line = next_line();
        if (line == "end_header") break;
        const std::size_t sp = line.find(' ');
        const std::string key = line.substr(0, sp);
        const std::string value = sp == std::string::npos ? std::string() : line.substr(sp + 1);
        if (key == "kind") {
            c.kind = value;
        } else if (key == "scalar") {
            c.scalar = value;
        } else if (key == "array") {
            std::istringstream in(value);
            std::string name;
            std::size_t len = 0;
            if (!(in >> name >> len)) throw FormatError(where + ": malformed array line '" + line + "'");
            layout.emplace_back(name, len);
        } else {
            c.meta.emplace_back(key, value);
        }
    }
    if (c.scalar != "f32" && c.scalar != "f64") throw FormatError(where + ": unknown scalar type " + c.scalar);
    const std::size_t width = c.scalar == "f32" ? 4 : 8;
    std::size_t need = 0;
    for (const auto& l : layout) need += l.second * width;
    const std::size_t have = bytes.size() - pos;
    if (have < need) {
        throw TruncatedPayloadError(where + ": blob holds " + std::to_string(have) + " bytes, header lists " +
                                    std::to_string(need));
    }
    if (have > need) throw ShapePayloadError(where + ": " + std::to_string(have - need) + " unexpected trailing bytes");
    const char* p = bytes.data() + pos;
    for (const auto& [name, len] : layout) {
        std::vector<double> v(len);
        for (std::size_t i = 0; i < len; ++i, p += width) {
            if (width == 4) {
                std::uint32_t bits = 0;
                for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
                v[i] = static_cast<double>(std::bit_cast<float>(bits));
            } else {
                v[i] = std::bit_cast<double>(detail::get_le64(p));
            }
        }
        c.arrays.emplace_back(name, std::move(v));
    }
    return c;
}

/// Writes through a temporary file and a rename so a crash never leaves a
/// partial checkpoint under the final name.
inline void write_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    detail::write_file(tmp, serialize_checkpoint(c));
    std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    return parse_checkpoint(detail::read_file(path), path.string());
}

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline void put_model_config(Checkpoint& c, const ModelConfig& mc) {
    c.set_number("coord_dim", mc.coord_dim);
    c.set_number("latent_dim", mc.latent_dim);
    c.set_number("hidden_width", mc.hidden_width);
    c.set_number("num_residual_layers", mc.num_residual_layers);
    c.set_number("num_classes", mc.num_classes);
    c.set_number("gabor_omega0", mc.gabor_omega0);
    c.set_number("gabor_s0", mc.gabor_s0);
    c.set_number("param_count", mc.parameter_count());
    std::string text;
    for (const char* k : {"coord_dim", "latent_dim", "hidden_width", "num_residual_layers", "num_classes",
                          "gabor_omega0", "gabor_s0", "param_count"}) {
        text += std::string(k) + '=' + c.get(k) + ';';
    }
    c.set_number("config_hash", fnv1a(text));
}

inline ModelConfig get_model_config(const Checkpoint& c) {
    ModelConfig mc;
    mc.coord_dim = c.get_uint("coord_dim");
    mc.latent_dim = c.get_uint("latent_dim");
    mc.hidden_width = c.get_uint("hidden_width");
    mc.num_residual_layers = c.get_uint("num_residual_layers");
    mc.num_classes = c.get_uint("num_classes");
    mc.gabor_omega0 = c.get_double("gabor_omega0");
    mc.gabor_s0 = c.get_double("gabor_s0");
    mc.validate();
    if (c.get_uint("param_count") != mc.parameter_count())
        throw ShapePayloadError("checkpoint param_count disagrees with its model configuration");
    Checkpoint probe;
    put_model_config(probe, mc);
    if (probe.get("config_hash") != c.get("config_hash"))
        throw FormatError("checkpoint config_hash does not match its configuration fields");
    return mc;
}

template <class Real>
void fill_tensor(Tensor<Real>& t, const std::vector<double>& v, const std::string& name) {
    if (v.size() != t.numel()) {
        throw ShapePayloadError("checkpoint array " + name + " has " + std::to_string(v.size()) + " values, expected " +
                                std::to_string(t.numel()));
    }
    auto dst = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) dst[i] = static_cast<Real>(v[i]);
}

template <class Real>
std::vector<Real> to_real(const std::vector<double>& v) {
    return std::vector<Real>(v.begin(), v.end());
}

template <class Real>
void put_model(Checkpoint& c, const FieldModel<Real>& model) {
    put_model_config(c, model.config());
    for (std::size_t i = 0; i < model.parameters().size(); ++i)
        c.add_array<Real>("param." + model.parameter_names()[i], model.parameters()[i].values());
}

template <class Real>
FieldModel<Real> get_model(const Checkpoint& c) {
    FieldModel<Real> model(get_model_config(c));
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        const std::string name = "param." + model.parameter_names()[i];
        fill_tensor(model.parameters()[i], c.array(name), name);
    }
    return model;
}

inline void put_adam_config(Checkpoint& c, const AdamConfig& a, const std::string& prefix) {
    c.set_number(prefix + "lr", a.lr);
    c.set_number(prefix + "beta1", a.beta1);
    c.set_number(prefix + "beta2", a.beta2);
    c.set_number(prefix + "eps", a.eps);
}

inline AdamConfig get_adam_config(const Checkpoint& c, const std::string& prefix) {
    return {c.get_double(prefix + "lr"), c.get_double(prefix + "beta1"), c.get_double(prefix + "beta2"),
            c.get_double(prefix + "eps")};
}

template <class Real>
void put_adam_moments(Checkpoint& c, const AdamState<Real>& s, const std::string& prefix) {
    c.set_number(prefix + "step", s.step);
    c.set_number(prefix + "moments", s.m.size());
    for (std::size_t i = 0; i < s.m.size(); ++i) {
        c.add_array<Real>(prefix + "m." + std::to_string(i), std::span<const Real>(s.m[i]));
        c.add_array<Real>(prefix + "v." + std::to_string(i), std::span<const Real>(s.v[i]));
    }
}

template <class Real>
void get_adam_moments(const Checkpoint& c, AdamState<Real>& s, const std::string& prefix) {
    s.step = c.get_uint(prefix + "step");
    const std::size_t n = c.get_uint(prefix + "moments");
    s.m.clear();
    s.v.clear();
    for (std::size_t i = 0; i < n; ++i) {
        s.m.push_back(to_real<Real>(c.array(prefix + "m." + std::to_string(i))));
        s.v.push_back(to_real<Real>(c.array(prefix + "v." + std::to_string(i))));
    }
}

}  // namespace detail

template <class Real>
void save_model(const FieldModel<Real>& model, const std::filesystem::path& path) {
    Checkpoint c;
    c.kind = "model";
    c.scalar = scalar_tag<Real>();
    detail::put_model(c, model);
    write_checkpoint(c, path);
}

/// Loads the network from a model or train_state checkpoint, frozen.
template <class Real>
FieldModel<Real> load_model(const std::filesystem::path& path) {
    const Checkpoint c = read_checkpoint(path);
    if (c.kind != "model" && c.kind != "train_state")
        throw FormatError(path.string() + " holds a '" + c.kind + "' checkpoint, not a model");
    return detail::get_model<Real>(c);
}

template <class Real>
Checkpoint train_state_checkpoint(const TrainState<Real>& st) {
    Checkpoint c;
    c.kind = "train_state";
    c.scalar = scalar_tag<Real>();
    detail::put_model(c, st.model);
    c.set_number("epochs_done", st.epochs_done);
    c.set_number("steps_done", st.steps_done);
    detail::put_adam_config(c, st.model_adam.config, "adam.");
    detail::put_adam_moments(c, st.model_adam, "adam.");
    c.set_number("latent_rows", st.latents.size());
    c.set_number("latent_dim", st.latents.dim);
    for (std::size_t r = 0; r < st.latents.size(); ++r) {
        const std::string p = "latent." + std::to_string(r) + ".";
        c.set(p + "id", st.latents.ids[r]);
        c.add_array<Real>(p + "h", st.latents.rows[r].values());
        detail::put_adam_config(c, st.latents.states[r].config, p + "adam.");
        detail::put_adam_moments(c, st.latents.states[r], p + "adam.");
    }
    return c;
}

template <class Real>
void save_train_state(const TrainState<Real>& st, const std::filesystem::path& path) {
    write_checkpoint(train_state_checkpoint(st), path);
}

template <class Real>
TrainState<Real> train_state_from_checkpoint(const Checkpoint& c) {
    if (c.kind != "train_state") throw FormatError("checkpoint kind '" + c.kind + "' is not train_state");
    TrainState<Real> st;
    st.model = detail::get_model<Real>(c);
    st.model.set_trainable(true);
    st.epochs_done = c.get_uint("epochs_done");
    st.steps_done = c.get_uint("steps_done");
    st.model_adam.config = detail::get_adam_config(c, "adam.");
    detail::get_adam_moments(c, st.model_adam, "adam.");
    const std::size_t rows = c.get_uint("latent_rows");
    st.latents.dim = c.get_uint("latent_dim");
    for (std::size_t r = 0; r < rows; ++r) {
        const std::string p = "latent." + std::to_string(r) + ".";
        const std::string id = c.get(p + "id");
        const std::vector<double>& h = c.array(p + "h");
        if (h.size() != st.latents.dim) throw ShapePayloadError("checkpoint latent row " + id + " has the wrong length");
        st.latents.index.emplace(id, r);
        st.latents.ids.push_back(id);
        st.latents.rows.emplace_back(Shape{st.latents.dim}, detail::to_real<Real>(h), true);
        AdamState<Real> s;
        s.config = detail::get_adam_config(c, p + "adam.");
        detail::get_adam_moments(c, s, p + "adam.");
        st.latents.states.push_back(std::move(s));
    }
    return st;
}

template <class Real>
TrainState<Real> load_train_state(const std::filesystem::path& path) {
    return train_state_from_checkpoint<Real>(read_checkpoint(path));
}

/// Latent files carry the checksum of the model they were fitted against.
template <class Real>
void save_latent(const Tensor<Real>& latent, const std::string& subject_id, std::uint64_t model_checksum,
                 const std::filesystem::path& path) {
    Checkpoint c;
    c.kind = "latent";
    c.scalar = scalar_tag<Real>();
    c.set("subject_id", subject_id);
    c.set_number("model_checksum", model_checksum);
    c.set_number("latent_dim", latent.numel());
    c.add_array<Real>("h", latent.values());
    write_checkpoint(c, path);
}

template <class Real>
struct LatentFile {
    Tensor<Real> latent;
    std::string subject_id;
    std::uint64_t model_checksum = 0;
};

template <class Real>
LatentFile<Real> load_latent(const std::filesystem::path& path) {
    const Checkpoint c = read_checkpoint(path);
    if (c.kind != "latent") throw FormatError(path.string() + " is not a latent file");
    LatentFile<Real> f;
    f.subject_id = c.get("subject_id");
    f.model_checksum = c.get_uint("model_checksum");
    const std::vector<double>& h = c.array("h");
    if (h.size() != c.get_uint("latent_dim")) throw ShapePayloadError(path.string() + ": latent length mismatch");
    f.latent = Tensor<Real>({h.size()}, detail::to_real<Real>(h));
    return f;
}

}  // namespace nisf
