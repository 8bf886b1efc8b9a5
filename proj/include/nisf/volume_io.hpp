// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Volume files: a JSON sidecar plus a little-endian binary payload, and the
// dataset manifest that lists subjects and their split.
//
// Payload layout, in order:
//   intensity  numel x float64 little-endian
//   labels     numel x uint8
//   mask       numel x uint8 (only when has_mask)
// with numel = nx * ny * nz * nt and x varying fastest.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nisf/errors.hpp"
#include "nisf/phantom.hpp"

namespace nisf {

inline constexpr const char* kVolumeFormat = "nisf-volume";
inline constexpr int kVolumeFormatVersion = 1;
inline constexpr const char* kDatasetFormat = "nisf-dataset";
inline constexpr int kDatasetFormatVersion = 1;
inline constexpr int kGeneratorVersion = 1;

namespace detail {

inline void put_le64(std::uint64_t v, char* out) {
    for (int b = 0; b < 8; ++b) out[b] = static_cast<char>((v >> (8 * b)) & 0xffu);
}

inline std::uint64_t get_le64(const char* in) {
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[b])) << (8 * b);
    return v;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + path.string());
}

inline std::filesystem::path payload_path_for(const std::filesystem::path& sidecar) {
    std::filesystem::path p = sidecar;
    p.replace_extension(".bin");
    return p;
}

}  // namespace detail

/// Bytes the payload must hold for the given shape.
inline std::size_t volume_payload_bytes(const GridShape& shape, bool has_mask) {
    const std::size_t n = shape[0] * shape[1] * shape[2] * shape[3];
    return n * (sizeof(double) + 1 + (has_mask ? 1 : 0));
}

inline nlohmann::json volume_sidecar(const VolumeSample& vol, const std::string& payload_file) {
    nlohmann::json j;
    j["format"] = kVolumeFormat;
    j["format_version"] = kVolumeFormatVersion;
    j["subject_id"] = vol.subject_id;
    j["shape"] = vol.shape;
    j["axes"] = {"x", "y", "z", "t"};
    j["spacing"] = vol.spacing;
    j["intensity_dtype"] = "f64le";
    j["label_dtype"] = "u8";
    j["has_mask"] = !vol.mask.empty();
    j["class_names"] = class_names();
    j["payload_file"] = payload_file;
    j["payload_bytes"] = volume_payload_bytes(vol.shape, !vol.mask.empty());
    return j;
}

/// Writes `<path>` (sidecar) and the payload next to it with extension .bin.
inline void save_volume(const VolumeSample& vol, const std::filesystem::path& path) {
    vol.validate();
    const std::filesystem::path payload = detail::payload_path_for(path);
    const std::size_t n = vol.voxel_count();
    std::string bytes(volume_payload_bytes(vol.shape, !vol.mask.empty()), '\0');
    char* p = bytes.data();
    for (std::size_t i = 0; i < n; ++i) detail::put_le64(std::bit_cast<std::uint64_t>(vol.intensity[i]), p + 8 * i);
    p += 8 * n;
    std::memcpy(p, vol.labels.data(), n);
    if (!vol.mask.empty()) std::memcpy(p + n, vol.mask.data(), n);
    detail::write_file(payload, bytes);
    detail::write_file(path, volume_sidecar(vol, payload.filename().string()).dump(2) + "\n");
}

inline VolumeSample load_volume(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("volume sidecar " + path.string() + " is not valid JSON: " + e.what());
    }
    if (j.value("format", std::string()) != kVolumeFormat)
        throw FormatError(path.string() + " is not a " + std::string(kVolumeFormat) + " sidecar");
    const int version = j.value("format_version", -1);
    if (version != kVolumeFormatVersion) {
        throw VersionMismatchError("volume format version " + std::to_string(version) + " in " + path.string() +
                                   ", this build reads version " + std::to_string(kVolumeFormatVersion));
    }
    VolumeSample vol;
    try {
        vol.subject_id = j.at("subject_id").get<std::string>();
        vol.shape = j.at("shape").get<GridShape>();
        vol.spacing = j.at("spacing").get<std::array<double, 4>>();
        if (j.at("intensity_dtype") != "f64le" || j.at("label_dtype") != "u8")
            throw FormatError("unsupported dtypes in " + path.string());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("volume sidecar " + path.string() + ": " + e.what());
    }
    const bool has_mask = j.value("has_mask", false);
    const std::size_t declared = j.value("payload_bytes", std::size_t{0});
    const std::size_t expected = volume_payload_bytes(vol.shape, has_mask);
    const std::filesystem::path payload = path.parent_path() / j.value("payload_file", std::string());
    const std::string bytes = detail::read_file(payload);
    if (bytes.size() < declared) {
        throw TruncatedPayloadError("payload " + payload.string() + " holds " + std::to_string(bytes.size()) +
                                    " bytes, sidecar declares " + std::to_string(declared));
    }
    if (declared != expected || bytes.size() != expected) {
        throw ShapePayloadError("shape " + std::to_string(vol.shape[0]) + "x" + std::to_string(vol.shape[1]) + "x" +
                                std::to_string(vol.shape[2]) + "x" + std::to_string(vol.shape[3]) + " needs " +
                                std::to_string(expected) + " payload bytes, found " + std::to_string(bytes.size()) +
                                " (declared " + std::to_string(declared) + ")");
    }
    const std::size_t n = vol.voxel_count();
    vol.intensity.resize(n);
    for (std::size_t i = 0; i < n; ++i) vol.intensity[i] = std::bit_cast<double>(detail::get_le64(bytes.data() + 8 * i));
    const char* p = bytes.data() + 8 * n;
    vol.labels.assign(p, p + n);
    if (has_mask) vol.mask.assign(p + n, p + 2 * n);
    vol.validate();
    return vol;
}

enum class Split { train, validation, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    throw FormatError("unknown split '" + s + "'");
}

struct SplitCounts {
    std::size_t train = 60;
    std::size_t validation = 10;
    std::size_t test = 20;

    std::size_t total() const { return train + validation + test; }
};

struct ManifestEntry {
    std::string subject_id;
    std::uint64_t seed = 0;
    Split split = Split::train;
    std::string path;  // sidecar, relative to the manifest directory

    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    int generator_version = kGeneratorVersion;
    GridShape shape{32, 32, 8, 10};
    SplitCounts counts;
    std::vector<ManifestEntry> subjects;

    std::vector<ManifestEntry> split(Split s) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : subjects) {
            if (e.split == s) out.push_back(e);
        }
        return out;
    }
};

/// Subject seeds are drawn from the dataset seed; split membership is a
/// seeded shuffle so that no split depends on subject numbering.
inline DatasetManifest plan_dataset(std::uint64_t seed, const SplitCounts& counts, const GridShape& shape) {
    if (counts.total() == 0) throw ContractError("dataset needs at least one subject");
    DatasetManifest m;
    m.seed = seed;
    m.shape = shape;
    m.counts = counts;
    std::mt19937_64 rng(seed);
    std::set<std::uint64_t> used;
    std::vector<std::uint64_t> seeds;
    while (seeds.size() < counts.total()) {
        const std::uint64_t s = rng() >> 16;
        if (used.insert(s).second) seeds.push_back(s);
    }
    std::vector<std::size_t> order(seeds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Split> split_of(seeds.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
        split_of[order[r]] = r < counts.train                      ? Split::train
                             : r < counts.train + counts.validation ? Split::validation
                                                                    : Split::test;
    }
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        ManifestEntry e;
        e.seed = seeds[i];
        e.subject_id = subject_name(seeds[i]);
        e.split = split_of[i];
        e.path = "volumes/" + e.subject_id + ".json";
        m.subjects.push_back(e);
    }
    return m;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["format"] = kDatasetFormat;
    j["format_version"] = kDatasetFormatVersion;
    j["generator_version"] = m.generator_version;
    j["seed"] = m.seed;
    j["shape"] = m.shape;
    j["split_counts"] = {{"train", m.counts.train}, {"validation", m.counts.validation}, {"test", m.counts.test}};
    nlohmann::json subs = nlohmann::json::array();
    for (const auto& e : m.subjects) {
        subs.push_back({{"subject_id", e.subject_id}, {"seed", e.seed}, {"split", split_name(e.split)}, {"path", e.path}});
    }
    j["subjects"] = subs;
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    if (j.value("format", std::string()) != kDatasetFormat) throw FormatError("not a dataset manifest");
    const int version = j.value("format_version", -1);
    if (version != kDatasetFormatVersion)
        throw VersionMismatchError("dataset manifest version " + std::to_string(version) + " is not supported");
    DatasetManifest m;
    try {
        m.generator_version = j.at("generator_version").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.shape = j.at("shape").get<GridShape>();
        const auto& c = j.at("split_counts");
        m.counts = {c.at("train").get<std::size_t>(), c.at("validation").get<std::size_t>(),
                    c.at("test").get<std::size_t>()};
        for (const auto& s : j.at("subjects")) {
            m.subjects.push_back({s.at("subject_id").get<std::string>(), s.at("seed").get<std::uint64_t>(),
                                  parse_split(s.at("split").get<std::string>()), s.at("path").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset manifest: ") + e.what());
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    detail::write_file(path, to_json(m).dump(2) + "\n");
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    try {
        return manifest_from_json(nlohmann::json::parse(detail::read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("dataset manifest " + path.string() + " is not valid JSON: " + e.what());
    }
}

}  // namespace nisf
