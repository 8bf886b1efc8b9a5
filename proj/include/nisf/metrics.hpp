// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nisf/errors.hpp"

namespace nisf {

/// Hard Dice 2|A n B| / (|A| + |B|) for one class. Both masks empty gives 1,
/// exactly one empty gives 0.
inline double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, std::uint8_t class_id) {
    if (pred.size() != truth.size()) {
        throw DimensionError("dice: " + std::to_string(pred.size()) + " predicted vs " +
                             std::to_string(truth.size()) + " true labels");
    }
    std::size_t a = 0, b = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool in_a = pred[i] == class_id;
        const bool in_b = truth[i] == class_id;
        a += in_a;
        b += in_b;
        both += in_a && in_b;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

/// Per-class Dice over the foreground classes 1..M-1. For a single subject the
/// standard deviations are zero; aggregate() fills them for a population.
struct DiceReport {
    std::vector<double> per_class;
    std::vector<double> per_class_std;
    double mean = 0;
    double mean_std = 0;
    std::size_t subjects = 1;
};

inline DiceReport dice_report(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                              std::size_t num_classes) {
    if (num_classes < 2) throw ContractError("dice_report: need at least one foreground class");
    DiceReport r;
    for (std::size_t k = 1; k < num_classes; ++k) {
        if (k > 255) throw ContractError("dice_report: class id does not fit a label byte");
        r.per_class.push_back(dice(pred, truth, static_cast<std::uint8_t>(k)));
    }
    r.per_class_std.assign(r.per_class.size(), 0.0);
    double total = 0;
    for (double d : r.per_class) total += d;
    r.mean = total / static_cast<double>(r.per_class.size());
    return r;
}

/// Population mean and standard deviation (n denominator) per class and for
/// the per-subject class average.
inline DiceReport aggregate(std::span<const DiceReport> reports) {
    if (reports.empty()) throw ContractError("aggregate: no reports");
    const std::size_t k = reports.front().per_class.size();
    for (const auto& r : reports) {
        if (r.per_class.size() != k) throw ContractError("aggregate: reports cover different classes");
    }
    const double n = static_cast<double>(reports.size());
    DiceReport out;
    out.subjects = reports.size();
    out.per_class.assign(k, 0.0);
    out.per_class_std.assign(k, 0.0);
    for (const auto& r : reports) {
        for (std::size_t c = 0; c < k; ++c) out.per_class[c] += r.per_class[c] / n;
        out.mean += r.mean / n;
    }
    for (const auto& r : reports) {
        for (std::size_t c = 0; c < k; ++c) {
            const double dv = r.per_class[c] - out.per_class[c];
            out.per_class_std[c] += dv * dv / n;
        }
        const double dm = r.mean - out.mean;
        out.mean_std += dm * dm / n;
    }
    for (auto& s : out.per_class_std) s = std::sqrt(s);
    out.mean_std = std::sqrt(out.mean_std);
    return out;
}

struct ReconstructionError {
    double mae = 0;
    double mse = 0;
    double psnr = 0;  // dB with peak 1; +infinity when mse == 0
};

inline ReconstructionError reconstruction_error(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw DimensionError("reconstruction_error: " + std::to_string(pred.size()) + " vs " +
                             std::to_string(truth.size()) + " values");
    }
    if (pred.empty()) throw ContractError("reconstruction_error: empty input");
    ReconstructionError e;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        e.mae += std::abs(d);
        e.mse += d * d;
    }
    e.mae /= static_cast<double>(pred.size());
    e.mse /= static_cast<double>(pred.size());
    e.psnr = e.mse == 0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(e.mse);
    return e;
}

inline std::string dice_csv_header(const std::vector<std::string>& class_labels) {
    std::string h = "subject";
    for (const auto& c : class_labels) h += "," + c;
    return h + ",mean";
}

inline std::string dice_csv_row(const std::string& subject, const DiceReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << subject;
    for (double d : r.per_class) os << ',' << d;
    os << ',' << r.mean;
    return os.str();
}

/// Plain-text table: one column per foreground class plus the class average,
/// "mean +- sd" in each cell.
inline std::string format_dice_table(const DiceReport& r, const std::vector<std::string>& class_labels) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "Dice (n=" << r.subjects << ")\n";
    os << "  classes average: " << r.mean << " +- " << r.mean_std << '\n';
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const std::string name = c < class_labels.size() ? class_labels[c] : "class" + std::to_string(c + 1);
        os << "  " << name << ": " << r.per_class[c] << " +- " << r.per_class_std[c] << '\n';
    }
    return os.str();
}

}  // namespace nisf
