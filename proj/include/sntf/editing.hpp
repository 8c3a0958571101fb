#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace sntf {

enum class PartNorm { max, l2 };

/// One rank-one edit Z + alpha a_j p^T.
struct EditSpec {
    std::size_t appearance_index = 0;
    Vector part;  // nonnegative, length S
    double alpha = 0.0;
    PartNorm norm = PartNorm::max;
};

inline Vector normalize_part(const Vector& p, PartNorm norm = PartNorm::max) {
    detail::require(p.size() >= 1, "normalize_part: empty part");
    detail::require(p.allFinite() && p.minCoeff() >= 0.0, "normalize_part: part must be nonnegative");
    const double peak = p.maxCoeff();
    detail::require(peak > 0.0, "normalize_part: part is all zero");
    return norm == PartNorm::max ? Vector(p / peak) : Vector(p / p.norm());
}

inline ActivationSample edit_features(const ActivationSample& sample, const Matrix& a,
                                      const EditSpec& spec) {
    detail::require(static_cast<std::size_t>(a.rows()) == sample.channels(),
                    "edit_features: A has " + std::to_string(a.rows()) + " rows but C = " +
                        std::to_string(sample.channels()));
    detail::require(spec.appearance_index < static_cast<std::size_t>(a.cols()),
                    "edit_features: appearance index " + std::to_string(spec.appearance_index) +
                        " out of range [0, " + std::to_string(a.cols()) + ")");
    detail::require(static_cast<std::size_t>(spec.part.size()) == sample.spatial(),
                    "edit_features: part length " + std::to_string(spec.part.size()) +
                        " != S = " + std::to_string(sample.spatial()));
    const Vector phat = normalize_part(spec.part, spec.norm);
    const auto dir = a.col(static_cast<Eigen::Index>(spec.appearance_index));
    Matrix z = sample.data();
    // Only touch columns in the support so everything else stays bit-identical.
    for (Eigen::Index s = 0; s < z.cols(); ++s)
        if (phat(s) != 0.0) z.col(s) += (spec.alpha * phat(s)) * dir;
    return ActivationSample(std::move(z), sample.dims());
}

/// Nonnegative weighted sum of parts.
inline Vector combine_parts(const std::vector<Vector>& parts, const std::vector<double>& weights) {
    detail::require(!parts.empty(), "combine_parts: no parts");
    detail::require(parts.size() == weights.size(), "combine_parts: parts/weights count mismatch");
    Vector out = Vector::Zero(parts.front().size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        detail::require(parts[i].size() == out.size(),
                        "combine_parts: part " + std::to_string(i) + " has length " +
                            std::to_string(parts[i].size()) + ", expected " +
                            std::to_string(out.size()));
        detail::require(weights[i] >= 0.0, "combine_parts: weights must be nonnegative");
        out += weights[i] * parts[i];
    }
    return out.cwiseMax(0.0);
}

/// Elementwise product with a 0/1 (or [0,1]) spatial mask.
inline Vector mask_part(const Vector& part, const Vector& mask) {
    detail::require(part.size() == mask.size(),
                    "mask_part: mask length " + std::to_string(mask.size()) + " != part length " +
                        std::to_string(part.size()));
    return part.cwiseProduct(mask);
}

/// Paints the background appearance column over a region.
inline ActivationSample remove_foreground(const ActivationSample& sample, const Matrix& a,
                                          std::size_t background_index, const Vector& part,
                                          double alpha) {
    return edit_features(sample, a, EditSpec{background_index, part, alpha, PartNorm::max});
}

} // namespace sntf
