#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace sntf {

/// Per-position magnitude of one appearance concept in one sample.
struct SaliencyMap {
    Vector values;  // length S
    std::size_t concept_index = 0;
    std::size_t sample_index = 0;
    SpatialDims dims;

    Matrix folded() const { return fold_spatial(values, dims.height, dims.width); }
};

struct ConceptMask {
    std::vector<bool> bits;  // bits[s] = saliency[s] >= threshold
    double threshold = 0.0;
    SpatialDims dims;
};

struct ConceptThreshold {
    double mean = 0.0;  // mu_k over all samples and positions
    std::vector<ConceptMask> masks;
};

/// Change of basis a_k^T Z_i.
inline SaliencyMap saliency(const ActivationSample& sample, const Matrix& a, std::size_t k,
                            std::size_t sample_index = 0) {
    detail::require(static_cast<std::size_t>(a.rows()) == sample.channels(),
                    "saliency: A has " + std::to_string(a.rows()) + " rows but C = " +
                        std::to_string(sample.channels()));
    detail::require(k < static_cast<std::size_t>(a.cols()),
                    "saliency: concept " + std::to_string(k) + " out of range [0, " +
                        std::to_string(a.cols()) + ")");
    SaliencyMap m;
    m.values = sample.data().transpose() * a.col(static_cast<Eigen::Index>(k));
    m.concept_index = k;
    m.sample_index = sample_index;
    m.dims = sample.dims();
    return m;
}

/// Grand-mean threshold of concept k and the per-sample masks [m >= mu_k].
inline ConceptThreshold concept_threshold(const ActivationBatch& batch, const Matrix& a,
                                          std::size_t k) {
    std::vector<SaliencyMap> maps;
    maps.reserve(batch.size());
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        maps.push_back(saliency(batch[i], a, k, i));
        total += maps.back().values.sum();
    }
    ConceptThreshold out;
    out.mean = total / static_cast<double>(batch.size() * batch.spatial());
    for (const auto& m : maps) {
        ConceptMask mask;
        mask.threshold = out.mean;
        mask.dims = m.dims;
        mask.bits.resize(static_cast<std::size_t>(m.values.size()));
        for (Eigen::Index s = 0; s < m.values.size(); ++s)
            mask.bits[static_cast<std::size_t>(s)] = m.values(s) >= out.mean;
        out.masks.push_back(std::move(mask));
    }
    return out;
}

/// mean |A^T A - I|.
inline double orthogonality_residual(const Matrix& a) {
    detail::require(a.cols() >= 1, "orthogonality_residual: empty factor");
    const Matrix d = a.transpose() * a - Matrix::Identity(a.cols(), a.cols());
    return d.cwiseAbs().mean();
}

/// Hoyer sparsity per column; an all-zero column counts as maximally sparse.
inline Vector part_sparsity(const Matrix& p) {
    const double n = static_cast<double>(p.rows());
    Vector out(p.cols());
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        const double l2 = p.col(j).norm();
        if (l2 == 0.0 || p.rows() == 1) {
            out(j) = 1.0;
            continue;
        }
        const double l1 = p.col(j).lpNorm<1>();
        out(j) = (std::sqrt(n) - l1 / l2) / (std::sqrt(n) - 1.0);
    }
    return out;
}

/// argmax over parts per position; ties go to the lowest column.
inline std::vector<std::size_t> part_assignment(const Matrix& p) {
    detail::require(p.cols() >= 1, "part_assignment: no parts");
    std::vector<std::size_t> out(static_cast<std::size_t>(p.rows()), 0);
    for (Eigen::Index s = 0; s < p.rows(); ++s) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < p.cols(); ++j)
            if (p(s, j) > p(s, best)) best = j;
        out[static_cast<std::size_t>(s)] = static_cast<std::size_t>(best);
    }
    return out;
}

} // namespace sntf
