#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "factorization.hpp"
#include "linalg.hpp"
#include "metrics.hpp"
#include "tensor.hpp"

namespace sntf {

struct PlantDims {
    std::size_t samples = 0;   // N
    std::size_t channels = 0;  // C
    std::size_t height = 0;
    std::size_t width = 0;
};

/// Ground truth behind a planted batch: Z_i = A* Lambda_i P*^T + noise.
struct PlantedTruth {
    Matrix appearance;            // C x R_C, orthonormal columns
    Matrix parts;                 // S x R_S, disjoint contiguous blocks, unit columns
    std::vector<Matrix> lambdas;  // N x (R_C x R_S)
    SpatialDims dims;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

/// Block-partition parts: column k is the indicator of the k-th contiguous
/// row-major block, scaled to unit norm.
inline Matrix block_parts(std::size_t spatial, std::size_t rank) {
    detail::require(rank >= 1 && rank <= spatial && spatial % rank == 0,
                    "block_parts: R_S = " + std::to_string(rank) + " must divide S = " +
                        std::to_string(spatial));
    const std::size_t block = spatial / rank;
    const double v = 1.0 / std::sqrt(static_cast<double>(block));
    Matrix p = Matrix::Zero(static_cast<Eigen::Index>(spatial), static_cast<Eigen::Index>(rank));
    for (std::size_t k = 0; k < rank; ++k)
        p.block(static_cast<Eigen::Index>(k * block), static_cast<Eigen::Index>(k),
                static_cast<Eigen::Index>(block), 1)
            .setConstant(v);
    return p;
}

/// Circularly shifts every parts column on the H x W grid by (dh, dw).
inline Matrix shift_parts(const Matrix& p, SpatialDims dims, std::ptrdiff_t dh, std::ptrdiff_t dw) {
    detail::require(static_cast<std::size_t>(p.rows()) == dims.size(), "shift_parts: S mismatch");
    const auto h = static_cast<std::ptrdiff_t>(dims.height);
    const auto w = static_cast<std::ptrdiff_t>(dims.width);
    Matrix out(p.rows(), p.cols());
    for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            const auto ty = ((y + dh) % h + h) % h;
            const auto tx = ((x + dw) % w + w) % w;
            out.row(ty * w + tx) = p.row(y * w + x);
        }
    return out;
}

/// A* Lambda P^T, plus optional Gaussian noise.
inline ActivationSample planted_sample(const Matrix& a, const Matrix& lambda, const Matrix& p,
                                       SpatialDims dims, double noise_sigma = 0.0,
                                       std::mt19937_64* rng = nullptr) {
    Matrix z = a * lambda * p.transpose();
    if (noise_sigma > 0.0) {
        detail::require(rng != nullptr, "planted_sample: noise requires a generator");
        std::normal_distribution<double> noise(0.0, noise_sigma);
        for (Eigen::Index j = 0; j < z.cols(); ++j)
            for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) += noise(*rng);
    }
    return ActivationSample(std::move(z), dims);
}

inline std::pair<ActivationBatch, PlantedTruth> plant(const PlantDims& dims,
                                                      std::size_t appearance_rank,
                                                      std::size_t parts_rank, double noise_sigma,
                                                      std::uint64_t seed) {
    const SpatialDims spatial{dims.height, dims.width};
    detail::require(dims.samples >= 1 && dims.channels >= 1 && dims.height >= 1 && dims.width >= 1,
                    "plant: all dimensions must be >= 1");
    detail::require(appearance_rank >= 1 && appearance_rank <= dims.channels,
                    "plant: R_C must be in [1, C]");
    detail::require(noise_sigma >= 0.0, "plant: noise_sigma must be >= 0");

    PlantedTruth truth;
    truth.dims = spatial;
    truth.noise_sigma = noise_sigma;
    truth.seed = seed;
    truth.parts = block_parts(spatial.size(), parts_rank);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix g(static_cast<Eigen::Index>(dims.channels), static_cast<Eigen::Index>(appearance_rank));
    for (Eigen::Index j = 0; j < g.cols(); ++j)
        for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = gauss(rng);
    truth.appearance = orthonormal_basis(g);

    std::uniform_real_distribution<double> coeff(0.5, 1.5);
    std::vector<ActivationSample> samples;
    samples.reserve(dims.samples);
    for (std::size_t n = 0; n < dims.samples; ++n) {
        Matrix lambda(static_cast<Eigen::Index>(appearance_rank),
                      static_cast<Eigen::Index>(parts_rank));
        for (Eigen::Index j = 0; j < lambda.cols(); ++j)
            for (Eigen::Index i = 0; i < lambda.rows(); ++i) lambda(i, j) = coeff(rng);
        truth.lambdas.push_back(lambda);
    }
    for (const auto& lambda : truth.lambdas)
        samples.push_back(
            planted_sample(truth.appearance, lambda, truth.parts, spatial, noise_sigma, &rng));
    return {ActivationBatch(std::move(samples)), std::move(truth)};
}

/// Positions where a column reaches at least 10% of its maximum.
inline std::vector<bool> part_support(const Vector& column, double fraction = 0.1) {
    std::vector<bool> out(static_cast<std::size_t>(column.size()), false);
    const double peak = column.maxCoeff();
    if (!(peak > 0.0)) return out;
    for (Eigen::Index s = 0; s < column.size(); ++s)
        out[static_cast<std::size_t>(s)] = column(s) >= fraction * peak;
    return out;
}

/// Greedy one-to-one matching of fitted columns to reference columns by
/// cosine similarity. Returns, for each reference column, the fitted index.
inline std::vector<std::size_t> match_parts(const Matrix& fitted, const Matrix& reference) {
    detail::require(fitted.rows() == reference.rows() && fitted.cols() == reference.cols(),
                    "match_parts: shape mismatch");
    const auto r = static_cast<std::size_t>(reference.cols());
    Matrix sim(reference.cols(), fitted.cols());
    for (Eigen::Index i = 0; i < reference.cols(); ++i)
        for (Eigen::Index j = 0; j < fitted.cols(); ++j) {
            const double den = reference.col(i).norm() * fitted.col(j).norm();
            sim(i, j) = den > 0.0 ? reference.col(i).dot(fitted.col(j)) / den : 0.0;
        }
    std::vector<std::size_t> assignment(r, r);
    std::vector<bool> ref_used(r, false), fit_used(r, false);
    for (std::size_t round = 0; round < r; ++round) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < r; ++i) {
            if (ref_used[i]) continue;
            for (std::size_t j = 0; j < r; ++j) {
                if (fit_used[j]) continue;
                const double v = sim(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (v > best) {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        }
        ref_used[bi] = fit_used[bj] = true;
        assignment[bi] = bj;
    }
    return assignment;
}

/// Per-reference-column support IoU after greedy matching.
inline std::vector<double> matched_part_iou(const Matrix& fitted, const Matrix& reference) {
    const auto assignment = match_parts(fitted, reference);
    std::vector<double> out;
    out.reserve(assignment.size());
    for (std::size_t i = 0; i < assignment.size(); ++i)
        out.push_back(iou(part_support(reference.col(static_cast<Eigen::Index>(i))),
                                  part_support(fitted.col(static_cast<Eigen::Index>(assignment[i])))));
    return out;
}

struct RecoveryScore {
    double appearance_angle = 0.0;  // radians
    std::vector<double> part_iou;   // one per planted column

    double mean_part_iou() const {
        double s = 0.0;
        for (double v : part_iou) s += v;
        return part_iou.empty() ? 0.0 : s / static_cast<double>(part_iou.size());
    }
};

inline RecoveryScore recovery_score(const Matrix& appearance, const Matrix& parts,
                                    const PlantedTruth& truth) {
    detail::require(appearance.cols() == truth.appearance.cols() &&
                        appearance.rows() == truth.appearance.rows(),
                    "recovery_score: appearance shape " +
                        detail::shape_str(appearance.rows(), appearance.cols()) +
                        " does not match truth " +
                        detail::shape_str(truth.appearance.rows(), truth.appearance.cols()));
    detail::require(parts.cols() == truth.parts.cols() && parts.rows() == truth.parts.rows(),
                    "recovery_score: parts shape " + detail::shape_str(parts.rows(), parts.cols()) +
                        " does not match truth " +
                        detail::shape_str(truth.parts.rows(), truth.parts.cols()));
    RecoveryScore score;
    score.appearance_angle = largest_principal_angle(appearance, truth.appearance);
    score.part_iou = matched_part_iou(parts, truth.parts);
    return score;
}

inline RecoveryScore recovery_score(const FactorModel& model, const PlantedTruth& truth) {
    return recovery_score(model.appearance, model.parts, truth);
}

} // namespace sntf
