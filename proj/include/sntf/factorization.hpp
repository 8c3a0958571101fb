#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "linalg.hpp"
#include "tensor.hpp"

namespace sntf {

enum class StepRule { fixed, backtracking };

inline const char* to_string(StepRule r) {
    return r == StepRule::fixed ? "fixed" : "backtracking";
}

inline StepRule parse_step_rule(const std::string& s) {
    if (s == "fixed") return StepRule::fixed;
    if (s == "backtracking") return StepRule::backtracking;
    throw UsageError("unknown step rule '" + s + "' (expected fixed|backtracking)");
}

struct FitConfig {
    std::size_t appearance_rank = 0;  // R_C
    std::size_t parts_rank = 0;       // R_S
    std::size_t iterations = 2000;
    /// Fixed step size, or the initial trial step under backtracking.
    double learning_rate = 1e-2;
    std::optional<std::size_t> minibatch;
    std::uint64_t seed = 0;
    bool nonneg = true;
    /// Relative loss change over a 10-iteration window below which fitting stops.
    double convergence_tol = 1e-7;
    StepRule step_rule = StepRule::backtracking;
};

struct FitStats {
    double final_loss = 0.0;
    std::size_t iterations = 0;
    /// (iteration, full-batch loss); iteration 0 is the initial point.
    std::vector<std::pair<std::size_t, double>> loss_trace;
};

/// Learned appearance (C x R_C) and nonnegative parts (S x R_S) factors.
struct FactorModel {
    Matrix appearance;
    Matrix parts;
    SpatialDims dims;
    FitConfig config;
    FitStats stats;

    std::size_t appearance_rank() const { return static_cast<std::size_t>(appearance.cols()); }
    std::size_t parts_rank() const { return static_cast<std::size_t>(parts.cols()); }
};

/// Called after every iteration with the current factors.
using FitObserver = std::function<void(std::size_t iteration, const Matrix& appearance,
                                       const Matrix& parts)>;

namespace detail {

using SampleSpan = std::span<const ActivationSample>;

inline void check_conformal(SampleSpan samples, const Matrix& a, const Matrix& p,
                            const char* who) {
    require(!samples.empty(), std::string(who) + ": empty batch");
    const auto c = static_cast<Eigen::Index>(samples.front().channels());
    const auto s = static_cast<Eigen::Index>(samples.front().spatial());
    require(a.rows() == c, std::string(who) + ": A has " + std::to_string(a.rows()) +
                               " rows but C = " + std::to_string(c));
    require(p.rows() == s, std::string(who) + ": P has " + std::to_string(p.rows()) +
                               " rows but S = " + std::to_string(s));
}

inline double loss(SampleSpan samples, const Matrix& a, const Matrix& p) {
    double total = 0.0;
    for (const auto& z : samples) {
        const Matrix& zi = z.data();
        const Matrix coeff = a.transpose() * (zi * p);
        total += (zi - a * coeff * p.transpose()).squaredNorm();
    }
    return total;
}

// Same algebra as 2 sum(Pb Z^T Ab Ab Z P + Z^T Ab Ab Z Pb P - 2 Z^T Ab Z P),
// regrouped through W = A^T Z so no S x S or C x C products are formed.
inline Matrix grad_parts(SampleSpan samples, const Matrix& a, const Matrix& p) {
    const Matrix gram_a = a.transpose() * a;
    const Matrix gram_p = p.transpose() * p;
    Matrix g = Matrix::Zero(p.rows(), p.cols());
    for (const auto& z : samples) {
        const Matrix w = a.transpose() * z.data();  // R_C x S
        const Matrix m = w * p;                     // R_C x R_S
        const Matrix gm = gram_a * m;
        g += p * (m.transpose() * gm) + w.transpose() * (gm * gram_p) - 2.0 * (w.transpose() * m);
    }
    return 2.0 * g;
}

inline Matrix grad_appearance(SampleSpan samples, const Matrix& a, const Matrix& p) {
    const Matrix gram_a = a.transpose() * a;
    const Matrix gram_p = p.transpose() * p;
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    for (const auto& z : samples) {
        const Matrix y = z.data() * p;       // C x R_S
        const Matrix k = y.transpose() * a;  // R_S x R_C
        const Matrix hk = gram_p * k;
        g += a * (k.transpose() * hk) + y * (hk * gram_a) - 2.0 * (y * k);
    }
    return 2.0 * g;
}

inline void project_nonneg(Matrix& p) { p = p.cwiseMax(0.0); }

} // namespace detail

/// Sum over samples of ||Z_i - A (A^T Z_i P) P^T||_F^2.
inline double loss(const ActivationBatch& batch, const Matrix& a, const Matrix& p) {
    detail::check_conformal(batch.samples(), a, p, "loss");
    detail::require(a.cols() >= 1 && p.cols() >= 1, "loss: ranks must be >= 1");
    return detail::loss(batch.samples(), a, p);
}

/// Gradient of the loss with respect to the parts factors P.
inline Matrix grad_parts(const ActivationBatch& batch, const Matrix& a, const Matrix& p) {
    detail::check_conformal(batch.samples(), a, p, "grad_parts");
    return detail::grad_parts(batch.samples(), a, p);
}

/// Gradient of the loss with respect to the appearance factors A.
inline Matrix grad_appearance(const ActivationBatch& batch, const Matrix& a, const Matrix& p) {
    detail::check_conformal(batch.samples(), a, p, "grad_appearance");
    return detail::grad_appearance(batch.samples(), a, p);
}

/// Per-sample coefficients A^T Z_i P (R_C x R_S).
inline Matrix coefficients(const ActivationSample& sample, const Matrix& a, const Matrix& p) {
    detail::check_conformal(std::span(&sample, 1), a, p, "coefficients");
    return a.transpose() * (sample.data() * p);
}

inline Matrix reconstruct(const ActivationSample& sample, const Matrix& a, const Matrix& p) {
    return a * coefficients(sample, a, p) * p.transpose();
}

/// A^(1): leading eigenvectors of sum_i Z_i Z_i^T (the mode-2 Gram matrix).
inline Matrix init_appearance_hosvd(const ActivationBatch& batch, std::size_t rank) {
    detail::require(rank >= 1 && rank <= batch.channels(),
                    "init_appearance_hosvd: R_C = " + std::to_string(rank) + " must be in [1, C = " +
                        std::to_string(batch.channels()) + "]");
    const auto c = static_cast<Eigen::Index>(batch.channels());
    Matrix gram = Matrix::Zero(c, c);
    for (const auto& z : batch) gram.selfadjointView<Eigen::Lower>().rankUpdate(z.data());
    gram = gram.selfadjointView<Eigen::Lower>();
    return leading_eigenvectors(gram, rank);
}

/// P^(1) ~ U(0, 0.01), deterministic given the seed.
inline Matrix init_parts_random(std::size_t spatial, std::size_t rank, std::uint64_t seed) {
    detail::require(rank >= 1 && rank <= spatial,
                    "init_parts_random: R_S = " + std::to_string(rank) + " must be in [1, S = " +
                        std::to_string(spatial) + "]");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 0.01);
    Matrix p(static_cast<Eigen::Index>(spatial), static_cast<Eigen::Index>(rank));
    for (Eigen::Index j = 0; j < p.cols(); ++j)
        for (Eigen::Index i = 0; i < p.rows(); ++i) p(i, j) = dist(rng);
    return p;
}

/// Orthonormal appearance factors minimizing the loss for fixed P: leading
/// eigenvectors of sum_i Y_i (2I - P^T P) Y_i^T with Y = Z P. This reduces to
/// sum_i Y_i Y_i^T when P has orthonormal columns.
inline Matrix closed_form_appearance(const ActivationBatch& batch, const Matrix& p,
                                     std::size_t rank) {
    detail::require(rank >= 1 && rank <= batch.channels(),
                    "closed_form_appearance: R_C = " + std::to_string(rank) +
                        " must be in [1, C = " + std::to_string(batch.channels()) + "]");
    const auto projected = mode3_product(batch, p.transpose());
    const Matrix weight = 2.0 * Matrix::Identity(p.cols(), p.cols()) - p.transpose() * p;
    const auto c = static_cast<Eigen::Index>(batch.channels());
    Matrix gram = Matrix::Zero(c, c);
    for (const auto& y : projected) gram.noalias() += y * weight * y.transpose();
    gram = 0.5 * (gram + gram.transpose()).eval();
    return leading_eigenvectors(gram, rank);
}

inline void validate(const FitConfig& cfg, const ActivationBatch& batch) {
    if (cfg.iterations < 1) throw UsageError("fit: iterations must be >= 1");
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
        throw UsageError("fit: learning rate must be positive and finite");
    if (!(cfg.convergence_tol >= 0.0)) throw UsageError("fit: convergence_tol must be >= 0");
    detail::require(cfg.appearance_rank >= 1 && cfg.appearance_rank <= batch.channels(),
                    "fit: R_C = " + std::to_string(cfg.appearance_rank) + " must be in [1, C = " +
                        std::to_string(batch.channels()) + "]");
    detail::require(cfg.parts_rank >= 1 && cfg.parts_rank <= batch.spatial(),
                    "fit: R_S = " + std::to_string(cfg.parts_rank) + " must be in [1, S = " +
                        std::to_string(batch.spatial()) + "]");
    if (cfg.minibatch && (*cfg.minibatch < 1 || *cfg.minibatch > batch.size()))
        throw UsageError("fit: minibatch must be in [1, N = " + std::to_string(batch.size()) + "]");
    detail::require(batch.squared_norm() > 0.0, "fit: batch is identically zero");
}

namespace detail {

// One projected step on P (or a plain step on A) with optional backtracking.
// Returns the loss at the accepted point; step is updated in place.
template <typename Update>
double take_step(Matrix& x, const Matrix& grad, double current_loss, double& step,
                 StepRule rule, Update&& trial_loss, bool project) {
    if (rule == StepRule::fixed) {
        x -= step * grad;
        if (project) project_nonneg(x);
        return trial_loss(x);
    }
    constexpr int max_halvings = 30;
    const double initial = step;
    for (int h = 0; h <= max_halvings; ++h) {
        Matrix candidate = x - step * grad;
        if (project) project_nonneg(candidate);
        const double l = trial_loss(candidate);
        if (std::isfinite(l) && l < current_loss) {
            x = std::move(candidate);
            step *= 2.0;
            return l;
        }
        step *= 0.5;
    }
    // No decrease found: stay put.
    step = 0.5 * initial;
    return current_loss;
}

} // namespace detail

/// Projected block-coordinate descent: a PGD step on P followed by a gradient
/// step on A evaluated at the updated P.
inline FactorModel fit(const ActivationBatch& batch, const FitConfig& cfg,
                       const FitObserver& observer = {}) {
    validate(cfg, batch);

    FactorModel model;
    model.dims = batch.dims();
    model.config = cfg;
    Matrix a = init_appearance_hosvd(batch, cfg.appearance_rank);
    Matrix p = init_parts_random(batch.spatial(), cfg.parts_rank, cfg.seed);

    const auto all = std::span(batch.samples());
    std::vector<std::size_t> indices(batch.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const bool stochastic = cfg.minibatch && *cfg.minibatch < batch.size();
    constexpr std::size_t stochastic_trace_every = 50;
    constexpr std::size_t window = 10;

    auto& trace = model.stats.loss_trace;
    double full_loss = detail::loss(all, a, p);
    trace.emplace_back(0, full_loss);
    std::vector<double> history{full_loss};

    double step_p = cfg.learning_rate;
    double step_a = cfg.learning_rate;
    std::size_t t = 0;
    for (t = 1; t <= cfg.iterations; ++t) {
        std::vector<ActivationSample> drawn;
        detail::SampleSpan active = all;
        if (stochastic) {
            std::vector<std::size_t> pick;
            pick.reserve(*cfg.minibatch);
            std::sample(indices.begin(), indices.end(), std::back_inserter(pick), *cfg.minibatch,
                        rng);
            drawn.reserve(pick.size());
            for (auto i : pick) drawn.push_back(batch[i]);
            active = drawn;
        }

        double cur = stochastic ? detail::loss(active, a, p) : full_loss;
        const Matrix gp = detail::grad_parts(active, a, p);
        cur = detail::take_step(
            p, gp, cur, step_p, cfg.step_rule,
            [&](const Matrix& cand) { return detail::loss(active, a, cand); }, cfg.nonneg);
        if (!std::isfinite(cur))
            throw NumericalError("fit: loss became non-finite at iteration " + std::to_string(t) +
                                 " (parts step)");

        const Matrix ga = detail::grad_appearance(active, a, p);
        cur = detail::take_step(
            a, ga, cur, step_a, cfg.step_rule,
            [&](const Matrix& cand) { return detail::loss(active, cand, p); }, false);
        if (!std::isfinite(cur))
            throw NumericalError("fit: loss became non-finite at iteration " + std::to_string(t) +
                                 " (appearance step)");

        if (observer) observer(t, a, p);

        bool converged = false;
        if (!stochastic) {
            full_loss = cur;
            trace.emplace_back(t, full_loss);
            history.push_back(full_loss);
            if (full_loss == 0.0) {
                converged = true;
            } else if (history.size() > window) {
                const double prev = history[history.size() - 1 - window];
                converged = std::abs(prev - full_loss) <= cfg.convergence_tol * prev;
            }
        } else if (t % stochastic_trace_every == 0 || t == cfg.iterations) {
            const double prev = full_loss;
            full_loss = detail::loss(all, a, p);
            if (!std::isfinite(full_loss))
                throw NumericalError("fit: loss became non-finite at iteration " +
                                     std::to_string(t));
            trace.emplace_back(t, full_loss);
            converged = full_loss == 0.0 || std::abs(prev - full_loss) <= cfg.convergence_tol * prev;
        }
        if (converged) break;
    }
    const std::size_t ran = std::min(t, cfg.iterations);
    if (trace.back().first != ran) {
        full_loss = detail::loss(all, a, p);
        trace.emplace_back(ran, full_loss);
    }

    // The loss is unchanged under (A, P) -> (A / s, P * s). Pick the
    // representative with ||A||_F^2 = R_C so A's diagnostics are comparable.
    const double sq = a.squaredNorm();
    if (sq > 0.0 && std::isfinite(sq)) {
        const double s = std::sqrt(sq / static_cast<double>(a.cols()));
        a /= s;
        p *= s;
    }

    model.appearance = std::move(a);
    model.parts = std::move(p);
    model.stats.final_loss = trace.back().second;
    model.stats.iterations = ran;
    return model;
}

/// ||Z - Zhat||_F / ||Z||_F over the whole batch.
inline double relative_error(const ActivationBatch& batch, const Matrix& a, const Matrix& p) {
    return std::sqrt(loss(batch, a, p) / batch.squared_norm());
}

} // namespace sntf
