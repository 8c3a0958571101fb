#pragma once

#include <cmath>
#include <span>
#include <string>

#include "error.hpp"
#include "factorization.hpp"
#include "tensor.hpp"

namespace sntf {

struct RefineConfig {
    std::size_t iterations = 100;
    /// Fixed step, or initial trial step under backtracking. Zero leaves P unchanged.
    double learning_rate = 1e-2;
    StepRule step_rule = StepRule::backtracking;
};

/// Sample-specific parts factors specialized from the global ones.
struct RefinedParts {
    Matrix parts;
    std::size_t sample_index = 0;
    std::size_t iterations_run = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

using RefineObserver = std::function<void(std::size_t iteration, const Matrix& parts, double loss)>;

/// Projected gradient descent on the single-sample reconstruction loss with A
/// frozen, starting from the global parts factors.
inline RefinedParts refine_parts(const ActivationSample& sample, std::size_t sample_index,
                                 const Matrix& a, const Matrix& p_global,
                                 const RefineConfig& cfg = {},
                                 const RefineObserver& observer = {}) {
    const auto one = std::span(&sample, 1);
    detail::check_conformal(one, a, p_global, "refine_parts");
    detail::require(p_global.minCoeff() >= 0.0, "refine_parts: global parts must be nonnegative");
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
        throw UsageError("refine_parts: learning rate must be finite and >= 0");

    RefinedParts out;
    out.sample_index = sample_index;
    out.parts = p_global;
    out.initial_loss = detail::loss(one, a, p_global);
    double current = out.initial_loss;
    double step = cfg.learning_rate;
    std::size_t t = 0;
    for (t = 1; t <= cfg.iterations; ++t) {
        if (step == 0.0 || current == 0.0) break;
        const Matrix g = detail::grad_parts(one, a, out.parts);
        current = detail::take_step(
            out.parts, g, current, step, cfg.step_rule,
            [&](const Matrix& cand) { return detail::loss(one, a, cand); }, true);
        if (!std::isfinite(current))
            throw NumericalError("refine_parts: loss became non-finite at iteration " +
                                 std::to_string(t) + " for sample " + std::to_string(sample_index));
        if (observer) observer(t, out.parts, current);
    }
    out.iterations_run = t - 1;
    out.final_loss = current;
    return out;
}

} // namespace sntf
