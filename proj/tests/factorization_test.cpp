#include <gtest/gtest.h>

#include <sntf/analysis.hpp>
#include <sntf/factorization.hpp>
#include <sntf/synthetic.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "test_support.hpp"

namespace sntf {
namespace {

ActivationBatch single(const Matrix& z, std::size_t h, std::size_t w) {
    return ActivationBatch({ActivationSample(z, SpatialDims{h, w})});
}

TEST(InitAppearanceHosvd, DiagonalCase) {
    Matrix z(2, 2);
    z << 3, 0, 0, 1;
    const Matrix a = init_appearance_hosvd(single(z, 1, 2), 1);
    EXPECT_NEAR(std::abs(a(0, 0)), 1.0, 1e-12);
    EXPECT_NEAR(a(1, 0), 0.0, 1e-12);
}

TEST(InitAppearanceHosvd, FullRankIsOrthonormal) {
    std::mt19937_64 rng(21);
    const auto batch = test::random_batch(rng, 4, 6, 3, 3);
    const Matrix a = init_appearance_hosvd(batch, 6);
    EXPECT_LT((a.transpose() * a - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(InitAppearanceHosvd, MatchesJacobiOracle) {
    std::mt19937_64 rng(22);
    const auto batch = test::random_batch(rng, 5, 8, 4, 5);
    Matrix gram = Matrix::Zero(8, 8);
    for (const auto& z : batch) gram += test::naive_matmul(z.data(), test::naive_transpose(z.data()));
    const auto [vals, vecs] = test::jacobi_eigen(gram);
    const Matrix a = init_appearance_hosvd(batch, 3);
    EXPECT_LT(test::column_sign_distance(a, vecs.leftCols(3)), 1e-8);
    EXPECT_GT(vals(2), vals(3));
}

TEST(InitAppearanceHosvd, RejectsRankAboveChannels) {
    std::mt19937_64 rng(23);
    const auto batch = test::random_batch(rng, 2, 3, 2, 2);
    EXPECT_THROW(init_appearance_hosvd(batch, 4), DataError);
    EXPECT_THROW(init_appearance_hosvd(batch, 0), DataError);
}

TEST(InitPartsRandom, RangeAndDeterminism) {
    for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 123456789ULL}) {
        const Matrix p = init_parts_random(64, 4, seed);
        EXPECT_GE(p.minCoeff(), 0.0);
        EXPECT_LE(p.maxCoeff(), 0.01);
        EXPECT_EQ(p, init_parts_random(64, 4, seed));
    }
    EXPECT_NE(init_parts_random(64, 4, 1), init_parts_random(64, 4, 2));
    EXPECT_THROW(init_parts_random(3, 4, 0), DataError);
}

TEST(Loss, ExactReconstructionAndZeroProjection) {
    Matrix z(2, 2);
    z << 1, 2, 3, 4;
    const auto batch = single(z, 1, 2);
    EXPECT_EQ(loss(batch, Matrix::Identity(2, 2), Matrix::Identity(2, 2)), 0.0);
    EXPECT_EQ(loss(batch, Matrix::Identity(2, 2), Matrix::Zero(2, 2)), 30.0);
}

TEST(Loss, MatchesNaiveReconstruction) {
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 5; ++trial) {
        const auto batch = test::random_batch(rng, 2, 4, 2, 3);
        const Matrix a = test::random_matrix(rng, 4, 2), p = test::random_matrix(rng, 6, 2, 0.0, 1.0);
        EXPECT_NEAR(loss(batch, a, p), test::naive_loss(batch, a, p), 1e-10);
    }
}

TEST(Loss, RejectsMismatch) {
    std::mt19937_64 rng(25);
    const auto batch = test::random_batch(rng, 2, 4, 2, 3);
    EXPECT_THROW(loss(batch, Matrix::Ones(3, 2), Matrix::Ones(6, 2)), DataError);
    EXPECT_THROW(loss(batch, Matrix::Ones(4, 2), Matrix::Ones(5, 2)), DataError);
    EXPECT_THROW(grad_parts(batch, Matrix::Ones(4, 2), Matrix::Ones(5, 2)), DataError);
    EXPECT_THROW(grad_appearance(batch, Matrix::Ones(3, 2), Matrix::Ones(6, 2)), DataError);
}

TEST(Loss, JointColumnPermutationInvariance) {
    std::mt19937_64 rng(26);
    const auto batch = test::random_batch(rng, 3, 5, 2, 4);
    const Matrix a = test::random_matrix(rng, 5, 3), p = test::random_matrix(rng, 8, 3, 0.0, 1.0);
    Eigen::PermutationMatrix<Eigen::Dynamic> pa(3), pp(3);
    pa.indices() << 2, 0, 1;
    pp.indices() << 1, 2, 0;
    EXPECT_NEAR(loss(batch, a * pa, p * pp), loss(batch, a, p), 1e-10);
}

TEST(GradParts, ZeroAtExactReconstruction) {
    std::mt19937_64 rng(27);
    const auto batch = test::random_batch(rng, 3, 4, 2, 2);
    EXPECT_LT(grad_parts(batch, Matrix::Identity(4, 4), Matrix::Identity(4, 4)).norm(), 1e-12);
}

TEST(GradParts, MatchesFiniteDifferences) {
    std::mt19937_64 rng(28);
    const auto batch = test::random_batch(rng, 3, 8, 3, 4);
    const Matrix a = test::random_matrix(rng, 8, 4), p = test::random_matrix(rng, 12, 3, 0.0, 1.0);
    const Matrix fd = test::central_difference(
        [&](const Matrix& x) { return test::naive_loss(batch, a, x); }, p);
    EXPECT_LT(test::relative_difference(grad_parts(batch, a, p), fd), 1e-6);
}

TEST(GradParts, MatchesLiteralFormula) {
    std::mt19937_64 rng(29);
    const auto batch = test::random_batch(rng, 2, 5, 2, 3);
    const Matrix a = test::random_matrix(rng, 5, 2), p = test::random_matrix(rng, 6, 3);
    const Matrix ab = a * a.transpose(), pb = p * p.transpose();
    Matrix want = Matrix::Zero(6, 3);
    for (const auto& s : batch) {
        const Matrix& z = s.data();
        want += pb * z.transpose() * ab * ab * z * p + z.transpose() * ab * ab * z * pb * p -
                2.0 * z.transpose() * ab * z * p;
    }
    want *= 2.0;
    EXPECT_LT(test::relative_difference(grad_parts(batch, a, p), want), 1e-12);
}

TEST(GradParts, QuarticScalingInData) {
    std::mt19937_64 rng(30);
    const auto batch = test::random_batch(rng, 2, 4, 2, 2);
    std::vector<ActivationSample> doubled;
    for (const auto& s : batch) doubled.emplace_back(2.0 * s.data(), s.dims());
    const Matrix a = test::random_matrix(rng, 4, 2), p = test::random_matrix(rng, 4, 2);
    EXPECT_LT(test::relative_difference(grad_parts(ActivationBatch(doubled), a, p),
                                        4.0 * grad_parts(batch, a, p)),
              1e-13);
}

TEST(GradAppearance, ZeroCases) {
    std::mt19937_64 rng(31);
    const auto batch = test::random_batch(rng, 3, 4, 2, 2);
    EXPECT_LT(grad_appearance(batch, Matrix::Identity(4, 4), Matrix::Identity(4, 4)).norm(), 1e-12);
    EXPECT_EQ(grad_appearance(batch, test::random_matrix(rng, 4, 2), Matrix::Zero(4, 2)).norm(), 0.0);
}

TEST(GradAppearance, MatchesFiniteDifferences) {
    std::mt19937_64 rng(32);
    const auto batch = test::random_batch(rng, 3, 8, 3, 4);
    const Matrix a = test::random_matrix(rng, 8, 4), p = test::random_matrix(rng, 12, 3, 0.0, 1.0);
    const Matrix fd = test::central_difference(
        [&](const Matrix& x) { return test::naive_loss(batch, x, p); }, a);
    EXPECT_LT(test::relative_difference(grad_appearance(batch, a, p), fd), 1e-6);
}

TEST(GradAppearance, MatchesLiteralFormula) {
    std::mt19937_64 rng(33);
    const auto batch = test::random_batch(rng, 2, 5, 2, 3);
    const Matrix a = test::random_matrix(rng, 5, 2), p = test::random_matrix(rng, 6, 3);
    const Matrix ab = a * a.transpose(), pb = p * p.transpose();
    Matrix want = Matrix::Zero(5, 2);
    for (const auto& s : batch) {
        const Matrix& z = s.data();
        want += ab * z * pb * pb * z.transpose() * a + z * pb * pb * z.transpose() * ab * a -
                2.0 * z * pb * z.transpose() * a;
    }
    want *= 2.0;
    EXPECT_LT(test::relative_difference(grad_appearance(batch, a, p), want), 1e-12);
}

TEST(Coefficients, Cases) {
    std::mt19937_64 rng(34);
    const auto batch = test::random_batch(rng, 1, 3, 1, 3);
    const auto& z = batch[0];
    EXPECT_EQ(coefficients(z, Matrix::Identity(3, 3), Matrix::Identity(3, 3)), z.data());
    EXPECT_TRUE(coefficients(z, test::random_matrix(rng, 3, 2), Matrix::Zero(3, 2)).isZero(0.0));
    const Matrix a = test::random_matrix(rng, 3, 2), p = test::random_matrix(rng, 3, 2);
    const Matrix want = test::naive_matmul(test::naive_matmul(test::naive_transpose(a), z.data()), p);
    EXPECT_LT((coefficients(z, a, p) - want).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(coefficients(z, Matrix::Ones(2, 2), p), DataError);
}

TEST(Reconstruct, Cases) {
    std::mt19937_64 rng(35);
    const auto batch = test::random_batch(rng, 1, 4, 2, 3);
    const auto& z = batch[0];
    EXPECT_LT((reconstruct(z, Matrix::Identity(4, 4), Matrix::Identity(6, 6)) - z.data()).norm(), 1e-14);
    EXPECT_TRUE(reconstruct(z, test::random_matrix(rng, 4, 2), Matrix::Zero(6, 2)).isZero(0.0));
    const Matrix a = test::random_matrix(rng, 4, 2), p = test::random_matrix(rng, 6, 3);
    EXPECT_LT((reconstruct(z, a, p) - test::naive_reconstruct(z.data(), a, p)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_THROW(reconstruct(z, a, Matrix::Ones(5, 3)), DataError);
}

TEST(ClosedFormAppearance, IdentityPartsMatchesHosvd) {
    std::mt19937_64 rng(36);
    const auto batch = test::random_batch(rng, 4, 6, 2, 4);
    EXPECT_LT((closed_form_appearance(batch, Matrix::Identity(8, 8), 3) - init_appearance_hosvd(batch, 3))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-10);
}

TEST(ClosedFormAppearance, RecoversPlantedSubspace) {
    auto [batch, truth] = plant({20, 16, 8, 8}, 4, 4, 0.0, 5);
    const Matrix a = closed_form_appearance(batch, truth.parts, 4);
    EXPECT_LT(largest_principal_angle(a, truth.appearance), 1e-6);
    EXPECT_LT(orthogonality_residual(a), 1e-10);
}

TEST(ClosedFormAppearance, BeatsRandomOrthonormalProbes) {
    std::mt19937_64 rng(37);
    const auto batch = test::random_batch(rng, 5, 8, 3, 4);
    const Matrix p = test::random_matrix(rng, 12, 3, 0.0, 1.0);
    const double best = loss(batch, closed_form_appearance(batch, p, 3), p);
    for (int i = 0; i < 100; ++i)
        EXPECT_LE(best, loss(batch, test::random_orthonormal(rng, 8, 3), p) + 1e-12);
}

TEST(ClosedFormAppearance, RejectsBadRank) {
    std::mt19937_64 rng(38);
    const auto batch = test::random_batch(rng, 2, 3, 2, 2);
    EXPECT_THROW(closed_form_appearance(batch, Matrix::Identity(4, 4), 5), DataError);
}

FitConfig planted_config(std::uint64_t seed, bool nonneg = true) {
    FitConfig cfg;
    cfg.appearance_rank = 4;
    cfg.parts_rank = 4;
    cfg.seed = seed;
    cfg.nonneg = nonneg;
    return cfg;
}

TEST(Fit, RecoversPlantedModel) {
    auto [batch, truth] = plant({20, 16, 8, 8}, 4, 4, 0.0, 3);
    const auto model = fit(batch, planted_config(3));
    EXPECT_LE(model.stats.iterations, 2000u);
    EXPECT_LT(relative_error(batch, model.appearance, model.parts), 1e-2);
    EXPECT_LT(orthogonality_residual(model.appearance), 0.05);
    const auto score = recovery_score(model, truth);
    EXPECT_LT(score.appearance_angle, 0.1);
    EXPECT_GT(score.mean_part_iou(), 0.7);
}

TEST(Fit, PartsStayNonnegativeEveryIteration) {
    auto [batch, truth] = plant({10, 8, 6, 6}, 3, 4, 0.05, 4);
    FitConfig cfg = planted_config(4);
    cfg.appearance_rank = 3;
    cfg.iterations = 300;
    std::size_t calls = 0;
    double worst = 0.0;
    fit(batch, cfg, [&](std::size_t, const Matrix&, const Matrix& p) {
        ++calls;
        worst = std::min(worst, p.minCoeff());
    });
    EXPECT_GT(calls, 0u);
    EXPECT_GE(worst, 0.0);
}

TEST(Fit, BacktrackingTraceIsMonotone) {
    std::mt19937_64 rng(39);
    const auto batch = test::random_batch(rng, 6, 6, 3, 3);
    FitConfig cfg;
    cfg.appearance_rank = 3;
    cfg.parts_rank = 2;
    cfg.iterations = 200;
    cfg.seed = 9;
    const auto model = fit(batch, cfg);
    const auto& trace = model.stats.loss_trace;
    ASSERT_GE(trace.size(), 2u);
    for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i].second, trace[i - 1].second);
    EXPECT_EQ(trace.front().first, 0u);
    EXPECT_EQ(trace.back().first, model.stats.iterations);
    EXPECT_EQ(model.stats.final_loss, trace.back().second);
}

TEST(Fit, ReturnsUnitScaleAppearance) {
    auto [batch, truth] = plant({10, 8, 6, 6}, 3, 3, 0.05, 12);
    FitConfig cfg = planted_config(12);
    cfg.appearance_rank = 3;
    cfg.parts_rank = 3;
    cfg.iterations = 200;
    Matrix last_a, last_p;
    const auto model = fit(batch, cfg, [&](std::size_t, const Matrix& a, const Matrix& p) {
        last_a = a;
        last_p = p;
    });
    EXPECT_NEAR(model.appearance.squaredNorm(), 3.0, 1e-12);
    // Same reconstruction as the last iterate, only the scale split moved.
    const double before = loss(batch, last_a, last_p);
    EXPECT_NEAR(loss(batch, model.appearance, model.parts), before, 1e-10 * before);
    EXPECT_NEAR(model.stats.final_loss, before, 1e-10 * before);
    EXPECT_GE(model.parts.minCoeff(), 0.0);
}

TEST(Fit, UnconstrainedVariantLosesLocality) {
    auto [batch, truth] = plant({20, 16, 8, 8}, 4, 4, 0.0, 3);
    const auto free_model = fit(batch, planted_config(3, false));
    const auto model = fit(batch, planted_config(3, true));
    EXPECT_LT(free_model.parts.minCoeff(), 0.0);
    EXPECT_GT(part_sparsity(model.parts).mean(), part_sparsity(free_model.parts).mean());
}

TEST(Fit, FixedStepFollowsPlainIteration) {
    auto [batch, truth] = plant({5, 6, 4, 4}, 2, 2, 0.0, 8);
    FitConfig cfg;
    cfg.appearance_rank = 2;
    cfg.parts_rank = 2;
    cfg.iterations = 3;
    cfg.learning_rate = 1e-3;
    cfg.step_rule = StepRule::fixed;
    cfg.convergence_tol = 0.0;
    cfg.seed = 8;
    const auto model = fit(batch, cfg);

    // Replay the iteration by hand.
    Matrix a = init_appearance_hosvd(batch, 2);
    Matrix p = init_parts_random(16, 2, 8);
    for (int t = 0; t < 3; ++t) {
        p = (p - cfg.learning_rate * grad_parts(batch, a, p)).cwiseMax(0.0);
        a = a - cfg.learning_rate * grad_appearance(batch, a, p);
    }
    const double s = std::sqrt(a.squaredNorm() / 2.0);
    a /= s;
    p *= s;
    EXPECT_LT((model.parts - p).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((model.appearance - a).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(model.stats.iterations, 3u);
}

TEST(Fit, DivergenceNamesIteration) {
    std::mt19937_64 rng(40);
    const auto batch = test::random_batch(rng, 3, 4, 2, 2);
    FitConfig cfg;
    cfg.appearance_rank = 2;
    cfg.parts_rank = 2;
    cfg.learning_rate = 1e6;
    cfg.step_rule = StepRule::fixed;
    try {
        fit(batch, cfg);
        FAIL() << "expected divergence";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos);
    }
}

TEST(Fit, MinibatchIsSeedDeterministic) {
    auto [batch, truth] = plant({12, 8, 4, 4}, 2, 2, 0.01, 10);
    FitConfig cfg;
    cfg.appearance_rank = 2;
    cfg.parts_rank = 2;
    cfg.iterations = 120;
    cfg.minibatch = 4;
    cfg.seed = 10;
    const auto m1 = fit(batch, cfg);
    const auto m2 = fit(batch, cfg);
    EXPECT_EQ(m1.parts, m2.parts);
    EXPECT_EQ(m1.appearance, m2.appearance);
    // Full-batch trace every 50 iterations plus start and end.
    ASSERT_EQ(m1.stats.loss_trace.size(), 4u);
    EXPECT_EQ(m1.stats.loss_trace[1].first, 50u);
    EXPECT_LT(m1.stats.final_loss, m1.stats.loss_trace.front().second);
    cfg.seed = 11;
    EXPECT_NE(fit(batch, cfg).parts, m1.parts);
}

TEST(Fit, RejectsInvalidConfig) {
    std::mt19937_64 rng(41);
    const auto batch = test::random_batch(rng, 3, 4, 2, 2);
    FitConfig cfg;
    cfg.appearance_rank = 2;
    cfg.parts_rank = 2;
    auto bad = cfg;
    bad.parts_rank = 5;
    EXPECT_THROW(fit(batch, bad), DataError);
    bad = cfg;
    bad.appearance_rank = 0;
    EXPECT_THROW(fit(batch, bad), DataError);
    bad = cfg;
    bad.learning_rate = 0.0;
    EXPECT_THROW(fit(batch, bad), UsageError);
    bad = cfg;
    bad.iterations = 0;
    EXPECT_THROW(fit(batch, bad), UsageError);
    bad = cfg;
    bad.minibatch = 4;
    EXPECT_THROW(fit(batch, bad), UsageError);
    bad = cfg;
    bad.minibatch = 0;
    EXPECT_THROW(fit(batch, bad), UsageError);
    bad = cfg;
    bad.convergence_tol = -1.0;
    EXPECT_THROW(fit(batch, bad), UsageError);

    const ActivationBatch zeros({ActivationSample(Matrix::Zero(4, 4), {2, 2})});
    EXPECT_THROW(fit(zeros, cfg), DataError);
}

} // namespace
} // namespace sntf
