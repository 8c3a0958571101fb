#pragma once

// Independent reference implementations used as oracles. Nothing here calls
// into the library's numerical kernels.

#include <sntf/tensor.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

namespace sntf::test {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                            double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = d(rng);
    return m;
}

inline ActivationBatch random_batch(std::mt19937_64& rng, std::size_t n, std::size_t c,
                                    std::size_t h, std::size_t w) {
    std::vector<ActivationSample> s;
    for (std::size_t i = 0; i < n; ++i)
        s.emplace_back(random_matrix(rng, static_cast<Eigen::Index>(c),
                                     static_cast<Eigen::Index>(h * w)),
                       SpatialDims{h, w});
    return ActivationBatch(std::move(s));
}

/// Triple-loop product.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out = Matrix::Zero(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    return out;
}

inline Matrix naive_transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix naive_reconstruct(const Matrix& z, const Matrix& a, const Matrix& p) {
    const Matrix at = naive_transpose(a);
    const Matrix lambda = naive_matmul(naive_matmul(at, z), p);
    return naive_matmul(naive_matmul(a, lambda), naive_transpose(p));
}

/// Forms every reconstruction explicitly and sums squared residuals.
inline double naive_loss(const ActivationBatch& batch, const Matrix& a, const Matrix& p) {
    double total = 0.0;
    for (const auto& s : batch) {
        const Matrix r = naive_reconstruct(s.data(), a, p);
        for (Eigen::Index i = 0; i < r.rows(); ++i)
            for (Eigen::Index j = 0; j < r.cols(); ++j) {
                const double d = s.data()(i, j) - r(i, j);
                total += d * d;
            }
    }
    return total;
}

/// Central finite differences of f at x.
inline Matrix central_difference(const std::function<double(const Matrix&)>& f, const Matrix& x,
                                 double step = 1e-6) {
    Matrix g(x.rows(), x.cols());
    Matrix probe = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            probe(i, j) = x(i, j) + step;
            const double up = f(probe);
            probe(i, j) = x(i, j) - step;
            const double down = f(probe);
            probe(i, j) = x(i, j);
            g(i, j) = (up - down) / (2.0 * step);
        }
    return g;
}

inline double relative_difference(const Matrix& got, const Matrix& want) {
    const double den = std::max(want.norm(), 1e-300);
    return (got - want).norm() / den;
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues descending, eigenvectors as columns).
inline std::pair<Vector, Matrix> jacobi_eigen(Matrix a, int max_sweeps = 100) {
    const Eigen::Index n = a.rows();
    Matrix v = Matrix::Identity(n, n);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30 * std::max(1.0, a.squaredNorm())) break;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
    Vector vals(n);
    Matrix vecs(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        vals(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
        vecs.col(i) = v.col(order[static_cast<std::size_t>(i)]);
    }
    return {vals, vecs};
}

/// Random matrix with orthonormal columns via modified Gram-Schmidt.
inline Matrix random_orthonormal(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = g(rng);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index k = 0; k < j; ++k) m.col(j) -= m.col(k).dot(m.col(j)) * m.col(k);
        m.col(j) /= m.col(j).norm();
    }
    return m;
}

/// Distance between two matrices up to a sign flip of each column.
inline double column_sign_distance(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        worst = std::max(worst, std::min((a.col(j) - b.col(j)).cwiseAbs().maxCoeff(),
                                         (a.col(j) + b.col(j)).cwiseAbs().maxCoeff()));
    return worst;
}

} // namespace sntf::test
