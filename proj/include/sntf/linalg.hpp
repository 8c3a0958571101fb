#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"
#include "tensor.hpp"

namespace sntf {

/// Leading r eigenvectors (descending eigenvalue) of a symmetric matrix.
/// Each column's largest-magnitude entry is made positive so results are
/// reproducible across solvers.
inline Matrix leading_eigenvectors(const Matrix& sym, std::size_t r) {
    detail::require(sym.rows() == sym.cols(), "leading_eigenvectors: matrix not square");
    detail::require(r >= 1 && r <= static_cast<std::size_t>(sym.rows()),
                    "leading_eigenvectors: rank " + std::to_string(r) + " outside [1, " +
                        std::to_string(sym.rows()) + "]");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
    if (solver.info() != Eigen::Success)
        throw NumericalError("leading_eigenvectors: symmetric eigensolver did not converge");
    const Eigen::Index n = sym.rows();
    Matrix out(n, static_cast<Eigen::Index>(r));
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        Vector v = solver.eigenvectors().col(n - 1 - j);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        out.col(j) = v;
    }
    return out;
}

/// Orthonormal basis of the column span (thin QR).
inline Matrix orthonormal_basis(const Matrix& m) {
    Eigen::HouseholderQR<Matrix> qr(m);
    return qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
}

/// Largest principal angle between the column spans of a and b (radians).
/// Computed from the sine, which stays accurate for nearly-aligned spans.
inline double largest_principal_angle(const Matrix& a, const Matrix& b) {
    detail::require(a.rows() == b.rows(), "principal angle: row count mismatch");
    const Matrix qa = orthonormal_basis(a);
    const Matrix qb = orthonormal_basis(b);
    // Symmetric in a, b only for equal ranks; take the larger direction.
    const Matrix ra = qb - qa * (qa.transpose() * qb);
    const Matrix rb = qa - qb * (qb.transpose() * qa);
    Eigen::JacobiSVD<Matrix> sa(ra), sb(rb);
    const double s = std::max(sa.singularValues()(0), sb.singularValues()(0));
    return std::asin(std::clamp(s, 0.0, 1.0));
}

} // namespace sntf
