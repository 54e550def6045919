#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "errors.hpp"

namespace phcirc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

namespace linalg {

constexpr double kDefaultRankTol = 1e-10;
constexpr double kGapRatio = 1e3;

struct RankInfo {
    std::size_t rank = 0;
    Vector singular_values;
    bool ambiguous = false;  // gap between kept and dropped singular values below kGapRatio
};

inline RankInfo svd_rank(const Matrix& m, double tol = kDefaultRankTol) {
    RankInfo info;
    if (m.rows() == 0 || m.cols() == 0) {
        info.singular_values = Vector(0);
        return info;
    }
    Eigen::JacobiSVD<Matrix> svd(m);
    info.singular_values = svd.singularValues();
    const auto& s = info.singular_values;
    const double smax = s(0);
    if (smax == 0.0) return info;
    std::size_t r = 0;
    while (r < static_cast<std::size_t>(s.size()) && s(static_cast<Eigen::Index>(r)) > tol * smax) ++r;
    info.rank = r;
    if (r < static_cast<std::size_t>(s.size())) {
        const double kept = s(static_cast<Eigen::Index>(r - 1));
        const double dropped = s(static_cast<Eigen::Index>(r));
        if (dropped > 0.0 && kept / dropped < kGapRatio) info.ambiguous = true;
    }
    return info;
}

inline std::size_t numerical_rank(const Matrix& m, double tol = kDefaultRankTol) {
    return svd_rank(m, tol).rank;
}

// Orthonormal basis (columns) of {x : m x = 0}.
inline Matrix null_space(const Matrix& m, double tol = kDefaultRankTol, bool require_gap = true) {
    const Eigen::Index cols = m.cols();
    if (cols == 0) return Matrix(0, 0);
    if (m.rows() == 0) return Matrix::Identity(cols, cols);
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullV);
    const Vector s = svd.singularValues();
    const double smax = s.size() ? s(0) : 0.0;
    Eigen::Index r = 0;
    if (smax > 0.0)
        while (r < s.size() && s(r) > tol * smax) ++r;
    if (require_gap && r > 0 && r < s.size() && s(r) > 0.0 && s(r - 1) / s(r) < kGapRatio)
        throw Error(ErrorKind::DegenerateSpan,
                    "singular value gap " + std::to_string(s(r - 1) / s(r)) + " below " + std::to_string(kGapRatio));
    return svd.matrixV().rightCols(cols - r);
}

// Orthonormal basis of the column span of m.
inline Matrix range_space(const Matrix& m, double tol = kDefaultRankTol, bool require_gap = true) {
    if (m.rows() == 0 || m.cols() == 0) return Matrix(m.rows(), 0);
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU);
    const Vector s = svd.singularValues();
    const double smax = s(0);
    Eigen::Index r = 0;
    if (smax > 0.0)
        while (r < s.size() && s(r) > tol * smax) ++r;
    if (require_gap && r > 0 && r < s.size() && s(r) > 0.0 && s(r - 1) / s(r) < kGapRatio)
        throw Error(ErrorKind::DegenerateSpan, "ambiguous rank in span");
    return svd.matrixU().leftCols(r);
}

inline void snap_integers(Matrix& m, double tol = 1e-9) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double r = std::round(m(i, j));
            if (std::abs(m(i, j) - r) <= tol) m(i, j) = r == 0.0 ? 0.0 : r;
        }
}

// Reduced row echelon form with zero rows dropped.
inline Matrix rref(Matrix m, double tol = 1e-9) {
    const Eigen::Index rows = m.rows(), cols = m.cols();
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    Eigen::Index lead = 0;
    for (Eigen::Index c = 0; c < cols && lead < rows; ++c) {
        Eigen::Index piv;
        const double best = m.col(c).segment(lead, rows - lead).cwiseAbs().maxCoeff(&piv);
        if (best <= tol * scale) {
            m.col(c).segment(lead, rows - lead).setZero();
            continue;
        }
        piv += lead;
        m.row(lead).swap(m.row(piv));
        m.row(lead) /= m(lead, c);
        for (Eigen::Index r = 0; r < rows; ++r)
            if (r != lead && m(r, c) != 0.0) m.row(r) -= m(r, c) * m.row(lead);
        ++lead;
    }
    Matrix out = m.topRows(lead);
    snap_integers(out);
    return out;
}

// Exact rank of an integer matrix by fraction-free (Bareiss) elimination.
inline std::size_t integer_rank(const IntMatrix& a) {
    const Eigen::Index rows = a.rows(), cols = a.cols();
    std::vector<std::vector<__int128>> m(static_cast<std::size_t>(rows), std::vector<__int128>(static_cast<std::size_t>(cols)));
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m[i][j] = a(i, j);
    __int128 prev = 1;
    std::size_t rank = 0;
    for (Eigen::Index c = 0; c < cols && static_cast<Eigen::Index>(rank) < rows; ++c) {
        std::size_t piv = rank;
        while (piv < static_cast<std::size_t>(rows) && m[piv][c] == 0) ++piv;
        if (piv == static_cast<std::size_t>(rows)) continue;
        std::swap(m[piv], m[rank]);
        for (std::size_t r = rank + 1; r < static_cast<std::size_t>(rows); ++r) {
            for (Eigen::Index j = c + 1; j < cols; ++j)
                m[r][j] = (m[rank][c] * m[r][j] - m[r][c] * m[rank][j]) / prev;
            m[r][c] = 0;
        }
        prev = m[rank][c];
        ++rank;
    }
    return rank;
}

inline Matrix block_diag(const Matrix& a, const Matrix& b) {
    Matrix out = Matrix::Zero(a.rows() + b.rows(), a.cols() + b.cols());
    out.topLeftCorner(a.rows(), a.cols()) = a;
    out.bottomRightCorner(b.rows(), b.cols()) = b;
    return out;
}

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }
inline double max_abs(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

inline bool all_finite(const Vector& v) { return v.allFinite(); }

} // namespace linalg
} // namespace phcirc
