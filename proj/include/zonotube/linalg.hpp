#pragma once

#include "core.hpp"

#include <Eigen/SVD>

namespace zonotube::linalg {

/// Moore-Penrose pseudoinverse together with a kernel basis, from one SVD.
struct PinvKernel {
    Mat pinv;    ///< cols x rows
    Mat kernel;  ///< cols x (cols - rank), orthonormal columns
    Eigen::Index rank = 0;
};

/// Singular values below rel_cutoff * sigma_max count as zero.
inline PinvKernel pinv_kernel(const Mat& D, double rel_cutoff = 1e-10)
{
    PinvKernel out;
    const Eigen::Index r = D.rows();
    const Eigen::Index c = D.cols();
    if (r == 0 || c == 0) {
        out.pinv = Mat::Zero(c, r);
        out.kernel = Mat::Identity(c, c);
        return out;
    }
    Eigen::JacobiSVD<Mat> svd(D, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec& s = svd.singularValues();
    const double cutoff = rel_cutoff * s(0);
    Eigen::Index rank = 0;
    while (rank < s.size() && s(rank) > cutoff) ++rank;
    out.rank = rank;
    out.pinv = svd.matrixV().leftCols(rank) * s.head(rank).cwiseInverse().asDiagonal() *
               svd.matrixU().leftCols(rank).transpose();
    out.kernel = svd.matrixV().rightCols(c - rank);
    return out;
}

/// Equivalent full-row-rank form of A x = b plus the residual of the
/// discarded (dependent) combinations, which is ~0 iff the system is consistent.
struct ReducedEqualities {
    Mat A;             ///< rank x cols, orthogonal rows
    Vec b;
    Vec particular;    ///< minimum-norm solution
    Mat null_basis;    ///< cols x (cols - rank)
    double inconsistency = 0.0;
};

inline ReducedEqualities reduce_equalities(const Mat& A, const Vec& b, double rel_cutoff = 1e-10)
{
    ReducedEqualities out;
    const Eigen::Index c = A.cols();
    if (A.rows() == 0) {
        out.A = Mat(0, c);
        out.b = Vec(0);
        out.particular = Vec::Zero(c);
        out.null_basis = Mat::Identity(c, c);
        return out;
    }
    Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec& s = svd.singularValues();
    Eigen::Index rank = 0;
    const double cutoff = rel_cutoff * (s.size() ? s(0) : 0.0);
    while (rank < s.size() && s(rank) > cutoff) ++rank;
    const Mat Ur = svd.matrixU().leftCols(rank);
    const Mat Vr = svd.matrixV().leftCols(rank);
    out.A = s.head(rank).asDiagonal() * Vr.transpose();
    out.b = Ur.transpose() * b;
    out.particular = Vr * s.head(rank).cwiseInverse().asDiagonal() * out.b;
    out.null_basis = svd.matrixV().rightCols(c - rank);
    const Vec resid = A * out.particular - b;
    out.inconsistency = resid.size() ? resid.cwiseAbs().maxCoeff() : 0.0;
    return out;
}

/// Column-stacking vectorization.
inline Vec vec(const Mat& M) { return Eigen::Map<const Vec>(M.data(), M.size()); }

inline Mat unvec(const Vec& v, Eigen::Index rows, Eigen::Index cols)
{
    return Eigen::Map<const Mat>(v.data(), rows, cols);
}

}  // namespace zonotube::linalg
