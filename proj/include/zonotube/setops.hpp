#pragma once

// Zonotopes, constrained (matrix) zonotopes, H-polytopes and the LP-backed
// queries on them. Every set type is an immutable value.

#include "core.hpp"
#include "linalg.hpp"
#include "optim.hpp"

#include <algorithm>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace zonotube {

/// Tag for constructors that skip the nonemptiness LP because the caller
/// already holds a certificate (e.g. a set derived from a checked one).
struct trusted_t {
    explicit trusted_t() = default;
};
inline constexpr trusted_t trusted{};

namespace detail {

/// Smallest t >= 0 with |M z - rhs| <= t (row-scaled) for some |z|_inf <= 1.
/// Feasibility of the coefficient system within tolerance is t <= tol.
inline double coefficient_residual(const Mat& M, const Vec& rhs)
{
    const Eigen::Index s = M.cols();
    const Eigen::Index r = M.rows();
    if (r == 0) return 0.0;
    Mat Ms = M;
    Vec bs = rhs;
    for (Eigen::Index i = 0; i < r; ++i) {
        const double scale = std::max(1.0, Ms.row(i).cwiseAbs().maxCoeff());
        Ms.row(i) /= scale;
        bs(i) /= scale;
    }
    // t = cap - slack with cap bounding the residual over the whole box, so
    // every row is feasible at the starting vertex and no phase 1 is needed.
    const double cap = bs.cwiseAbs().maxCoeff() + Ms.cwiseAbs().rowwise().sum().maxCoeff() + 1.0;
    optim::LpProblem lp;
    lp.cost = Vec::Zero(s + 1);
    lp.cost(s) = -1.0;
    lp.A = Mat::Zero(2 * r, s + 1);
    lp.A.topLeftCorner(r, s) = Ms;
    lp.A.bottomLeftCorner(r, s) = -Ms;
    lp.A.col(s).setConstant(1.0);
    lp.b.resize(2 * r);
    lp.b << (bs.array() + cap).matrix(), (cap - bs.array()).matrix();
    lp.lower = Vec::Constant(s + 1, -1.0);
    lp.upper = Vec::Constant(s + 1, 1.0);
    lp.lower(s) = 0.0;
    lp.upper(s) = cap;
    const auto res = optim::solve_lp(lp);
    if (!res.optimal()) throw optim::solver_error(res.status, "coefficient residual LP");
    return std::max(0.0, cap + res.objective);
}

inline constexpr double kEmptinessTol = 1e-8;

inline void require_nonempty(const Mat& A, const Vec& b, const char* what)
{
    if (A.rows() == 0) return;
    const double r = coefficient_residual(A, b);
    if (r > kEmptinessTol) {
        throw empty_set_error(std::string(what) + ": coefficient polytope is empty (residual " +
                              std::to_string(r) + ")");
    }
}

}  // namespace detail

class Zonotope {
public:
    Zonotope() = default;
    Zonotope(Vec center, Mat generators) : c_(std::move(center)), G_(std::move(generators))
    {
        if (G_.cols() == 0) G_.resize(c_.size(), 0);
        detail::require(G_.rows() == c_.size(), "Zonotope: generators " + detail::shape(G_) +
                                                    " vs center of size " + std::to_string(c_.size()));
        detail::require(c_.allFinite() && G_.allFinite(), "Zonotope: non-finite entries");
    }

    static Zonotope point(const Vec& c) { return Zonotope(c, Mat(c.size(), 0)); }

    const Vec& center() const { return c_; }
    const Mat& generators() const { return G_; }
    Eigen::Index dim() const { return c_.size(); }
    Eigen::Index num_generators() const { return G_.cols(); }

private:
    Vec c_;
    Mat G_;
};

class ConstrainedZonotope {
public:
    ConstrainedZonotope() = default;
    ConstrainedZonotope(Vec center, Mat generators, Mat eq_A, Vec eq_b)
        : ConstrainedZonotope(std::move(center), std::move(generators), std::move(eq_A), std::move(eq_b), trusted)
    {
        detail::require_nonempty(A_, b_, "ConstrainedZonotope");
    }
    ConstrainedZonotope(Vec center, Mat generators, Mat eq_A, Vec eq_b, trusted_t)
        : c_(std::move(center)), G_(std::move(generators)), A_(std::move(eq_A)), b_(std::move(eq_b))
    {
        if (A_.size() == 0) A_.resize(b_.size(), G_.cols());
        detail::require(G_.rows() == c_.size(), "ConstrainedZonotope: generators " + detail::shape(G_));
        detail::require(A_.rows() == b_.size() && A_.cols() == G_.cols(),
                        "ConstrainedZonotope: constraints " + detail::shape(A_));
    }
    explicit ConstrainedZonotope(const Zonotope& z)
        : c_(z.center()), G_(z.generators()), A_(0, z.num_generators()), b_(0) {}

    const Vec& center() const { return c_; }
    const Mat& generators() const { return G_; }
    const Mat& eq_A() const { return A_; }
    const Vec& eq_b() const { return b_; }
    Eigen::Index dim() const { return c_.size(); }
    Eigen::Index num_generators() const { return G_.cols(); }

private:
    Vec c_;
    Mat G_;
    Mat A_;
    Vec b_;
};

/// Matrix zonotope <G, C>: C is n x m, the generators are stored side by side
/// as the wide matrix [G^1 ... G^s] (n x m*s).
class MatrixZonotope {
public:
    MatrixZonotope() = default;
    MatrixZonotope(Mat center, Mat generators) : C_(std::move(center)), G_(std::move(generators))
    {
        if (G_.size() == 0) G_.resize(C_.rows(), 0);
        detail::require(G_.rows() == C_.rows() && (C_.cols() == 0 ? G_.cols() == 0 : G_.cols() % C_.cols() == 0),
                        "MatrixZonotope: generator blocks " + detail::shape(G_) + " vs center " +
                            detail::shape(C_));
    }

    const Mat& center() const { return C_; }
    const Mat& generators() const { return G_; }
    Eigen::Index rows() const { return C_.rows(); }
    Eigen::Index cols() const { return C_.cols(); }
    Eigen::Index num_generators() const { return C_.cols() ? G_.cols() / C_.cols() : 0; }
    auto generator(Eigen::Index i) const { return G_.middleCols(i * C_.cols(), C_.cols()); }

    /// Columns vec(G^i), i.e. the linear map beta -> vec(sum beta_i G^i).
    Mat vectorized_generators() const
    {
        const Eigen::Index s = num_generators();
        Mat V(C_.size(), s);
        for (Eigen::Index i = 0; i < s; ++i) V.col(i) = linalg::vec(generator(i));
        return V;
    }

    /// Member realized by coefficient vector beta.
    Mat realize(const Vec& beta) const
    {
        Mat X = C_;
        for (Eigen::Index i = 0; i < num_generators(); ++i) X += beta(i) * generator(i);
        return X;
    }

private:
    Mat C_;
    Mat G_;
};

/// One block row of the constraint sum_i A^i beta_i = B, where every A^i has
/// the shape of B. Stored wide: A = [A^1 ... A^s].
struct EqualityBlock {
    Mat A;
    Mat B;
};

class ConstrainedMatrixZonotope {
public:
    ConstrainedMatrixZonotope() = default;
    ConstrainedMatrixZonotope(Mat center, Mat generators, std::vector<EqualityBlock> constraints)
        : ConstrainedMatrixZonotope(std::move(center), std::move(generators), std::move(constraints), trusted)
    {
        const auto [A, b] = vectorized_constraints();
        detail::require_nonempty(A, b, "ConstrainedMatrixZonotope");
    }
    ConstrainedMatrixZonotope(Mat center, Mat generators, std::vector<EqualityBlock> constraints, trusted_t)
        : base_(std::move(center), std::move(generators)), blocks_(std::move(constraints))
    {
        const Eigen::Index s = base_.num_generators();
        for (const auto& blk : blocks_) {
            detail::require(blk.A.rows() == blk.B.rows() && blk.A.cols() == blk.B.cols() * s,
                            "ConstrainedMatrixZonotope: block " + detail::shape(blk.A) + " vs rhs " +
                                detail::shape(blk.B) + " with " + std::to_string(s) + " generators");
        }
    }
    explicit ConstrainedMatrixZonotope(const MatrixZonotope& mz) : base_(mz) {}

    const Mat& center() const { return base_.center(); }
    const Mat& generators() const { return base_.generators(); }
    const std::vector<EqualityBlock>& constraints() const { return blocks_; }
    const MatrixZonotope& unconstrained() const { return base_; }
    Eigen::Index rows() const { return base_.rows(); }
    Eigen::Index cols() const { return base_.cols(); }
    Eigen::Index num_generators() const { return base_.num_generators(); }
    auto generator(Eigen::Index i) const { return base_.generator(i); }
    Mat vectorized_generators() const { return base_.vectorized_generators(); }
    Mat realize(const Vec& beta) const { return base_.realize(beta); }

    /// Flat equality system A beta = b (column-stacking each block row).
    std::pair<Mat, Vec> vectorized_constraints() const
    {
        const Eigen::Index s = num_generators();
        Eigen::Index rows_total = 0;
        for (const auto& blk : blocks_) rows_total += blk.B.size();
        Mat A(rows_total, s);
        Vec b(rows_total);
        Eigen::Index r = 0;
        for (const auto& blk : blocks_) {
            const Eigen::Index mc = blk.B.cols();
            const Eigen::Index sz = blk.B.size();
            for (Eigen::Index i = 0; i < s; ++i) {
                A.block(r, i, sz, 1) = linalg::vec(blk.A.middleCols(i * mc, mc));
            }
            b.segment(r, sz) = linalg::vec(blk.B);
            r += sz;
        }
        return {A, b};
    }

private:
    MatrixZonotope base_;
    std::vector<EqualityBlock> blocks_;
};

/// {x : H x <= h}
class Polytope {
public:
    Polytope() = default;
    Polytope(Mat H, Vec h) : H_(std::move(H)), h_(std::move(h))
    {
        detail::require(H_.rows() == h_.size(), "Polytope: H " + detail::shape(H_) + " vs h of size " +
                                                    std::to_string(h_.size()));
        detail::require(h_.allFinite() && H_.allFinite(), "Polytope: non-finite data");
    }

    /// Axis-aligned box with facets ordered [I; -I].
    static Polytope box(const Vec& lower, const Vec& upper)
    {
        const Eigen::Index n = lower.size();
        Mat H(2 * n, n);
        H << Mat::Identity(n, n), -Mat::Identity(n, n);
        Vec h(2 * n);
        h << upper, -lower;
        return Polytope(std::move(H), std::move(h));
    }
    static Polytope symmetric_box(const Vec& bound) { return box(-bound, bound); }

    const Mat& H() const { return H_; }
    const Vec& h() const { return h_; }
    Eigen::Index dim() const { return H_.cols(); }
    Eigen::Index num_facets() const { return H_.rows(); }

    Polytope scaled(double a) const { return Polytope(H_, a * h_); }
    Polytope with_offsets(Vec h) const { return Polytope(H_, std::move(h)); }
    /// P + c
    Polytope translated(const Vec& c) const { return Polytope(H_, h_ + H_ * c); }

private:
    Mat H_;
    Vec h_;
};

struct IntervalBox {
    Vec lower;
    Vec upper;

    IntervalBox() = default;
    IntervalBox(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi))
    {
        detail::require(lower.size() == upper.size(), "IntervalBox: size mismatch");
        detail::require(((upper - lower).array() >= -1e-12).all(), "IntervalBox: lower > upper");
    }
    bool contains(const Vec& x, double tol = 0.0) const
    {
        return ((x - lower).array() >= -tol).all() && ((upper - x).array() >= -tol).all();
    }
};

// ---------------------------------------------------------------- algebra

inline Zonotope minkowski_sum(const Zonotope& a, const Zonotope& b)
{
    detail::require(a.dim() == b.dim(), "minkowski_sum: dimension mismatch");
    Mat G(a.dim(), a.num_generators() + b.num_generators());
    G << a.generators(), b.generators();
    return Zonotope(a.center() + b.center(), std::move(G));
}

inline Zonotope linear_map(const Mat& M, const Zonotope& z)
{
    detail::require(M.cols() == z.dim(), "linear_map: map " + detail::shape(M) + " on dimension " +
                                             std::to_string(z.dim()));
    return Zonotope(M * z.center(), M * z.generators());
}

inline ConstrainedZonotope linear_map(const Mat& M, const ConstrainedZonotope& z)
{
    detail::require(M.cols() == z.dim(), "linear_map: dimension mismatch");
    return ConstrainedZonotope(M * z.center(), M * z.generators(), z.eq_A(), z.eq_b(), trusted);
}

/// Drop all-zero generator columns.
inline Zonotope compact(const Zonotope& z, double tol = 0.0)
{
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < z.num_generators(); ++i)
        if (z.generators().col(i).cwiseAbs().maxCoeff() > tol) keep.push_back(i);
    Mat G(z.dim(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) G.col(static_cast<Eigen::Index>(k)) = z.generators().col(keep[k]);
    return Zonotope(z.center(), std::move(G));
}

/// G o Q: every generator block and the center right-multiplied by Q.
inline MatrixZonotope block_right_multiply(const MatrixZonotope& mz, const Mat& Q)
{
    detail::require(Q.rows() == mz.cols(), "block_right_multiply: blocks have " + std::to_string(mz.cols()) +
                                               " columns, Q is " + detail::shape(Q));
    const Eigen::Index s = mz.num_generators();
    Mat G(mz.rows(), s * Q.cols());
    for (Eigen::Index i = 0; i < s; ++i) G.middleCols(i * Q.cols(), Q.cols()).noalias() = mz.generator(i) * Q;
    return MatrixZonotope(mz.center() * Q, std::move(G));
}

inline ConstrainedMatrixZonotope block_right_multiply(const ConstrainedMatrixZonotope& cmz, const Mat& Q)
{
    const MatrixZonotope mapped = block_right_multiply(cmz.unconstrained(), Q);
    return ConstrainedMatrixZonotope(mapped.center(), mapped.generators(), cmz.constraints(), trusted);
}

/// Matrix zonotope of T-column disturbance sequences whose columns each lie
/// in zw. Block (j*s_w + i) carries generator i in column j.
inline MatrixZonotope concat_disturbance(const Zonotope& zw, Eigen::Index T)
{
    detail::require(T >= 1, "concat_disturbance: T must be >= 1");
    const Eigen::Index n = zw.dim();
    const Eigen::Index sw = zw.num_generators();
    Mat C = zw.center().replicate(1, T);
    Mat G = Mat::Zero(n, T * sw * T);
    for (Eigen::Index j = 0; j < T; ++j)
        for (Eigen::Index i = 0; i < sw; ++i) G.col((j * sw + i) * T + j) = zw.generators().col(i);
    return MatrixZonotope(std::move(C), std::move(G));
}

/// M1 ∩ M2 over shared matrix space: coefficients [beta1; beta2] with
/// realize1(beta1) = realize2(beta2) added as an equality block.
inline ConstrainedMatrixZonotope intersect(const ConstrainedMatrixZonotope& a, const ConstrainedMatrixZonotope& b)
{
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "intersect: shape mismatch");
    const Eigen::Index s1 = a.num_generators();
    const Eigen::Index s2 = b.num_generators();
    const Eigen::Index m = a.cols();
    Mat G = Mat::Zero(a.rows(), m * (s1 + s2));
    G.leftCols(m * s1) = a.generators();
    std::vector<EqualityBlock> blocks;
    for (const auto& blk : a.constraints()) {
        const Eigen::Index mc = blk.B.cols();
        Mat A = Mat::Zero(blk.A.rows(), mc * (s1 + s2));
        A.leftCols(mc * s1) = blk.A;
        blocks.push_back({std::move(A), blk.B});
    }
    for (const auto& blk : b.constraints()) {
        const Eigen::Index mc = blk.B.cols();
        Mat A = Mat::Zero(blk.A.rows(), mc * (s1 + s2));
        A.rightCols(mc * s2) = blk.A;
        blocks.push_back({std::move(A), blk.B});
    }
    Mat A = Mat::Zero(a.rows(), m * (s1 + s2));
    A.leftCols(m * s1) = a.generators();
    A.rightCols(m * s2) = -b.generators();
    blocks.push_back({std::move(A), b.center() - a.center()});
    return ConstrainedMatrixZonotope(a.center(), std::move(G), std::move(blocks));
}

// ---------------------------------------------------------------- support

/// max d'x over P.
inline double support(const Polytope& P, const Vec& d)
{
    detail::require(d.size() == P.dim(), "support: direction size");
    optim::LpProblem lp;
    lp.cost = -d;
    lp.A = P.H();
    lp.b = P.h();
    const auto res = optim::solve_lp(lp);
    if (res.status == optim::Status::Infeasible) throw empty_set_error("support: empty polytope");
    if (!res.optimal()) throw optim::solver_error(res.status, "support");
    return -res.objective;
}

/// max a'beta over {A beta = b, |beta|_inf <= 1}; optionally returns the maximizer.
inline double coefficient_support(const Mat& A, const Vec& b, const Vec& a, Vec* argmax = nullptr)
{
    const Eigen::Index s = a.size();
    if (A.rows() == 0) {
        if (argmax) *argmax = a.unaryExpr([](double v) { return v >= 0 ? 1.0 : -1.0; });
        return a.cwiseAbs().sum();
    }
    optim::LpProblem lp;
    lp.cost = -a;
    lp.A_eq = A;
    lp.b_eq = b;
    lp.lower = -Vec::Ones(s);
    lp.upper = Vec::Ones(s);
    const auto res = optim::solve_lp(lp);
    if (res.status == optim::Status::Infeasible) throw empty_set_error("coefficient_support: empty coefficient set");
    if (!res.optimal()) throw optim::solver_error(res.status, "coefficient_support");
    if (argmax) *argmax = res.x;
    return -res.objective;
}

inline double support_cz(const ConstrainedZonotope& z, const Vec& d)
{
    detail::require(d.size() == z.dim(), "support_cz: direction size");
    const Vec a = z.generators().transpose() * d;
    return d.dot(z.center()) + coefficient_support(z.eq_A(), z.eq_b(), a);
}

inline double support(const Zonotope& z, const Vec& d)
{
    detail::require(d.size() == z.dim(), "support: direction size");
    return d.dot(z.center()) + (z.generators().transpose() * d).cwiseAbs().sum();
}

inline IntervalBox interval_enclosure(const Polytope& P)
{
    const Eigen::Index n = P.dim();
    Vec lo(n), hi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec e = Vec::Unit(n, i);
        hi(i) = support(P, e);
        lo(i) = -support(P, -e);
    }
    return IntervalBox(lo, hi);
}

inline double inf_norm_bound(const IntervalBox& box)
{
    return std::max(box.lower.cwiseAbs().maxCoeff(), box.upper.cwiseAbs().maxCoeff());
}

inline double inf_norm_bound(const Polytope& P) { return inf_norm_bound(interval_enclosure(P)); }

// ---------------------------------------------------------------- vertices

struct VertexCap {
    Eigen::Index max_dimension = 12;
    double max_vertices = 4096;          ///< upper bound C(q, n) on the vertex count
    double max_combinations = 2.0e7;     ///< hard work limit regardless of dimension
};

namespace detail {

inline double binomial(Eigen::Index n, Eigen::Index k)
{
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (Eigen::Index i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return r;
}

inline bool enumeration_allowed(Eigen::Index dim, Eigen::Index facets, const VertexCap& cap)
{
    const double combos = binomial(facets, dim);
    return (dim <= cap.max_dimension || combos <= cap.max_vertices) && combos <= cap.max_combinations;
}

}  // namespace detail

/// Exact vertex set of a bounded polytope by basis enumeration.
/// Throws vertex_cap_exceeded when the instance is above the cap.
inline std::vector<Vec> vertices(const Polytope& P, const VertexCap& cap = {})
{
    const Eigen::Index n = P.dim();
    const Eigen::Index q = P.num_facets();
    if (!detail::enumeration_allowed(n, q, cap)) {
        throw vertex_cap_exceeded("vertices: dimension " + std::to_string(n) + " with " + std::to_string(q) +
                                  " facets is above the enumeration cap");
    }
    std::vector<Vec> out;
    if (n == 0) {
        if ((P.h().array() >= -1e-9).all()) out.push_back(Vec(0));
        return out;
    }
    if (q < n) return out;
    const double feas = 1e-9 * std::max(1.0, P.h().cwiseAbs().maxCoeff());
    std::vector<Eigen::Index> idx(n);
    for (Eigen::Index i = 0; i < n; ++i) idx[i] = i;
    Mat S(n, n);
    Vec r(n);
    for (;;) {
        for (Eigen::Index i = 0; i < n; ++i) {
            S.row(i) = P.H().row(idx[i]);
            r(i) = P.h()(idx[i]);
        }
        Eigen::FullPivLU<Mat> lu(S);
        lu.setThreshold(1e-10);
        if (lu.rank() == n) {
            const Vec v = lu.solve(r);
            if (((P.H() * v - P.h()).array() <= feas).all()) {
                const bool dup = std::any_of(out.begin(), out.end(), [&](const Vec& w) {
                    return (w - v).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, v.cwiseAbs().maxCoeff());
                });
                if (!dup) out.push_back(v);
            }
        }
        // next combination
        Eigen::Index k = n - 1;
        while (k >= 0 && idx[k] == q - n + k) --k;
        if (k < 0) break;
        ++idx[k];
        for (Eigen::Index j = k + 1; j < n; ++j) idx[j] = idx[j - 1] + 1;
    }
    return out;
}

/// Vertices of the box slice {beta : A beta = b, |beta|_inf <= 1}, enumerated
/// in the null-space parametrization beta = beta0 + N z.
inline std::vector<Vec> box_slice_vertices(const Mat& A, const Vec& b, const VertexCap& cap = {})
{
    const Eigen::Index s = A.cols();
    const auto red = linalg::reduce_equalities(A, b);
    if (red.inconsistency > 1e-8 * std::max(1.0, b.size() ? b.cwiseAbs().maxCoeff() : 0.0)) return {};
    const Mat& N = red.null_basis;
    const Vec& b0 = red.particular;
    Mat H(2 * s, N.cols());
    H << N, -N;
    Vec h(2 * s);
    h << Vec::Ones(s) - b0, Vec::Ones(s) + b0;
    std::vector<Vec> out;
    for (const Vec& z : vertices(Polytope(H, h), cap)) out.push_back(b0 + N * z);
    return out;
}

/// Center of the largest inf-norm ball inside {beta : A beta = b, |beta|_inf <= 1}
/// (within the affine hull). A member of the slice, unlike beta = 0 in general.
inline Vec coefficient_center(const Mat& A, const Vec& b)
{
    const Eigen::Index s = A.cols();
    if (A.rows() == 0) return Vec::Zero(s);
    const auto red = linalg::reduce_equalities(A, b);
    if (red.inconsistency > 1e-8 * std::max(1.0, b.cwiseAbs().maxCoeff()))
        throw empty_set_error("coefficient_center: inconsistent equalities");
    const Mat& N = red.null_basis;
    const Vec& b0 = red.particular;
    const Eigen::Index d = N.cols();
    if (d == 0) return b0;
    optim::LpProblem lp;
    lp.cost = Vec::Zero(d + 1);
    lp.cost(d) = -1.0;
    lp.A.resize(2 * s, d + 1);
    lp.A << N, Vec::Ones(s), -N, Vec::Ones(s);
    lp.b.resize(2 * s);
    lp.b << Vec::Ones(s) - b0, Vec::Ones(s) + b0;
    lp.lower = Vec::Constant(d + 1, -kInf);
    lp.upper = Vec::Constant(d + 1, kInf);
    lp.upper(d) = 1.0;
    const auto res = optim::solve_lp(lp);
    if (res.status == optim::Status::Infeasible) throw empty_set_error("coefficient_center: empty slice");
    if (!res.optimal()) throw optim::solver_error(res.status, "coefficient_center");
    return b0 + N * res.x.head(d);
}

// ---------------------------------------------------------------- membership

inline bool membership(const Polytope& P, const Vec& x, double tol = 1e-9)
{
    detail::require(x.size() == P.dim(), "membership: point size");
    for (Eigen::Index i = 0; i < P.num_facets(); ++i) {
        const double scale = std::max(1.0, std::abs(P.h()(i)));
        if (P.H().row(i).dot(x) - P.h()(i) > tol * scale) return false;
    }
    return true;
}

inline bool membership(const ConstrainedZonotope& z, const Vec& x, double tol = detail::kEmptinessTol)
{
    detail::require(x.size() == z.dim(), "membership: point size");
    Mat M(z.dim() + z.eq_A().rows(), z.num_generators());
    M << z.generators(), z.eq_A();
    Vec rhs(M.rows());
    rhs << x - z.center(), z.eq_b();
    return detail::coefficient_residual(M, rhs) <= tol;
}

inline bool membership(const Zonotope& z, const Vec& x, double tol = detail::kEmptinessTol)
{
    return membership(ConstrainedZonotope(z), x, tol);
}

inline bool membership(const ConstrainedMatrixZonotope& mz, const Mat& X, double tol = detail::kEmptinessTol)
{
    detail::require(X.rows() == mz.rows() && X.cols() == mz.cols(), "membership: matrix shape");
    const auto [A, b] = mz.vectorized_constraints();
    const Mat Gv = mz.vectorized_generators();
    const Vec target = linalg::vec(X - mz.center());
    auto full_residual = [&] {
        Mat M(Gv.rows() + A.rows(), Gv.cols());
        M << Gv, A;
        Vec rhs(M.rows());
        rhs << target, b;
        return detail::coefficient_residual(M, rhs) <= tol;
    };
    if (A.rows() == 0) return detail::coefficient_residual(Gv, target) <= tol;
    // Solve the coefficient constraints exactly, beta = b0 + N xi, and keep
    // only the generator rows as residual rows.
    const auto red = linalg::reduce_equalities(A, b);
    if (red.inconsistency > detail::kEmptinessTol * std::max(1.0, b.cwiseAbs().maxCoeff())) return false;
    const Mat& N = red.null_basis;
    const Vec& b0 = red.particular;
    const Eigen::Index d = N.cols(), s = A.cols(), r = Gv.rows();
    Mat GN = Gv * N;
    Vec rhs = target - Gv * b0;
    for (Eigen::Index i = 0; i < r; ++i) {
        const double scale = std::max(1.0, Gv.row(i).cwiseAbs().maxCoeff());
        GN.row(i) /= scale;
        rhs(i) /= scale;
    }
    if (d == 0) return b0.cwiseAbs().maxCoeff() <= 1.0 + 1e-12 && rhs.cwiseAbs().maxCoeff() <= tol;
    optim::LpProblem lp;
    lp.cost = Vec::Zero(d + 1);
    lp.cost(d) = 1.0;
    lp.A = Mat::Zero(2 * r + 2 * s, d + 1);
    lp.A.topLeftCorner(r, d) = GN;
    lp.A.block(r, 0, r, d) = -GN;
    lp.A.block(0, d, 2 * r, 1).setConstant(-1.0);
    lp.A.block(2 * r, 0, s, d) = N;
    lp.A.block(2 * r + s, 0, s, d) = -N;
    lp.b.resize(2 * r + 2 * s);
    lp.b << rhs, -rhs, Vec::Ones(s) - b0, Vec::Ones(s) + b0;
    lp.lower = Vec::Constant(d + 1, -kInf);
    lp.upper = Vec::Constant(d + 1, kInf);
    lp.lower(d) = 0.0;
    const auto res = optim::solve_lp(lp);
    if (res.status == optim::Status::Infeasible) return false;
    // badly scaled generators: retry on the unreduced system
    if (!res.optimal()) return full_residual();
    return res.objective <= tol;
}

inline bool membership(const MatrixZonotope& mz, const Mat& X, double tol = detail::kEmptinessTol)
{
    return membership(ConstrainedMatrixZonotope(mz), X, tol);
}

// ---------------------------------------------------------------- sampling

namespace detail {

template <class Rng>
Vec uniform_cube(Eigen::Index s, Rng& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec z(s);
    for (Eigen::Index i = 0; i < s; ++i) z(i) = u(rng);
    return z;
}

/// Closest point (inf-norm) of the box slice to `draw`.
inline Vec project_coefficients(const Mat& A, const Vec& b, const Vec& draw)
{
    const Eigen::Index s = draw.size();
    if (A.rows() == 0) return draw;
    optim::LpProblem lp;
    lp.cost = Vec::Zero(s + 1);
    lp.cost(s) = 1.0;
    lp.A = Mat::Zero(2 * s, s + 1);
    lp.A.topLeftCorner(s, s).setIdentity();
    lp.A.bottomLeftCorner(s, s) = -Mat::Identity(s, s);
    lp.A.col(s).setConstant(-1.0);
    lp.b.resize(2 * s);
    lp.b << draw, -draw;
    lp.A_eq = Mat::Zero(A.rows(), s + 1);
    lp.A_eq.leftCols(s) = A;
    lp.b_eq = b;
    lp.lower = Vec::Constant(s + 1, -1.0);
    lp.upper = Vec::Constant(s + 1, 1.0);
    lp.lower(s) = 0.0;
    lp.upper(s) = kInf;
    const auto res = optim::solve_lp(lp);
    if (res.status == optim::Status::Infeasible) throw empty_set_error("sample: coefficient set is empty");
    if (!res.optimal()) throw optim::solver_error(res.status, "sample projection");
    return res.x.head(s);
}

}  // namespace detail

template <class Rng>
Vec sample(const Zonotope& z, Rng& rng)
{
    return z.center() + z.generators() * detail::uniform_cube(z.num_generators(), rng);
}

template <class Rng>
Vec sample(const ConstrainedZonotope& z, Rng& rng)
{
    const Vec zeta = detail::project_coefficients(z.eq_A(), z.eq_b(), detail::uniform_cube(z.num_generators(), rng));
    return z.center() + z.generators() * zeta;
}

template <class Rng>
Mat sample(const MatrixZonotope& mz, Rng& rng)
{
    return mz.realize(detail::uniform_cube(mz.num_generators(), rng));
}

template <class Rng>
Mat sample(const ConstrainedMatrixZonotope& mz, Rng& rng)
{
    const auto [A, b] = mz.vectorized_constraints();
    return mz.realize(detail::project_coefficients(A, b, detail::uniform_cube(mz.num_generators(), rng)));
}

/// Hit-and-run walk over {offset + basis*z : H z <= h}. Used where many
/// members are needed cheaply; individual draws are not independent.
class HitAndRun {
public:
    HitAndRun(Mat H, Vec h, Vec offset, Mat basis)
        : H_(std::move(H)), h_(std::move(h)), offset_(std::move(offset)), basis_(std::move(basis))
    {
        detail::require(H_.cols() == basis_.cols() && offset_.size() == basis_.rows() && H_.rows() == h_.size(),
                        "HitAndRun: inconsistent shapes");
        center_from_lp();
    }

    static HitAndRun in_polytope(const Polytope& P)
    {
        const Eigen::Index n = P.dim();
        return HitAndRun(P.H(), P.h(), Vec::Zero(n), Mat::Identity(n, n));
    }

    /// {beta : A beta = b, |beta|_inf <= 1}
    static HitAndRun in_box_slice(const Mat& A, const Vec& b)
    {
        const Eigen::Index s = A.cols();
        const auto red = linalg::reduce_equalities(A, b);
        if (red.inconsistency > 1e-8 * std::max(1.0, b.size() ? b.cwiseAbs().maxCoeff() : 0.0))
            throw empty_set_error("HitAndRun: inconsistent equalities");
        Mat H(2 * s, red.null_basis.cols());
        H << red.null_basis, -red.null_basis;
        Vec h(2 * s);
        h << Vec::Ones(s) - red.particular, Vec::Ones(s) + red.particular;
        return HitAndRun(std::move(H), std::move(h), red.particular, red.null_basis);
    }

    template <class Rng>
    Vec next(Rng& rng)
    {
        const Eigen::Index d = z_.size();
        if (d == 0 || radius_ <= 1e-13) return point();
        std::normal_distribution<double> nd;
        Vec dir(d);
        for (Eigen::Index i = 0; i < d; ++i) dir(i) = nd(rng);
        dir.normalize();
        const Vec Hd = H_ * dir;
        const Vec slack = (h_ - H_ * z_).cwiseMax(0.0);
        double lo = -kInf, hi = kInf;
        for (Eigen::Index i = 0; i < Hd.size(); ++i) {
            if (Hd(i) > 1e-14) hi = std::min(hi, slack(i) / Hd(i));
            else if (Hd(i) < -1e-14) lo = std::max(lo, slack(i) / Hd(i));
        }
        if (!std::isfinite(lo) || !std::isfinite(hi)) throw std::runtime_error("HitAndRun: unbounded set");
        std::uniform_real_distribution<double> u(lo, hi);
        z_ += u(rng) * dir;
        return point();
    }

    Vec point() const { return offset_ + basis_ * z_; }
    Vec center() const { return offset_ + basis_ * center_; }
    Eigen::Index dimension() const { return z_.size(); }
    double inradius() const { return radius_; }

private:
    void center_from_lp()
    {
        const Eigen::Index d = H_.cols();
        const Eigen::Index q = H_.rows();
        if (d == 0) {
            if (q && (h_.array() < -1e-9).any()) throw empty_set_error("HitAndRun: empty set");
            z_ = center_ = Vec(0);
            radius_ = 0.0;
            return;
        }
        // Chebyshev center: max r s.t. H z + r |H_i| <= h.
        optim::LpProblem lp;
        lp.cost = Vec::Zero(d + 1);
        lp.cost(d) = -1.0;
        lp.A = Mat(q, d + 1);
        lp.A.leftCols(d) = H_;
        lp.A.col(d) = H_.rowwise().norm();
        lp.b = h_;
        lp.lower = Vec::Constant(d + 1, -kInf);
        lp.upper = Vec::Constant(d + 1, kInf);
        lp.lower(d) = 0.0;
        lp.upper(d) = 1e6;
        const auto res = optim::solve_lp(lp);
        if (res.status == optim::Status::Infeasible) throw empty_set_error("HitAndRun: empty set");
        if (!res.optimal()) throw optim::solver_error(res.status, "HitAndRun center");
        center_ = res.x.head(d);
        z_ = center_;
        radius_ = res.x(d);
    }

    Mat H_;
    Vec h_;
    Vec offset_;
    Mat basis_;
    Vec z_;
    Vec center_;
    double radius_ = 0.0;
};

}  // namespace zonotube
