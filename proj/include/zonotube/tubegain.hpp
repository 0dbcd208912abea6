#pragma once

// Error tube and ancillary gain: the facet bounds that drive the tube-gain
// LP, the LP itself, and the one-step error set used to certify it.

#include "linalg.hpp"
#include "optim.hpp"
#include "setops.hpp"
#include "sysid.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace zonotube::tube {

/// E = {e : H e <= h}, with the per-coordinate radius |e_c| <= radius_c and
/// the inf-norm radius M_e = max_c radius_c cached.
struct TubeState {
    Mat H;
    Vec h;
    double lambda = 1.0;
    double M_e = 0.0;
    Vec radius;

    Polytope polytope() const { return Polytope(H, h); }

    static TubeState from_polytope(const Polytope& E)
    {
        detail::require((E.h().array() > 0.0).all(), "TubeState: origin must be interior (h > 0)");
        TubeState t;
        t.H = E.H();
        t.h = E.h();
        const IntervalBox box = interval_enclosure(E);
        t.radius = box.lower.cwiseAbs().cwiseMax(box.upper.cwiseAbs());
        t.M_e = inf_norm_bound(box);
        return t;
    }
};

inline TubeState update_tube(const TubeState& tube, double lambda)
{
    detail::require(lambda > 0.0 && lambda <= 1.0, "update_tube: lambda must lie in (0, 1]");
    TubeState next = tube;
    next.h = lambda * tube.h;
    next.lambda = lambda;
    // Both radii are positively homogeneous in h.
    next.M_e = lambda * tube.M_e;
    next.radius = lambda * tube.radius;
    return next;
}

/// max_j H^j e / h^j
inline double lyapunov_value(const Vec& e, const TubeState& tube)
{
    return (tube.H * e).cwiseQuotient(tube.h).maxCoeff();
}

struct GainParam {
    Mat V_K;
    Mat K;
    double rho = 0.0;
    Mat P;
};

struct FacetBounds {
    Vec y;
    Vec l;
    Vec z;
};

// ---------------------------------------------------------------- coefficient polytope

/// {beta : A beta = b, |beta|_inf <= 1}, kept in null-space coordinates
/// beta = particular + N xi for the support LPs. Bounds are taken relative to
/// a reference member (the slice center), which the nominal model uses.
class CoeffPolytope {
public:
    CoeffPolytope() = default;
    CoeffPolytope(Mat A, Vec b, const VertexCap& cap = {}) : A_(std::move(A)), b_(std::move(b))
    {
        detail::require(A_.rows() == b_.size(), "CoeffPolytope: A / b size");
        s_ = A_.cols();
        const auto red = linalg::reduce_equalities(A_, b_);
        if (red.inconsistency > 1e-8 * std::max(1.0, b_.size() ? b_.cwiseAbs().maxCoeff() : 0.0))
            throw empty_set_error("CoeffPolytope: inconsistent equalities");
        particular_ = red.particular;
        null_ = red.null_basis;
        reference_ = coefficient_center(A_, b_);
        if (detail::enumeration_allowed(null_.cols(), 2 * s_, cap)) vertices_ = box_slice_vertices(A_, b_, cap);
    }

    explicit CoeffPolytope(const ConstrainedMatrixZonotope& mz, const VertexCap& cap = {})
        : CoeffPolytope(mz.vectorized_constraints().first, mz.vectorized_constraints().second, cap)
    {
    }

    Eigen::Index num_coefficients() const { return s_; }
    Eigen::Index dimension() const { return null_.cols(); }
    const Mat& eq_A() const { return A_; }
    const Vec& eq_b() const { return b_; }
    const std::optional<std::vector<Vec>>& vertices() const { return vertices_; }
    const Vec& reference() const { return reference_; }
    /// Directions beta may move in: beta = particular + N xi.
    const Mat& null_basis() const { return null_; }
    Polytope as_polytope() const
    {
        Mat H(2 * s_ + 2 * A_.rows(), s_);
        H << Mat::Identity(s_, s_), -Mat::Identity(s_, s_), A_, -A_;
        Vec h(H.rows());
        h << Vec::Ones(2 * s_), b_, -b_;
        return Polytope(std::move(H), std::move(h));
    }

    bool contains(const Vec& beta, double tol = 1e-8) const
    {
        if (beta.size() != s_ || beta.cwiseAbs().maxCoeff() > 1.0 + tol) return false;
        return A_.rows() == 0 || (A_ * beta - b_).cwiseAbs().maxCoeff() <= tol * std::max(1.0, b_.cwiseAbs().maxCoeff());
    }

    /// max a'beta. Vertex maximum when cached, otherwise an LP in xi.
    double support(const Vec& a) const
    {
        detail::require(a.size() == s_, "CoeffPolytope::support: direction size");
        if (s_ == 0) return 0.0;
        if (vertices_) {
            double best = -kInf;
            for (const Vec& v : *vertices_) best = std::max(best, a.dot(v));
            return best;
        }
        const Eigen::Index d = null_.cols();
        const double base = a.dot(particular_);
        if (d == 0) return base;
        if (A_.rows() == 0) return a.cwiseAbs().sum();
        optim::LpProblem lp;
        lp.cost = -(null_.transpose() * a);
        lp.A.resize(2 * s_, d);
        lp.A << null_, -null_;
        // The 1e-9 slack keeps numerically flat slices feasible; it only enlarges the bound.
        lp.b.resize(2 * s_);
        lp.b << (Vec::Ones(s_) - particular_).array() + 1e-9, (Vec::Ones(s_) + particular_).array() + 1e-9;
        lp.lower = Vec::Constant(d, -kInf);
        lp.upper = Vec::Constant(d, kInf);
        const auto res = optim::solve_lp(lp);
        if (res.status == optim::Status::Infeasible) throw empty_set_error("CoeffPolytope: empty");
        if (!res.optimal()) throw optim::solver_error(res.status, "CoeffPolytope::support");
        return base - res.objective;
    }

    /// max |a'beta|
    double abs_support(const Vec& a) const { return std::max(support(a), support(-a)); }

    /// max |a'(beta - reference)|
    double deviation(const Vec& a) const
    {
        const double r = a.dot(reference_);
        return std::max(0.0, std::max(support(a) - r, support(-a) + r));
    }

    HitAndRun sampler() const { return HitAndRun::in_box_slice(A_, b_); }

private:
    Mat A_;
    Vec b_;
    Eigen::Index s_ = 0;
    Vec particular_;
    Mat null_;
    Vec reference_;
    std::optional<std::vector<Vec>> vertices_;
};

inline CoeffPolytope build_pdw(const ConstrainedMatrixZonotope& mdw, const VertexCap& cap = {})
{
    return CoeffPolytope(mdw, cap);
}

namespace detail {

/// R_j(i, k) = H^j G^i(:, k): row j of H applied to every generator block.
inline Mat facet_coefficients(const Mat& H, const MatrixZonotope& mz, Eigen::Index j)
{
    const Eigen::Index s = mz.num_generators();
    const Eigen::Index c = mz.cols();
    Mat R(s, c);
    for (Eigen::Index i = 0; i < s; ++i) R.row(i) = H.row(j) * mz.generator(i);
    return R;
}

/// Index of an earlier row equal to -H^j (or to H^j), else -1.
inline Eigen::Index mirrored_row(const Mat& H, Eigen::Index j)
{
    for (Eigen::Index k = 0; k < j; ++k) {
        if ((H.row(k) + H.row(j)).cwiseAbs().maxCoeff() <= 1e-12) return k;
        if ((H.row(k) - H.row(j)).cwiseAbs().maxCoeff() <= 1e-12) return k;
    }
    return -1;
}

}  // namespace detail

// ---------------------------------------------------------------- facet bounds

/// y^j = sum_i |H^j G_h^{:,i}|
inline Vec facet_y(const Mat& H, const Zonotope& Zw)
{
    zonotube::detail::require(H.cols() == Zw.dim(), "facet_y: dimensions");
    return (H * Zw.generators()).cwiseAbs().rowwise().sum();
}

/// Rbar(j, k) = max_beta |H^j G_dw(beta - ref) e_k|: worst deviation of each
/// data column as seen by facet j.
inline Mat column_deviation_bounds(const Mat& H, const ConstrainedMatrixZonotope& mdw, const CoeffPolytope& pdw)
{
    zonotube::detail::require(H.cols() == mdw.rows(), "column_deviation_bounds: dimensions");
    zonotube::detail::require(pdw.num_coefficients() == mdw.num_generators(), "column_deviation_bounds: coefficient count");
    const Eigen::Index q = H.rows();
    Mat out = Mat::Zero(q, mdw.cols());
    if (mdw.num_generators() == 0) return out;
    for (Eigen::Index j = 0; j < q; ++j) {
        if (const auto k = detail::mirrored_row(H, j); k >= 0) {
            out.row(j) = out.row(k);
            continue;
        }
        const Mat R = detail::facet_coefficients(H, mdw.unconstrained(), j);
        for (Eigen::Index c = 0; c < R.cols(); ++c)
            if (R.col(c).cwiseAbs().maxCoeff() > 0.0) out(j, c) = pdw.deviation(R.col(c));
    }
    return out;
}

/// Per-facet bound on max_beta ||H^j G_dw(beta - ref)||_1. The 1-norm is the
/// induced inf-norm of a row, matching ||V_K e||_inf <= rho M_e, so
/// l^j = M_e * gain^j. Exact over the vertex cache; otherwise the
/// coordinatewise bound sum_k Rbar(j, k).
inline Vec uncertainty_gains(const Mat& H, const ConstrainedMatrixZonotope& mdw, const CoeffPolytope& pdw)
{
    zonotube::detail::require(H.cols() == mdw.rows(), "uncertainty_gains: dimensions");
    zonotube::detail::require(pdw.num_coefficients() == mdw.num_generators(), "uncertainty_gains: coefficient count");
    const Eigen::Index q = H.rows();
    if (!pdw.vertices()) return column_deviation_bounds(H, mdw, pdw).rowwise().sum();
    Vec out = Vec::Zero(q);
    if (mdw.num_generators() == 0) return out;
    for (Eigen::Index j = 0; j < q; ++j) {
        if (const auto k = detail::mirrored_row(H, j); k >= 0) {
            out(j) = out(k);
            continue;
        }
        const Mat R = detail::facet_coefficients(H, mdw.unconstrained(), j);
        double best = 0.0;
        for (const Vec& v : *pdw.vertices())
            best = std::max(best, (R.transpose() * (v - pdw.reference())).cwiseAbs().sum());
        out(j) = best;
    }
    return out;
}

inline Vec facet_l(const Mat& H, const ConstrainedMatrixZonotope& mdw, const CoeffPolytope& pdw, double M_e)
{
    zonotube::detail::require(M_e >= 0.0, "facet_l: M_e must be nonnegative");
    if (M_e == 0.0) return Vec::Zero(H.rows());
    return M_e * uncertainty_gains(H, mdw, pdw);
}

/// v = D0^+ [xbar; ubar]
inline Vec nominal_direction(const sysid::DataBatch& batch, const Vec& xbar, const Vec& ubar)
{
    zonotube::detail::require(xbar.size() == batch.n() && ubar.size() == batch.m(), "nominal_direction: sizes");
    Vec p(batch.n() + batch.m());
    p << xbar, ubar;
    return batch.D0_pinv * p;
}

/// z^j = max_beta |H^j G_dw(beta - ref) v|
inline Vec facet_z(const Mat& H, const ConstrainedMatrixZonotope& mdw, const CoeffPolytope& pdw, const Vec& v)
{
    zonotube::detail::require(v.size() == mdw.cols(), "facet_z: direction size");
    const Eigen::Index q = H.rows();
    Vec out = Vec::Zero(q);
    if (mdw.num_generators() == 0 || v.cwiseAbs().maxCoeff() == 0.0) return out;
    for (Eigen::Index j = 0; j < q; ++j) {
        if (const auto k = detail::mirrored_row(H, j); k >= 0) {
            out(j) = out(k);
            continue;
        }
        const Vec a = detail::facet_coefficients(H, mdw.unconstrained(), j) * v;
        out(j) = a.cwiseAbs().maxCoeff() == 0.0 ? 0.0 : pdw.deviation(a);
    }
    return out;
}

inline Vec facet_z(const Mat& H, const ConstrainedMatrixZonotope& mdw, const CoeffPolytope& pdw,
                   const sysid::DataBatch& batch, const Vec& xbar, const Vec& ubar)
{
    return facet_z(H, mdw, pdw, nominal_direction(batch, xbar, ubar));
}

// ---------------------------------------------------------------- tube-gain LP

struct LambdaRange {
    double min = 1e-3;
    double max = 1.0 - 1e-6;
};

/// How the model-uncertainty term H^j G_dw(beta - ref) V_K e enters the LP.
///  norm_product: rho * l^j with l^j = M_e * max ||H^j G_dw||_1.
///  entrywise:    sum_{k,c} Rbar(j,k) |V_K(k,c)| radius_c, linear in |V_K|
///                and never larger than the norm product.
enum class ModelBound { norm_product, entrywise };

/// Optional upper bounds s on sup_{e in E} H_u^j U0 V_K e (one per input facet).
struct InputCap {
    Mat H_u;
    Vec s;
};

struct TubeGainResult {
    optim::Status status = optim::Status::NumericalFailure;
    GainParam gain;
    double lambda = 1.0;
    FacetBounds bounds;
    double objective = 0.0;

    bool optimal() const { return status == optim::Status::Optimal; }
};

/// Everything about the LP that does not change along a run: model set,
/// coefficient polytope, disturbance bound and the uncertainty gains.
class TubeGainContext {
public:
    TubeGainContext(const sysid::DataBatch& batch, ConstrainedMatrixZonotope mdw, Zonotope Zw, Mat H,
                    ModelBound mode = ModelBound::entrywise, const VertexCap& cap = {})
        : batch_(batch), mdw_(std::move(mdw)), Zw_(std::move(Zw)), H_(std::move(H)), pdw_(mdw_, cap), mode_(mode)
    {
        zonotube::detail::require(mdw_.rows() == batch_.n() && mdw_.cols() == batch_.T(), "TubeGainContext: model set shape");
        zonotube::detail::require(H_.cols() == batch_.n() && Zw_.dim() == batch_.n(), "TubeGainContext: dimensions");
        y_ = facet_y(H_, Zw_);
        columns_ = column_deviation_bounds(H_, mdw_, pdw_);
        gains_ = pdw_.vertices() ? uncertainty_gains(H_, mdw_, pdw_) : Vec(columns_.rowwise().sum());
        nominal_W_ = mdw_.num_generators() ? Mat(mdw_.realize(pdw_.reference())) : mdw_.center();
        HM_ = H_ * (batch_.X1 - nominal_W_);
        Hc_ = H_ * Zw_.center();
    }

    const sysid::DataBatch& batch() const { return batch_; }
    const ConstrainedMatrixZonotope& mdw() const { return mdw_; }
    const CoeffPolytope& pdw() const { return pdw_; }
    const Zonotope& disturbance() const { return Zw_; }
    const Mat& H() const { return H_; }
    const Vec& uncertainty_gain() const { return gains_; }
    const Mat& column_bounds() const { return columns_; }
    ModelBound mode() const { return mode_; }
    /// Disturbance sequence the nominal model is built from.
    const Mat& nominal_disturbance() const { return nominal_W_; }

    FacetBounds bounds(const TubeState& tube, const Vec& xbar, const Vec& ubar) const
    {
        return {y_, tube.M_e * gains_, facet_z(H_, mdw_, pdw_, batch_, xbar, ubar)};
    }

    TubeGainResult solve(const TubeState& tube, const Vec& xbar, const Vec& ubar, double sigma,
                         const InputCap* cap = nullptr, const LambdaRange& range = {}) const
    {
        return solve(tube, bounds(tube, xbar, ubar), sigma, cap, range);
    }

    /// min rho + sigma*lambda over (P >= 0, V_K = V+ - V-, rho, lambda):
    ///   P h + [model term] - lambda h <= -H c_h - z - y
    ///   P H = H (X1 - W_ref) V_K,  X0 V_K = I,  rowsum(V+ + V-) <= rho
    /// plus, with a cap, mu_j >= 0, mu_j' H = H_u^j U0 V_K, mu_j' h <= s_j.
    TubeGainResult solve(const TubeState& tube, const FacetBounds& fb, double sigma, const InputCap* cap = nullptr,
                         const LambdaRange& range = {}) const
    {
        const optim::LpProblem lp = build_lp(tube, fb, sigma, cap, range);
        const Eigen::Index q = H_.rows(), n = batch_.n(), T = batch_.T();
        const Eigen::Index oVp = q * q, oVm = oVp + T * n, oRho = oVm + T * n, oLam = oRho + 1;
        TubeGainResult out;
        out.bounds = fb;
        const auto res = optim::solve_lp(lp);
        out.status = res.status;
        if (!res.optimal()) return out;
        const Vec& x = res.x;
        out.objective = res.objective;
        out.lambda = x(oLam);
        out.gain.P = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(x.data(), q, q);
        out.gain.V_K = Eigen::Map<const Mat>(x.data() + oVp, T, n) - Eigen::Map<const Mat>(x.data() + oVm, T, n);
        out.gain.K = batch_.U0 * out.gain.V_K;
        out.gain.rho = x(oRho);
        return out;
    }

    /// The LP behind solve(). Variables: P (row-major), V+, V- (column-major),
    /// rho, lambda, then one multiplier block per capped input facet.
    optim::LpProblem build_lp(const TubeState& tube, const FacetBounds& fb, double sigma, const InputCap* cap = nullptr,
                              const LambdaRange& range = {}) const
    {
        zonotube::detail::require(tube.H.rows() == H_.rows() && (tube.H - H_).cwiseAbs().maxCoeff() == 0.0,
                                  "TubeGainContext::solve: tube facets differ from the context facets");
        zonotube::detail::require(sigma >= 0.0, "TubeGainContext::solve: sigma must be nonnegative");
        const Eigen::Index q = H_.rows(), n = batch_.n(), T = batch_.T();
        std::vector<Eigen::Index> capped;
        if (cap) {
            zonotube::detail::require(cap->H_u.cols() == batch_.m() && cap->H_u.rows() == cap->s.size(),
                                      "TubeGainContext::solve: input cap shape");
            for (Eigen::Index j = 0; j < cap->s.size(); ++j)
                if (std::isfinite(cap->s(j))) capped.push_back(j);
        }
        const auto p = static_cast<Eigen::Index>(capped.size());

        const Eigen::Index oP = 0, oVp = q * q, oVm = oVp + T * n, oRho = oVm + T * n, oLam = oRho + 1,
                           oMu = oLam + 1, nv = oMu + p * q;
        auto iP = [&](Eigen::Index j, Eigen::Index k) { return oP + j * q + k; };
        auto iV = [&](Eigen::Index t, Eigen::Index c) { return t + T * c; };
        auto iMu = [&](Eigen::Index r, Eigen::Index k) { return oMu + r * q + k; };

        optim::LpProblem lp;
        lp.cost = Vec::Zero(nv);
        lp.cost(oRho) = 1.0;
        lp.cost(oLam) = sigma;
        lp.lower = Vec::Zero(nv);
        lp.upper = Vec::Constant(nv, kInf);
        lp.lower(oLam) = range.min;
        lp.upper(oLam) = range.max;

        const Eigen::Index n_ineq = q + T + p;
        lp.A = Mat::Zero(n_ineq, nv);
        lp.b = Vec::Zero(n_ineq);
        for (Eigen::Index j = 0; j < q; ++j) {
            for (Eigen::Index k = 0; k < q; ++k) lp.A(j, iP(j, k)) = tube.h(k);
            if (mode_ == ModelBound::norm_product) {
                lp.A(j, oRho) = fb.l(j);
            } else {
                for (Eigen::Index t = 0; t < T; ++t) {
                    for (Eigen::Index c = 0; c < n; ++c) {
                        const double w = columns_(j, t) * tube.radius(c);
                        lp.A(j, oVp + iV(t, c)) = w;
                        lp.A(j, oVm + iV(t, c)) = w;
                    }
                }
            }
            lp.A(j, oLam) = -tube.h(j);
            lp.b(j) = -Hc_(j) - fb.z(j) - fb.y(j);
        }
        for (Eigen::Index t = 0; t < T; ++t) {
            for (Eigen::Index c = 0; c < n; ++c) {
                lp.A(q + t, oVp + iV(t, c)) = 1.0;
                lp.A(q + t, oVm + iV(t, c)) = 1.0;
            }
            lp.A(q + t, oRho) = -1.0;
        }
        for (Eigen::Index r = 0; r < p; ++r) {
            for (Eigen::Index k = 0; k < q; ++k) lp.A(q + T + r, iMu(r, k)) = tube.h(k);
            lp.b(q + T + r) = cap->s(capped[r]);
        }

        const Eigen::Index n_eq = q * n + n * n + p * n;
        lp.A_eq = Mat::Zero(n_eq, nv);
        lp.b_eq = Vec::Zero(n_eq);
        Eigen::Index row = 0;
        for (Eigen::Index j = 0; j < q; ++j) {
            for (Eigen::Index c = 0; c < n; ++c, ++row) {
                for (Eigen::Index k = 0; k < q; ++k) lp.A_eq(row, iP(j, k)) = H_(k, c);
                for (Eigen::Index t = 0; t < T; ++t) {
                    lp.A_eq(row, oVp + iV(t, c)) = -HM_(j, t);
                    lp.A_eq(row, oVm + iV(t, c)) = HM_(j, t);
                }
            }
        }
        for (Eigen::Index r = 0; r < n; ++r) {
            for (Eigen::Index c = 0; c < n; ++c, ++row) {
                for (Eigen::Index t = 0; t < T; ++t) {
                    lp.A_eq(row, oVp + iV(t, c)) = batch_.X0(r, t);
                    lp.A_eq(row, oVm + iV(t, c)) = -batch_.X0(r, t);
                }
                lp.b_eq(row) = r == c ? 1.0 : 0.0;
            }
        }
        if (p > 0) {
            const Mat HuU0 = cap->H_u * batch_.U0;
            for (Eigen::Index r = 0; r < p; ++r) {
                for (Eigen::Index c = 0; c < n; ++c, ++row) {
                    for (Eigen::Index k = 0; k < q; ++k) lp.A_eq(row, iMu(r, k)) = H_(k, c);
                    for (Eigen::Index t = 0; t < T; ++t) {
                        lp.A_eq(row, oVp + iV(t, c)) = -HuU0(capped[r], t);
                        lp.A_eq(row, oVm + iV(t, c)) = HuU0(capped[r], t);
                    }
                }
            }
        }

        return lp;
    }

private:
    sysid::DataBatch batch_;
    ConstrainedMatrixZonotope mdw_;
    Zonotope Zw_;
    Mat H_;
    CoeffPolytope pdw_;
    Vec y_;
    ModelBound mode_;
    Vec gains_;
    Mat columns_;
    Mat nominal_W_;
    Mat HM_;
    Vec Hc_;
};

inline TubeGainResult solve_tube_gain(const TubeState& tube, const sysid::DataBatch& batch,
                                      const ConstrainedMatrixZonotope& mdw, const Zonotope& Zw, const Vec& xbar,
                                      const Vec& ubar, double sigma)
{
    return TubeGainContext(batch, mdw, Zw, tube.H).solve(tube, xbar, ubar, sigma);
}

// ---------------------------------------------------------------- one-step error set

/// e+ = (X1 - C_dw - G_dw(beta)) V_K e - G_dw(beta - ref) v + c_h + G_h eta,
/// relative to the nominal model realized at the reference coefficients.
/// As a constrained zonotope over [beta; beta'; eta] with beta = beta'.
inline ConstrainedZonotope error_set_next(const Vec& e, const Vec& xbar, const Vec& ubar, const GainParam& gain,
                                          const sysid::DataBatch& batch, const ConstrainedMatrixZonotope& mdw,
                                          const Zonotope& Zw)
{
    const Eigen::Index n = batch.n(), s = mdw.num_generators(), sw = Zw.num_generators();
    const Vec Ve = gain.V_K * e;
    const Vec v = nominal_direction(batch, xbar, ubar);
    Mat G(n, 2 * s + sw);
    for (Eigen::Index i = 0; i < s; ++i) {
        G.col(i) = -(mdw.generator(i) * Ve);
        G.col(s + i) = -(mdw.generator(i) * v);
    }
    G.rightCols(sw) = Zw.generators();
    const auto [A, b] = mdw.vectorized_constraints();
    Vec c = (batch.X1 - mdw.center()) * Ve + Zw.center();
    if (s > 0) c += (mdw.realize(coefficient_center(A, b)) - mdw.center()) * v;
    const Eigen::Index r = A.rows();
    Mat Aeq = Mat::Zero(2 * r + s, 2 * s + sw);
    Vec beq = Vec::Zero(2 * r + s);
    Aeq.block(0, 0, r, s) = A;
    Aeq.block(r, s, r, s) = A;
    Aeq.block(2 * r, 0, s, s).setIdentity();
    Aeq.block(2 * r, s, s, s) = -Mat::Identity(s, s);
    beq.head(r) = b;
    beq.segment(r, r) = b;
    return ConstrainedZonotope(c, std::move(G), std::move(Aeq), std::move(beq), trusted);
}

/// Fast sampler for the contractivity check: e uniform-ish in E (hit-and-run),
/// beta from a hit-and-run walk over P_dw mixed with its extreme points, and
/// eta uniform in the unit cube.
class ErrorStepSampler {
public:
    ErrorStepSampler(const TubeGainContext& ctx, const TubeState& tube, const GainParam& gain, const Vec& xbar,
                     const Vec& ubar)
        : ctx_(ctx),
          tube_walk_(HitAndRun::in_polytope(tube.polytope())),
          beta_walk_(ctx.pdw().sampler()),
          tube_(tube),
          closed_loop_((ctx.batch().X1 - ctx.nominal_disturbance()) * gain.V_K),
          V_K_(gain.V_K),
          v_(nominal_direction(ctx.batch(), xbar, ubar))
    {
        if (ctx.pdw().vertices()) extremes_ = *ctx.pdw().vertices();
    }

    struct Draw {
        Vec e, beta, eta, next;
    };

    template <class Rng>
    Draw next(Rng& rng)
    {
        Draw d;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        d.e = tube_walk_.next(rng);
        // Push a fraction of draws onto the boundary, where violations would show first.
        if (u(rng) < 0.3) {
            const double V = lyapunov_value(d.e, tube_);
            if (V > 1e-12) d.e /= V;
        }
        d.beta = (!extremes_.empty() && u(rng) < 0.3)
                     ? extremes_[static_cast<std::size_t>(u(rng) * static_cast<double>(extremes_.size())) % extremes_.size()]
                     : beta_walk_.next(rng);
        d.eta = zonotube::detail::uniform_cube(ctx_.disturbance().num_generators(), rng);
        if (u(rng) < 0.3) d.eta = d.eta.unaryExpr([](double x) { return x >= 0 ? 1.0 : -1.0; });
        const Mat G = ctx_.mdw().num_generators() ? Mat(ctx_.mdw().realize(d.beta) - ctx_.nominal_disturbance())
                                                  : Mat(Mat::Zero(ctx_.batch().n(), ctx_.batch().T()));
        d.next = closed_loop_ * d.e - G * (V_K_ * d.e) - G * v_ + ctx_.disturbance().center() +
                 ctx_.disturbance().generators() * d.eta;
        return d;
    }

private:
    const TubeGainContext& ctx_;
    HitAndRun tube_walk_;
    HitAndRun beta_walk_;
    TubeState tube_;
    Mat closed_loop_;
    Mat V_K_;
    Vec v_;
    std::vector<Vec> extremes_;
};

struct ContractivityReport {
    long samples = 0;
    long violations = 0;
    double worst_margin = -kInf;  ///< max_j (H e+ - lambda h)_j over all samples
};

template <class Rng>
ContractivityReport check_contractivity(const TubeGainContext& ctx, const TubeState& tube, const TubeGainResult& sol,
                                        const Vec& xbar, const Vec& ubar, long samples, Rng& rng, double tol = 1e-6)
{
    ContractivityReport rep;
    ErrorStepSampler sampler(ctx, tube, sol.gain, xbar, ubar);
    const Vec bound = sol.lambda * tube.h;
    for (long k = 0; k < samples; ++k) {
        const auto d = sampler.next(rng);
        const double margin = (tube.H * d.next - bound).maxCoeff();
        rep.worst_margin = std::max(rep.worst_margin, margin);
        if (margin > tol) ++rep.violations;
        ++rep.samples;
    }
    return rep;
}

// ---------------------------------------------------------------- open vs closed-loop comparison

struct GammaComparison {
    Vec gamma_cl;
    Vec gamma_ol;
    std::vector<bool> facet_condition;  ///< gamma_cl < gamma_ol
};

/// Per-facet bound F^j on |H^j [dA dB] p| for p in X x U, where
/// [dA dB] = -G_dw(beta - ref) D0^+ is the deviation from the nominal model. Uses |p_k| <= pbar_k from the interval hull of
/// X x U and max_beta |d_k(beta)| per coordinate.
inline Vec open_loop_mismatch(const Mat& H, const ConstrainedMatrixZonotope& mdw, const CoeffPolytope& pdw,
                              const sysid::DataBatch& batch, const Polytope& X, const Polytope& U)
{
    const Eigen::Index q = H.rows(), n = batch.n(), m = batch.m();
    Vec pbar(n + m);
    const IntervalBox bx = interval_enclosure(X), bu = interval_enclosure(U);
    pbar << bx.lower.cwiseAbs().cwiseMax(bx.upper.cwiseAbs()), bu.lower.cwiseAbs().cwiseMax(bu.upper.cwiseAbs());
    Vec F = Vec::Zero(q);
    if (mdw.num_generators() == 0) return F;
    for (Eigen::Index j = 0; j < q; ++j) {
        if (const auto k = detail::mirrored_row(H, j); k >= 0) {
            F(j) = F(k);
            continue;
        }
        const Mat Rd = -detail::facet_coefficients(H, mdw.unconstrained(), j) * batch.D0_pinv;
        for (Eigen::Index k = 0; k < n + m; ++k) {
            if (Rd.col(k).cwiseAbs().maxCoeff() == 0.0) continue;
            F(j) += pbar(k) * pdw.deviation(Rd.col(k));
        }
    }
    return F;
}

inline GammaComparison gamma_compare(const TubeGainContext& ctx, const TubeState& tube, const Polytope& X,
                                     const Polytope& U, const Vec& xbar, const Vec& ubar, const GainParam& gain)
{
    const FacetBounds fb = ctx.bounds(tube, xbar, ubar);
    const Vec Hc = ctx.H() * ctx.disturbance().center();
    const Vec F = open_loop_mismatch(ctx.H(), ctx.mdw(), ctx.pdw(), ctx.batch(), X, U);
    GammaComparison out;
    out.gamma_cl = Hc + gain.rho * fb.l + fb.z + fb.y;
    out.gamma_ol = Hc + F + fb.y;
    for (Eigen::Index j = 0; j < out.gamma_cl.size(); ++j) out.facet_condition.push_back(out.gamma_cl(j) < out.gamma_ol(j));
    return out;
}

}  // namespace zonotube::tube
