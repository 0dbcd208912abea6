#pragma once

// Nominal tube MPC: facet-wise tightening, quadratic-regulator terminal
// ingredients with a maximal admissible invariant set, and the horizon-N QP.

#include "tubegain.hpp"

#include <optional>
#include <stdexcept>
#include <string>

namespace zonotube::tmpc {

/// Terminal ingredients could not be built for the given sets.
class configuration_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MpcConfig {
    int N = 10;
    Mat Q;
    Mat R;
    Mat nominal_A;
    Mat nominal_B;
    bool strict_Q = true;  ///< require Q positive definite, not just PSD

    Eigen::Index n() const { return nominal_A.rows(); }
    Eigen::Index m() const { return nominal_B.cols(); }

    void validate() const
    {
        zonotube::detail::require(N >= 1, "MpcConfig: N must be at least 1");
        zonotube::detail::require(nominal_A.rows() == nominal_A.cols() && nominal_B.rows() == n(),
                                  "MpcConfig: A is " + zonotube::detail::shape(nominal_A) + ", B is " +
                                      zonotube::detail::shape(nominal_B));
        zonotube::detail::require(Q.rows() == n() && Q.cols() == n() && R.rows() == m() && R.cols() == m(),
                                  "MpcConfig: weight shapes");
        zonotube::detail::require((Q - Q.transpose()).cwiseAbs().maxCoeff() <= 1e-12 &&
                                      (R - R.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
                                  "MpcConfig: weights must be symmetric");
        Eigen::SelfAdjointEigenSolver<Mat> eq(Q, Eigen::EigenvaluesOnly), er(R, Eigen::EigenvaluesOnly);
        const double qmin = eq.eigenvalues().minCoeff();
        zonotube::detail::require(strict_Q ? qmin > 0.0 : qmin >= -1e-12, "MpcConfig: Q is not positive (semi)definite");
        zonotube::detail::require(er.eigenvalues().minCoeff() > 0.0, "MpcConfig: R is not positive definite");
    }
};

/// N = 10, Q = 20 I, R = 0.1 I.
inline MpcConfig rosbot_config(Mat A, Mat B, int N = 10, double q = 20.0, double r = 0.1)
{
    MpcConfig cfg;
    cfg.N = N;
    cfg.Q = q * Mat::Identity(A.rows(), A.rows());
    cfg.R = r * Mat::Identity(B.cols(), B.cols());
    cfg.nominal_A = std::move(A);
    cfg.nominal_B = std::move(B);
    return cfg;
}

// ---------------------------------------------------------------- tightening

namespace detail {

/// max over E of each row of D.
inline Vec row_supports(const Polytope& E, const Mat& D)
{
    Vec s(D.rows());
    for (Eigen::Index j = 0; j < D.rows(); ++j)
        s(j) = D.row(j).cwiseAbs().maxCoeff() == 0.0 ? 0.0 : support(E, Vec(D.row(j).transpose()));
    return s;
}

}  // namespace detail

/// X minus the tube: P(H_x, h_x - s), s_j = max_{e in E} H_x^j e.
inline Polytope tighten_state(const Polytope& X, const tube::TubeState& tube)
{
    zonotube::detail::require(X.dim() == tube.H.cols(), "tighten_state: dimensions");
    return X.with_offsets(X.h() - detail::row_supports(tube.polytope(), X.H()));
}

/// U minus K E with K = U0 V_K.
inline Polytope tighten_input(const Polytope& U, const Mat& K, const tube::TubeState& tube)
{
    zonotube::detail::require(K.rows() == U.dim() && K.cols() == tube.H.cols(), "tighten_input: gain is " +
                                                                                   zonotube::detail::shape(K));
    return U.with_offsets(U.h() - detail::row_supports(tube.polytope(), U.H() * K));
}

inline Polytope tighten_input(const Polytope& U, const Mat& U0, const Mat& V_K, const tube::TubeState& tube)
{
    zonotube::detail::require(U0.cols() == V_K.rows(), "tighten_input: U0 / V_K shapes");
    return tighten_input(U, Mat(U0 * V_K), tube);
}

// ---------------------------------------------------------------- terminal ingredients

struct Lqr {
    Mat K;  ///< u = K x
    Mat P;
    int iterations = 0;
};

/// Discrete Riccati fixed point by structure-preserving doubling.
inline Lqr solve_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, double tol = 1e-12, int max_iter = 100)
{
    const Eigen::Index n = A.rows();
    zonotube::detail::require(A.cols() == n && B.rows() == n && Q.rows() == n && R.rows() == B.cols(),
                              "solve_dare: dimensions");
    const Mat I = Mat::Identity(n, n);
    Mat Ak = A;
    Mat G = B * R.ldlt().solve(B.transpose());
    Mat H = Q;
    Lqr out;
    bool converged = false;
    for (int k = 1; k <= max_iter; ++k) {
        const Eigen::PartialPivLU<Mat> W(I + G * H);
        const Mat WA = W.solve(Ak);
        const Mat WG = W.solve(G);
        const Mat H_next = H + Ak.transpose() * H * WA;
        G = G + Ak * WG * Ak.transpose();
        Ak = Ak * WA;
        const double change = (H_next - H).cwiseAbs().maxCoeff();
        H = 0.5 * (H_next + H_next.transpose());
        out.iterations = k;
        if (!H.allFinite()) break;
        if (change <= tol * std::max(1.0, H.cwiseAbs().maxCoeff())) {
            converged = true;
            break;
        }
    }
    if (!converged) throw configuration_error("solve_dare: no stabilizing solution found");
    out.P = H;
    out.K = -(R + B.transpose() * H * B).ldlt().solve(B.transpose() * H * A);
    return out;
}

/// Drop facets implied by the others (one LP each).
inline Polytope prune_redundant(const Polytope& P, double tol = 1e-9)
{
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < P.num_facets(); ++i) keep.push_back(i);
    for (Eigen::Index i = P.num_facets(); i-- > 0;) {
        const auto it = std::find(keep.begin(), keep.end(), i);
        const Vec row = P.H().row(i).transpose();
        if (row.cwiseAbs().maxCoeff() == 0.0) {
            if (P.h()(i) >= 0.0) keep.erase(it);
            continue;
        }
        // Relax row i and see whether the rest already bound it.
        Mat H(static_cast<Eigen::Index>(keep.size()), P.dim());
        Vec h(H.rows());
        for (std::size_t k = 0; k < keep.size(); ++k) {
            H.row(static_cast<Eigen::Index>(k)) = P.H().row(keep[k]);
            h(static_cast<Eigen::Index>(k)) = keep[k] == i ? P.h()(i) + 1.0 : P.h()(keep[k]);
        }
        const auto res = optim::solve_lp({-row, H, h, {}, {}, {}, {}});
        if (res.optimal() && -res.objective <= P.h()(i) + tol * std::max(1.0, std::abs(P.h()(i)))) keep.erase(it);
    }
    Mat H(static_cast<Eigen::Index>(keep.size()), P.dim());
    Vec h(H.rows());
    for (std::size_t k = 0; k < keep.size(); ++k) {
        H.row(static_cast<Eigen::Index>(k)) = P.H().row(keep[k]);
        h(static_cast<Eigen::Index>(k)) = P.h()(keep[k]);
    }
    return Polytope(std::move(H), std::move(h));
}

struct InvariantSet {
    Polytope set;
    int iterations = 0;
    bool converged = false;
};

/// Largest set inside C that x+ = Acl x keeps inside C: intersect one-step
/// preimages until the newest rows are all redundant.
inline InvariantSet maximal_invariant_set(const Mat& Acl, const Polytope& C, int max_iter = 50, double tol = 1e-9)
{
    zonotube::detail::require(Acl.rows() == Acl.cols() && Acl.cols() == C.dim(), "maximal_invariant_set: dimensions");
    Mat H = C.H();
    Vec h = C.h();
    Mat Ak = Mat::Identity(C.dim(), C.dim());
    InvariantSet out;
    for (int k = 1; k <= max_iter; ++k) {
        Ak = Acl * Ak;
        const Mat Hn = C.H() * Ak;
        const Polytope current(H, h);
        bool redundant = true;
        for (Eigen::Index j = 0; j < Hn.rows() && redundant; ++j) {
            if (Hn.row(j).cwiseAbs().maxCoeff() == 0.0) {
                redundant = C.h()(j) >= 0.0;
                continue;
            }
            redundant = support(current, Vec(Hn.row(j).transpose())) <= C.h()(j) + tol * std::max(1.0, std::abs(C.h()(j)));
        }
        out.iterations = k;
        if (redundant) {
            out.set = prune_redundant(current, tol);
            out.converged = true;
            return out;
        }
        H.conservativeResize(H.rows() + Hn.rows(), Eigen::NoChange);
        H.bottomRows(Hn.rows()) = Hn;
        h.conservativeResize(h.size() + C.h().size());
        h.tail(C.h().size()) = C.h();
    }
    out.set = prune_redundant(Polytope(H, h), tol);
    return out;
}

struct TerminalIngredients {
    Mat K_T;
    Mat P_T;  ///< V_T(x) = x' P_T x
    Polytope T_set;
    int iterations = 0;
};

inline TerminalIngredients terminal_ingredients(const MpcConfig& cfg, const Polytope& Xt, const Polytope& Ut,
                                                int max_iter = 50)
{
    cfg.validate();
    const Lqr lqr = solve_dare(cfg.nominal_A, cfg.nominal_B, cfg.Q, cfg.R);
    Mat H(Xt.num_facets() + Ut.num_facets(), cfg.n());
    H << Xt.H(), Ut.H() * lqr.K;
    Vec h(H.rows());
    h << Xt.h(), Ut.h();
    InvariantSet inv;
    try {
        inv = maximal_invariant_set(cfg.nominal_A + cfg.nominal_B * lqr.K, Polytope(H, h), max_iter);
        (void)support(inv.set, Vec::Zero(cfg.n()));
    } catch (const empty_set_error&) {
        throw configuration_error("terminal_ingredients: terminal set is empty");
    }
    if (!inv.converged)
        throw configuration_error("terminal_ingredients: invariant set did not converge in " + std::to_string(max_iter) +
                                  " iterations");
    return {lqr.K, lqr.P, std::move(inv.set), inv.iterations};
}

// ---------------------------------------------------------------- the QP

struct MpcSolution {
    optim::Status status = optim::Status::NumericalFailure;
    Mat x;  ///< n x (N+1) nominal states
    Mat u;  ///< m x N nominal inputs
    double objective = 0.0;

    bool optimal() const { return status == optim::Status::Optimal; }
    Vec first_input() const { return u.col(0); }
};

inline double stage_cost(const MpcConfig& cfg, const Vec& x, const Vec& u)
{
    return x.dot(cfg.Q * x) + u.dot(cfg.R * u);
}

/// min x_N' P_T x_N + sum_k L(x_k, u_k) over the nominal dynamics from
/// x_0 = x_init, with x_k in Xt, u_k in Ut (k < N) and x_N in T_set.
/// With `spread`, x_0 is a decision variable restricted to x_init - x_0 in spread.
inline MpcSolution solve_tmpc(const MpcConfig& cfg, const Polytope& Xt, const Polytope& Ut,
                              const TerminalIngredients& term, const Vec& x_init, const Polytope* spread = nullptr)
{
    cfg.validate();
    const Eigen::Index n = cfg.n(), m = cfg.m(), N = cfg.N;
    zonotube::detail::require(x_init.size() == n && Xt.dim() == n && Ut.dim() == m && term.T_set.dim() == n,
                              "solve_tmpc: dimensions");
    const Eigen::Index nx = n * (N + 1), nv = nx + m * N;
    auto ix = [&](Eigen::Index k) { return n * k; };
    auto iu = [&](Eigen::Index k) { return nx + m * k; };

    optim::QpProblem qp;
    qp.H = Mat::Zero(nv, nv);
    qp.f = Vec::Zero(nv);
    for (Eigen::Index k = 0; k < N; ++k) {
        qp.H.block(ix(k), ix(k), n, n) = 2.0 * cfg.Q;
        qp.H.block(iu(k), iu(k), m, m) = 2.0 * cfg.R;
    }
    qp.H.block(ix(N), ix(N), n, n) = term.P_T + term.P_T.transpose();

    const Eigen::Index fixed = spread ? 0 : n;
    qp.A_eq = Mat::Zero(fixed + n * N, nv);
    qp.b_eq = Vec::Zero(qp.A_eq.rows());
    if (!spread) {
        qp.A_eq.block(0, 0, n, n).setIdentity();
        qp.b_eq.head(n) = x_init;
    }
    for (Eigen::Index k = 0; k < N; ++k) {
        const Eigen::Index r = fixed + n * k;
        qp.A_eq.block(r, ix(k + 1), n, n).setIdentity();
        qp.A_eq.block(r, ix(k), n, n) = -cfg.nominal_A;
        qp.A_eq.block(r, iu(k), n, m) = -cfg.nominal_B;
    }

    const Eigen::Index qx = Xt.num_facets(), qu = Ut.num_facets(), qt = term.T_set.num_facets();
    const Eigen::Index qs = spread ? spread->num_facets() : 0;
    zonotube::detail::require(!spread || spread->dim() == n, "solve_tmpc: spread set dimension");
    qp.A = Mat::Zero(N * (qx + qu) + qt + qs, nv);
    qp.b = Vec::Zero(qp.A.rows());
    Eigen::Index row = 0;
    for (Eigen::Index k = 0; k < N; ++k) {
        qp.A.block(row, ix(k), qx, n) = Xt.H();
        qp.b.segment(row, qx) = Xt.h();
        row += qx;
        qp.A.block(row, iu(k), qu, m) = Ut.H();
        qp.b.segment(row, qu) = Ut.h();
        row += qu;
    }
    qp.A.block(row, ix(N), qt, n) = term.T_set.H();
    qp.b.segment(row, qt) = term.T_set.h();
    row += qt;
    if (spread) {
        qp.A.block(row, 0, qs, n) = -spread->H();
        qp.b.segment(row, qs) = spread->h() - spread->H() * x_init;
    }

    MpcSolution sol;
    const auto res = optim::solve_qp(qp);
    sol.status = res.status;
    if (!res.optimal()) return sol;
    sol.x = Eigen::Map<const Mat>(res.x.data(), n, N + 1);
    sol.u = Eigen::Map<const Mat>(res.x.data() + nx, m, N);
    if (!spread) sol.x.col(0) = x_init;
    sol.objective = 0.5 * res.x.dot(qp.H * res.x);
    return sol;
}

/// u = ubar*(t|t) + U0 V_K e
inline Vec control_input(const MpcSolution& sol, const tube::GainParam& gain, const Vec& e)
{
    zonotube::detail::require(sol.u.cols() > 0 && gain.K.cols() == e.size(), "control_input: shapes");
    return sol.first_input() + gain.K * e;
}

/// xbar(0|0) = x0 - offset (offset defaults to 0) after checking the offset
/// lies in the tube.
inline Vec choose_initial_nominal(const Vec& x0, const tube::TubeState& tube, const std::optional<Vec>& offset = {},
                                  double tol = 1e-9)
{
    const Vec d = offset.value_or(Vec::Zero(x0.size()));
    zonotube::detail::require(d.size() == x0.size() && x0.size() == tube.H.cols(), "choose_initial_nominal: sizes");
    if ((tube.H * d - tube.h).maxCoeff() > tol)
        throw std::invalid_argument("choose_initial_nominal: x0 is not in xbar + E");
    return x0 - d;
}

struct SteadyState {
    Vec u;
    double residual = 0.0;  ///< |(A - I) x_t + B u + c|_inf
};

/// Input that holds the nominal model at x_t (least squares when inexact).
inline SteadyState steady_state_input(const Mat& A, const Mat& B, const Vec& x_t, const Vec& offset)
{
    const Vec rhs = x_t - A * x_t - offset;
    SteadyState out;
    out.u = B.completeOrthogonalDecomposition().solve(rhs);
    out.residual = (B * out.u - rhs).cwiseAbs().maxCoeff();
    return out;
}

}  // namespace zonotube::tmpc
