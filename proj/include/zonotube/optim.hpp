#pragma once

// Dense LP (bounded two-phase simplex) and convex QP (Goldfarb-Idnani dual
// active set) solvers. Problems here are small and dense, so a tableau is
// simpler and fast enough.

#include "core.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace zonotube::optim {

enum class Status { Optimal, Infeasible, Unbounded, NumericalFailure };

inline const char* to_string(Status s)
{
    switch (s) {
    case Status::Optimal: return "Optimal";
    case Status::Infeasible: return "Infeasible";
    case Status::Unbounded: return "Unbounded";
    case Status::NumericalFailure: return "NumericalFailure";
    }
    return "?";
}

/// min cost'x  s.t.  A x <= b,  A_eq x = b_eq,  lower <= x <= upper.
/// Empty constraint blocks are allowed; empty bound vectors mean "free".
struct LpProblem {
    Vec cost;
    Mat A;
    Vec b;
    Mat A_eq;
    Vec b_eq;
    Vec lower;
    Vec upper;

    Eigen::Index num_vars() const { return cost.size(); }

    void validate() const
    {
        const auto n = num_vars();
        zonotube::detail::require(A.rows() == b.size() && (A.rows() == 0 || A.cols() == n),
                        "LpProblem: inequality block is " + zonotube::detail::shape(A));
        zonotube::detail::require(A_eq.rows() == b_eq.size() && (A_eq.rows() == 0 || A_eq.cols() == n),
                        "LpProblem: equality block is " + zonotube::detail::shape(A_eq));
        zonotube::detail::require(lower.size() == 0 || lower.size() == n, "LpProblem: lower bound size");
        zonotube::detail::require(upper.size() == 0 || upper.size() == n, "LpProblem: upper bound size");
        zonotube::detail::require(b.allFinite() && b_eq.allFinite() && cost.allFinite() && A.allFinite() &&
                            A_eq.allFinite(),
                        "LpProblem: non-finite data");
    }
};

/// min 0.5 x'Hx + f'x with the same constraint blocks as LpProblem.
struct QpProblem {
    Mat H;
    Vec f;
    Mat A;
    Vec b;
    Mat A_eq;
    Vec b_eq;
    Vec lower;
    Vec upper;

    Eigen::Index num_vars() const { return f.size(); }
};

/// Thrown by set operations when an LP they depend on does not reach Optimal.
class solver_error : public std::runtime_error {
public:
    solver_error(Status status, const std::string& what)
        : std::runtime_error(what + ": " + to_string(status)), status_(status) {}
    Status status() const { return status_; }

private:
    Status status_;
};

struct SolveResult {
    Status status = Status::NumericalFailure;
    Vec x;
    double objective = std::numeric_limits<double>::quiet_NaN();
    double dual_objective = std::numeric_limits<double>::quiet_NaN();
    double primal_residual = kInf;
    double dual_residual = kInf;
    Vec dual_ineq;  ///< multipliers of A x <= b (>= 0)
    Vec dual_eq;    ///< multipliers of A_eq x = b_eq
    int iterations = 0;

    bool optimal() const { return status == Status::Optimal; }
};

namespace detail {

// Scaled residual of a point against the constraint blocks: each violation is
// divided by max(1, row inf-norm) so that large-coefficient rows do not dominate.
template <class P>
double primal_residual(const P& p, const Vec& x)
{
    double r = 0.0;
    for (Eigen::Index i = 0; i < p.A.rows(); ++i) {
        const double scale = std::max(1.0, p.A.row(i).cwiseAbs().maxCoeff());
        r = std::max(r, (p.A.row(i).dot(x) - p.b(i)) / scale);
    }
    for (Eigen::Index i = 0; i < p.A_eq.rows(); ++i) {
        const double scale = std::max(1.0, p.A_eq.row(i).cwiseAbs().maxCoeff());
        r = std::max(r, std::abs(p.A_eq.row(i).dot(x) - p.b_eq(i)) / scale);
    }
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        if (p.lower.size() && std::isfinite(p.lower(j))) r = std::max(r, p.lower(j) - x(j));
        if (p.upper.size() && std::isfinite(p.upper(j))) r = std::max(r, x(j) - p.upper(j));
    }
    return r;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Pivot safeguards; solve_lp retries with stricter settings on breakdown.
struct SimplexSettings {
    double pivot_tol = 1e-9;
    int refresh_every = 0;  ///< 0: max(50, rows)
};

/// Bounded-variable simplex on  min c'y  s.t.  M y = r,  0 <= y <= u,
/// where the last `n_art` columns are artificials forming the initial basis.
class BoundedSimplex {
public:
    BoundedSimplex(RowMat M, Vec r, Vec c, Vec u, std::vector<int> basis, int n_art, SimplexSettings settings = {})
        : M_(M), T_(std::move(M)), r_(std::move(r)), c_(std::move(c)), u_(std::move(u)),
          basis_(std::move(basis)), n_art_(n_art)
    {
        m_ = static_cast<int>(T_.rows());
        piv_tol_ = settings.pivot_tol;
        refresh_every_ = settings.refresh_every > 0 ? settings.refresh_every : std::max(50, m_);
        ncol_ = static_cast<int>(T_.cols());
        at_upper_.assign(ncol_, false);
        is_basic_.assign(ncol_, -1);
        for (int i = 0; i < m_; ++i) is_basic_[basis_[i]] = i;
        xb_ = r_;
    }

    Status run(int& iterations)
    {
        const int first_art = ncol_ - n_art_;
        if (n_art_ > 0) {
            Vec c1 = Vec::Zero(ncol_);
            c1.tail(n_art_).setOnes();
            Status s = iterate(c1, /*allow_art=*/true, iterations);
            if (s != Status::Optimal) return s == Status::Unbounded ? Status::NumericalFailure : s;
            double infeas = 0.0;
            for (int i = 0; i < m_; ++i)
                if (basis_[i] >= first_art) infeas += std::max(0.0, xb_(i));
            // Certificate: phase-1 optimum is strictly positive.
            if (infeas > feas_tol_ * std::max(1.0, r_.cwiseAbs().maxCoeff())) return Status::Infeasible;
            drive_out_artificials(first_art);
            for (int j = first_art; j < ncol_; ++j) u_(j) = 0.0;
        }
        return iterate(c_, /*allow_art=*/false, iterations);
    }

    /// Recompute basic values and duals from the original matrix for accuracy.
    bool refine(Vec& y, Vec& pi, Vec& d) const
    {
        Mat B(m_, m_);
        for (int i = 0; i < m_; ++i) B.col(i) = M_.col(basis_[i]);
        Vec rhs = r_;
        Vec ynb = Vec::Zero(ncol_);
        for (int j = 0; j < ncol_; ++j)
            if (is_basic_[j] < 0 && at_upper_[j]) ynb(j) = u_(j);
        rhs -= M_ * ynb;
        if (m_ == 0) {
            y = ynb;
            pi = Vec::Zero(0);
            d = c_;
            return true;
        }
        Eigen::PartialPivLU<Mat> lu(B);
        if (!(lu.matrixLU().diagonal().cwiseAbs().minCoeff() > 1e-14)) return false;
        Vec xb = lu.solve(rhs);
        y = ynb;
        for (int i = 0; i < m_; ++i) y(basis_[i]) = xb(i);
        Vec cb(m_);
        for (int i = 0; i < m_; ++i) cb(i) = c_(basis_[i]);
        pi = lu.transpose().solve(cb);
        d = c_ - M_.transpose() * pi;
        return y.allFinite() && pi.allFinite();
    }

    const Vec& upper() const { return u_; }
    bool basic(int j) const { return is_basic_[j] >= 0; }
    bool at_upper(int j) const { return at_upper_[j]; }

private:
    Status iterate(const Vec& cost, bool allow_art, int& iterations)
    {
        // reduced costs d_j = c_j - c_B' T_j
        Vec cb(m_);
        for (int i = 0; i < m_; ++i) cb(i) = cost(basis_[i]);
        Eigen::RowVectorXd d = cost.transpose() - cb.transpose() * T_;
        const int limit = 50 * (m_ + ncol_) + 1000;
        int degenerate_run = 0;
        const int first_art = ncol_ - n_art_;
        const double cscale = std::max(1.0, cost.cwiseAbs().maxCoeff());
        int since_refresh = 0;
        for (;;) {
            if (++iterations > limit) return Status::NumericalFailure;
            if (since_refresh >= refresh_every_) {
                if (!reinvert()) return Status::NumericalFailure;
                for (int i = 0; i < m_; ++i) cb(i) = cost(basis_[i]);
                d = cost.transpose() - cb.transpose() * T_;
                since_refresh = 0;
            }
            const bool bland = degenerate_run > 30;
            int q = -1;
            double best = 0.0;
            for (int j = 0; j < ncol_; ++j) {
                if (is_basic_[j] >= 0) continue;
                if (!allow_art && j >= first_art) continue;
                if (u_(j) <= 0.0) continue;  // fixed at zero
                const double dj = d(j);
                double score = 0.0;
                if (!at_upper_[j] && dj < -opt_tol_ * cscale) score = -dj;
                else if (at_upper_[j] && dj > opt_tol_ * cscale) score = dj;
                if (score <= 0.0) continue;
                if (bland) { q = j; break; }
                if (score > best) { best = score; q = j; }
            }
            if (q < 0) {
                // Confirm on a freshly factored basis; drift can fake optimality.
                if (since_refresh == 0) return Status::Optimal;
                since_refresh = refresh_every_;
                continue;
            }

            const double dir = at_upper_[q] ? -1.0 : 1.0;
            double theta = u_(q);  // bound flip
            int leave = -1;
            // Two-pass (Harris) ratio test: bound the step with slightly relaxed
            // limits, then take the largest pivot among rows that block it.
            // Bland mode uses the plain minimum-ratio rule for termination.
            auto limit_of = [&](int i, double a, double slack) {
                const double rate = -dir * a;  // d xb_i / d theta
                if (rate < 0.0) return (std::max(0.0, xb_(i)) + slack) / -rate;
                const double ub = u_(basis_[i]);
                if (!std::isfinite(ub)) return kInf;
                return (std::max(0.0, ub - xb_(i)) + slack) / rate;
            };
            if (bland) {
                for (int i = 0; i < m_; ++i) {
                    const double a = T_(i, q);
                    if (std::abs(a) <= piv_tol_) continue;
                    const double lim = limit_of(i, a, 0.0);
                    if (lim < theta - 1e-12 || (leave >= 0 && lim <= theta + 1e-12 && basis_[i] < basis_[leave])) {
                        theta = lim;
                        leave = i;
                    }
                }
            } else {
                double relaxed = u_(q);
                for (int i = 0; i < m_; ++i) {
                    const double a = T_(i, q);
                    if (std::abs(a) > piv_tol_) relaxed = std::min(relaxed, limit_of(i, a, harris_tol_));
                }
                double best_piv = 0.0;
                for (int i = 0; i < m_; ++i) {
                    const double a = T_(i, q);
                    if (std::abs(a) <= piv_tol_) continue;
                    const double lim = limit_of(i, a, 0.0);
                    if (lim <= relaxed && std::abs(a) > best_piv) {
                        best_piv = std::abs(a);
                        leave = i;
                        theta = lim;
                    }
                }
                if (leave >= 0 && u_(q) < theta) {
                    theta = u_(q);
                    leave = -1;
                }
            }
            if (!std::isfinite(theta)) {
                // An unblocked ray on a drifted tableau is not trusted.
                if (since_refresh == 0) return Status::Unbounded;
                since_refresh = refresh_every_;
                continue;
            }
            degenerate_run = theta > 1e-12 ? 0 : degenerate_run + 1;

            xb_ -= (dir * theta) * T_.col(q);
            if (leave < 0) {
                at_upper_[q] = !at_upper_[q];
                continue;
            }
            const double entering_value = (at_upper_[q] ? u_(q) : 0.0) + dir * theta;
            const int out = basis_[leave];
            const double out_val = xb_(leave);
            const double ub_out = u_(out);
            at_upper_[out] = std::isfinite(ub_out) && std::abs(out_val - ub_out) < std::abs(out_val);
            pivot(leave, q, d);
            ++since_refresh;
            xb_(leave) = entering_value;
            at_upper_[q] = false;
            for (int i = 0; i < m_; ++i) {
                if (xb_(i) < 0.0 && xb_(i) > -feas_tol_) xb_(i) = 0.0;
            }
        }
    }

    /// Rebuild the tableau and basic values from the original matrix.
    bool reinvert()
    {
        if (m_ == 0) return true;
        Mat B(m_, m_);
        for (int i = 0; i < m_; ++i) B.col(i) = M_.col(basis_[i]);
        Eigen::PartialPivLU<Mat> lu(B);
        if (!(lu.matrixLU().diagonal().cwiseAbs().minCoeff() > 1e-13)) return false;
        Vec rhs = r_;
        for (int j = 0; j < ncol_; ++j)
            if (is_basic_[j] < 0 && at_upper_[j]) rhs -= u_(j) * M_.col(j);
        T_ = lu.solve(Mat(M_));
        xb_ = lu.solve(rhs);
        for (int i = 0; i < m_; ++i)
            if (xb_(i) < 0.0 && xb_(i) > -feas_tol_) xb_(i) = 0.0;
        return T_.allFinite() && xb_.allFinite();
    }

    void pivot(int r, int q, Eigen::RowVectorXd& d)
    {
        const double p = T_(r, q);
        T_.row(r) /= p;
        Vec colq = T_.col(q);
        colq(r) = 0.0;
        const Eigen::RowVectorXd rowr = T_.row(r);
        for (int i = 0; i < m_; ++i)
            if (colq(i) != 0.0) T_.row(i).noalias() -= colq(i) * rowr;
        d -= d(q) * rowr;
        d(q) = 0.0;
        is_basic_[basis_[r]] = -1;
        basis_[r] = q;
        is_basic_[q] = r;
    }

    void drive_out_artificials(int first_art)
    {
        Eigen::RowVectorXd dummy = Eigen::RowVectorXd::Zero(ncol_);
        for (int i = 0; i < m_; ++i) {
            if (basis_[i] < first_art) continue;
            int best = -1;
            double mag = 1e-7;
            for (int j = 0; j < first_art; ++j) {
                if (is_basic_[j] >= 0) continue;
                if (std::abs(T_(i, j)) > mag) { mag = std::abs(T_(i, j)); best = j; }
            }
            if (best < 0) continue;  // redundant row; artificial stays basic at zero
            const double v = at_upper_[best] ? u_(best) : 0.0;
            pivot(i, best, dummy);
            xb_(i) = v;
            at_upper_[best] = false;
        }
    }

    RowMat M_;
    RowMat T_;
    Vec r_, c_, u_, xb_;
    std::vector<int> basis_;
    std::vector<int> is_basic_;
    std::vector<bool> at_upper_;
    int n_art_ = 0;
    int m_ = 0;
    int ncol_ = 0;
    double piv_tol_ = 1e-9;
    double opt_tol_ = 1e-10;
    double feas_tol_ = 1e-9;
    double harris_tol_ = 1e-9;
    int refresh_every_ = 50;
};

}  // namespace detail

/// Solve an LP. Infeasibility is reported only when phase 1 ends with a
/// strictly positive minimum (a Farkas-type certificate); breakdowns map to
/// NumericalFailure.
inline SolveResult solve_lp(const LpProblem& p, const Tolerances& tol = {})
{
    p.validate();
    SolveResult res;
    const Eigen::Index n = p.num_vars();
    const Eigen::Index mi = p.A.rows();
    const Eigen::Index me = p.A_eq.rows();

    // Map each variable onto nonnegative bounded columns: x_j = off_j + sum coef*y.
    struct Map { double off; int col; double coef; int col2; };
    std::vector<Map> map(n);
    std::vector<double> ub;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double lo = p.lower.size() ? p.lower(j) : -kInf;
        const double hi = p.upper.size() ? p.upper(j) : kInf;
        if (lo > hi + tol.primal * std::max(1.0, std::abs(lo))) {
            res.status = Status::Infeasible;
            return res;
        }
        if (std::isfinite(lo)) {
            map[j] = {lo, static_cast<int>(ub.size()), 1.0, -1};
            ub.push_back(std::isfinite(hi) ? std::max(0.0, hi - lo) : kInf);
        } else if (std::isfinite(hi)) {
            map[j] = {hi, static_cast<int>(ub.size()), -1.0, -1};
            ub.push_back(kInf);
        } else {
            map[j] = {0.0, static_cast<int>(ub.size()), 1.0, static_cast<int>(ub.size()) + 1};
            ub.push_back(kInf);
            ub.push_back(kInf);
        }
    }
    const int ns = static_cast<int>(ub.size());

    // Assemble rows in structural coordinates.
    auto transform_row = [&](const auto& row, double rhs, Eigen::RowVectorXd& out, double& r) {
        out.setZero(ns);
        r = rhs;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double a = row(j);
            if (a == 0.0) continue;
            r -= a * map[j].off;
            out(map[j].col) += a * map[j].coef;
            if (map[j].col2 >= 0) out(map[j].col2) -= a;
        }
    };

    struct Row { Eigen::RowVectorXd a; double r; bool ineq; double scale; double sign; Eigen::Index orig; };
    std::vector<Row> rows;
    rows.reserve(mi + me);
    Eigen::RowVectorXd a;
    double r = 0.0;
    const double rtol = tol.primal;
    std::vector<double> row_scale_ineq(mi, 0.0), row_sign_ineq(mi, 1.0);
    std::vector<double> row_scale_eq(me, 0.0), row_sign_eq(me, 1.0);
    for (Eigen::Index i = 0; i < mi; ++i) {
        transform_row(p.A.row(i), p.b(i), a, r);
        const double s = a.size() ? a.cwiseAbs().maxCoeff() : 0.0;
        if (s <= 1e-300) {
            if (r < -rtol * std::max(1.0, std::abs(p.b(i)))) { res.status = Status::Infeasible; return res; }
            continue;
        }
        rows.push_back({a / s, r / s, true, s, 1.0, i});
    }
    for (Eigen::Index i = 0; i < me; ++i) {
        transform_row(p.A_eq.row(i), p.b_eq(i), a, r);
        const double s = a.size() ? a.cwiseAbs().maxCoeff() : 0.0;
        if (s <= 1e-300) {
            if (std::abs(r) > rtol * std::max(1.0, std::abs(p.b_eq(i)))) { res.status = Status::Infeasible; return res; }
            continue;
        }
        rows.push_back({a / s, r / s, false, s, 1.0, i});
    }
    const int m = static_cast<int>(rows.size());
    int n_slack = 0;
    for (const auto& row : rows) n_slack += row.ineq ? 1 : 0;
    int n_art = 0;
    for (auto& row : rows) {
        if (row.r < 0.0) {
            row.a = -row.a;
            row.r = -row.r;
            row.sign = -1.0;
        }
        if (!row.ineq || row.sign < 0) ++n_art;
    }
    const int ncol = ns + n_slack + n_art;
    detail::RowMat M = detail::RowMat::Zero(m, ncol);
    Vec rhs(m), c = Vec::Zero(ncol), u(ncol);
    for (int j = 0; j < ns; ++j) u(j) = ub[j];
    u.segment(ns, n_slack + n_art).setConstant(kInf);
    std::vector<int> basis(m);
    std::vector<int> slack_of(m, -1);
    int sc = ns, ac = ns + n_slack;
    for (int i = 0; i < m; ++i) {
        M.row(i).head(ns) = rows[i].a;
        rhs(i) = rows[i].r;
        if (rows[i].ineq) {
            slack_of[i] = sc;
            M(i, sc) = rows[i].sign;
            ++sc;
        }
        if (rows[i].ineq && rows[i].sign > 0) basis[i] = slack_of[i];
        else {
            M(i, ac) = 1.0;
            basis[i] = ac++;
        }
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        c(map[j].col) += p.cost(j) * map[j].coef;
        if (map[j].col2 >= 0) c(map[j].col2) -= p.cost(j);
    }

    // Breakdowns are retried with larger pivots and more frequent refactoring.
    static constexpr detail::SimplexSettings ladder[] = {{1e-9, 0}, {1e-7, 20}, {1e-6, 5}};
    std::optional<detail::BoundedSimplex> solved;
    Status st = Status::NumericalFailure;
    for (const auto& settings : ladder) {
        solved.emplace(M, rhs, c, u, basis, n_art, settings);
        st = solved->run(res.iterations);
        if (st != Status::NumericalFailure) break;
    }
    if (st != Status::Optimal) {
        res.status = st;
        return res;
    }
    const detail::BoundedSimplex& simplex = *solved;
    Vec y, pi, d;
    if (!simplex.refine(y, pi, d)) {
        res.status = Status::NumericalFailure;
        return res;
    }
    res.x.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double v = map[j].off + map[j].coef * y(map[j].col);
        if (map[j].col2 >= 0) v -= y(map[j].col2);
        res.x(j) = v;
    }
    // Clip onto the box; the refined solve can overshoot by rounding.
    for (Eigen::Index j = 0; j < n; ++j) {
        if (p.lower.size() && std::isfinite(p.lower(j))) res.x(j) = std::max(res.x(j), p.lower(j));
        if (p.upper.size() && std::isfinite(p.upper(j))) res.x(j) = std::min(res.x(j), p.upper(j));
    }
    res.objective = p.cost.dot(res.x);

    // Dual objective of the standard form plus the constant shift.
    double shift = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) shift += p.cost(j) * map[j].off;
    double dual = pi.dot(rhs);
    double dual_viol = 0.0;
    const Vec& uu = simplex.upper();
    for (int j = 0; j < ncol; ++j) {
        if (std::isfinite(uu(j))) dual += uu(j) * std::min(d(j), 0.0);
        else dual_viol = std::max(dual_viol, -d(j));
    }
    res.dual_objective = shift + dual;
    res.dual_residual = dual_viol / std::max(1.0, p.cost.cwiseAbs().maxCoeff());

    res.dual_ineq = Vec::Zero(mi);
    res.dual_eq = Vec::Zero(me);
    for (int i = 0; i < m; ++i) {
        const double mult = -pi(i) * rows[i].sign / rows[i].scale;
        if (rows[i].ineq) res.dual_ineq(rows[i].orig) = std::max(0.0, mult);
        else res.dual_eq(rows[i].orig) = mult;
    }
    res.primal_residual = detail::primal_residual(p, res.x);
    const double gap = std::abs(res.objective - res.dual_objective) /
                       std::max(1.0, std::abs(res.objective));
    if (res.primal_residual > tol.primal || res.dual_residual > tol.dual || gap > tol.acceptance) {
        res.status = Status::NumericalFailure;
        return res;
    }
    res.status = Status::Optimal;
    return res;
}

namespace detail {

// Goldfarb-Idnani dual active-set method for
//   min 0.5 x'Gx + g'x  s.t.  CE'x + ce = 0,  CI'x + ci >= 0   (G positive definite)
// Returns Optimal/Infeasible; fills u with multipliers for (equalities, inequalities).
class GoldfarbIdnani {
public:
    Status solve(const Mat& G, const Vec& g, const Mat& CE, const Vec& ce, const Mat& CI,
                 const Vec& ci, Vec& x, Vec& mult_eq, Vec& mult_in, int& iterations)
    {
        const Eigen::Index n = G.rows();
        const Eigen::Index p = CE.cols();
        const Eigen::Index m = CI.cols();
        Eigen::LLT<Mat> chol(G);
        if (chol.info() != Eigen::Success) return Status::NumericalFailure;
        Mat L = chol.matrixL();
        J_ = L.triangularView<Eigen::Lower>().transpose().solve(Mat::Identity(n, n));
        R_ = Mat::Zero(n, n);
        const double c1 = G.trace();
        const double c2 = J_.trace();
        double R_norm = 1.0;
        x = chol.solve(-g);
        Vec d(n), z(n), r(n + m + p), s(m), np(n), u = Vec::Zero(n + m + p + 1);
        std::vector<Eigen::Index> A(n + m + p + 1, 0), A_old(n + m + p + 1, 0);
        Vec u_old(n + m + p + 1), x_old(n);
        std::vector<Eigen::Index> iai(m);
        std::vector<bool> iaexcl(m);
        int iq = 0;
        const double eps = std::numeric_limits<double>::epsilon();

        for (Eigen::Index i = 0; i < p; ++i) {
            np = CE.col(i);
            d = J_.transpose() * np;
            update_z(z, d, iq);
            update_r(r, d, iq);
            double t2 = 0.0;
            if (std::abs(z.dot(z)) > eps) t2 = (-np.dot(x) - ce(i)) / z.dot(np);
            x += t2 * z;
            u(iq) = t2;
            u.head(iq) -= t2 * r.head(iq);
            A[iq] = -i - 1;
            if (!add_constraint(d, iq, R_norm)) return Status::Infeasible;
        }
        for (Eigen::Index i = 0; i < m; ++i) iai[i] = i;

        const int limit = 100 * static_cast<int>(n + m + p) + 1000;
        Eigen::Index ip = 0;
        double ss;
    l1:
        if (++iterations > limit) return Status::NumericalFailure;
        for (int i = static_cast<int>(p); i < iq; ++i) iai[A[i]] = -1;
        {
            double psi = 0.0;
            for (Eigen::Index i = 0; i < m; ++i) {
                iaexcl[i] = true;
                s(i) = CI.col(i).dot(x) + ci(i);
                psi += std::min(0.0, s(i));
            }
            if (std::abs(psi) <= static_cast<double>(m) * eps * c1 * c2 * 100.0) goto done;
        }
        for (int i = 0; i < iq; ++i) { u_old(i) = u(i); A_old[i] = A[i]; }
        x_old = x;
    l2:
        ss = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (s(i) < ss && iai[i] != -1 && iaexcl[i]) { ss = s(i); ip = i; }
        }
        if (ss >= 0.0) goto done;
        np = CI.col(ip);
        u(iq) = 0.0;
        A[iq] = ip;
    l2a:
        if (++iterations > limit) return Status::NumericalFailure;
        {
            d = J_.transpose() * np;
            update_z(z, d, iq);
            update_r(r, d, iq);
            Eigen::Index l = 0;
            double t1 = kInf;
            for (int k = static_cast<int>(p); k < iq; ++k) {
                if (r(k) > 0.0 && u(k) / r(k) < t1) { t1 = u(k) / r(k); l = A[k]; }
            }
            double t2 = kInf;
            if (std::abs(z.dot(z)) > eps) {
                t2 = -s(ip) / z.dot(np);
                if (t2 < 0) t2 = kInf;
            }
            const double t = std::min(t1, t2);
            if (!std::isfinite(t)) return Status::Infeasible;
            if (!std::isfinite(t2)) {
                u.head(iq) -= t * r.head(iq);
                u(iq) += t;
                iai[l] = l;
                delete_constraint(A, u, p, iq, l);
                goto l2a;
            }
            x += t * z;
            u.head(iq) -= t * r.head(iq);
            u(iq) += t;
            if (std::abs(t - t2) < eps) {
                if (!add_constraint(d, iq, R_norm)) {
                    iaexcl[ip] = false;
                    delete_constraint(A, u, p, iq, ip);
                    for (Eigen::Index i = 0; i < m; ++i) iai[i] = i;
                    for (int i = static_cast<int>(p); i < iq; ++i) {
                        A[i] = A_old[i];
                        u(i) = u_old(i);
                        iai[A[i]] = -1;
                    }
                    x = x_old;
                    goto l2;
                }
                iai[ip] = -1;
                goto l1;
            }
            iai[l] = l;
            delete_constraint(A, u, p, iq, l);
            s(ip) = CI.col(ip).dot(x) + ci(ip);
            goto l2a;
        }
    done:
        mult_eq = Vec::Zero(p);
        mult_in = Vec::Zero(m);
        for (int i = 0; i < iq; ++i) {
            if (A[i] < 0) mult_eq(-A[i] - 1) = u(i);
            else mult_in(A[i]) = u(i);
        }
        return Status::Optimal;
    }

private:
    void update_z(Vec& z, const Vec& d, int iq) const
    {
        const Eigen::Index n = J_.rows();
        z = J_.rightCols(n - iq) * d.tail(n - iq);
    }

    void update_r(Vec& r, const Vec& d, int iq) const
    {
        for (int i = iq - 1; i >= 0; --i) {
            double sum = 0.0;
            for (int j = i + 1; j < iq; ++j) sum += R_(i, j) * r(j);
            r(i) = (d(i) - sum) / R_(i, i);
        }
    }

    bool add_constraint(Vec& d, int& iq, double& R_norm)
    {
        const Eigen::Index n = d.size();
        for (Eigen::Index j = n - 1; j >= iq + 1; --j) {
            double cc = d(j - 1);
            double ss = d(j);
            const double h = std::hypot(cc, ss);
            if (h == 0.0) continue;
            d(j) = 0.0;
            ss /= h;
            cc /= h;
            if (cc < 0.0) { cc = -cc; ss = -ss; d(j - 1) = -h; }
            else d(j - 1) = h;
            const double xny = ss / (1.0 + cc);
            for (Eigen::Index k = 0; k < n; ++k) {
                const double t1 = J_(k, j - 1);
                const double t2 = J_(k, j);
                J_(k, j - 1) = t1 * cc + t2 * ss;
                J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
            }
        }
        ++iq;
        R_.col(iq - 1).head(iq) = d.head(iq);
        if (std::abs(d(iq - 1)) <= std::numeric_limits<double>::epsilon() * R_norm) return false;
        R_norm = std::max(R_norm, std::abs(d(iq - 1)));
        return true;
    }

    void delete_constraint(std::vector<Eigen::Index>& A, Vec& u, Eigen::Index p, int& iq, Eigen::Index l)
    {
        const Eigen::Index n = R_.rows();
        int qq = -1;
        for (int i = static_cast<int>(p); i < iq; ++i)
            if (A[i] == l) { qq = i; break; }
        if (qq < 0) return;
        for (int i = qq; i < iq - 1; ++i) {
            A[i] = A[i + 1];
            u(i) = u(i + 1);
            R_.col(i) = R_.col(i + 1);
        }
        A[iq - 1] = A[iq];
        u(iq - 1) = u(iq);
        A[iq] = 0;
        u(iq) = 0.0;
        for (int j = 0; j < iq; ++j) R_(j, iq - 1) = 0.0;
        --iq;
        if (iq == 0) return;
        for (int j = qq; j < iq; ++j) {
            double cc = R_(j, j);
            double ss = R_(j + 1, j);
            const double h = std::hypot(cc, ss);
            if (h == 0.0) continue;
            cc /= h;
            ss /= h;
            R_(j + 1, j) = 0.0;
            if (cc < 0.0) { R_(j, j) = -h; cc = -cc; ss = -ss; }
            else R_(j, j) = h;
            const double xny = ss / (1.0 + cc);
            for (int k = j + 1; k < iq; ++k) {
                const double t1 = R_(j, k);
                const double t2 = R_(j + 1, k);
                R_(j, k) = t1 * cc + t2 * ss;
                R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
            }
            for (Eigen::Index k = 0; k < n; ++k) {
                const double t1 = J_(k, j);
                const double t2 = J_(k, j + 1);
                J_(k, j) = t1 * cc + t2 * ss;
                J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
            }
        }
    }

    Mat J_;
    Mat R_;
};

}  // namespace detail

/// Solve a convex QP. Positive-definite Hessians go straight to the dual
/// active-set method; singular PSD ones use a proximal-point outer loop.
inline SolveResult solve_qp(const QpProblem& p, const Tolerances& tol = {})
{
    const Eigen::Index n = p.num_vars();
    zonotube::detail::require(p.H.rows() == n && p.H.cols() == n, "QpProblem: Hessian is " + zonotube::detail::shape(p.H));
    LpProblem shape_check{p.f, p.A, p.b, p.A_eq, p.b_eq, p.lower, p.upper};
    shape_check.validate();
    zonotube::detail::require(p.H.allFinite(), "QpProblem: non-finite Hessian");
    zonotube::detail::require((p.H - p.H.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, p.H.cwiseAbs().maxCoeff()),
                    "QpProblem: Hessian not symmetric");

    SolveResult res;
    // Gather inequalities as rows of A x <= b including finite bounds.
    std::vector<Eigen::Index> bound_idx;
    std::vector<double> bound_sign;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (p.lower.size() && std::isfinite(p.lower(j))) { bound_idx.push_back(j); bound_sign.push_back(-1.0); }
        if (p.upper.size() && std::isfinite(p.upper(j))) { bound_idx.push_back(j); bound_sign.push_back(1.0); }
    }
    const Eigen::Index mi = p.A.rows();
    const Eigen::Index mb = static_cast<Eigen::Index>(bound_idx.size());
    Mat CI(n, mi + mb);
    Vec ci(mi + mb);
    CI.leftCols(mi) = -p.A.transpose();
    ci.head(mi) = p.b;
    for (Eigen::Index k = 0; k < mb; ++k) {
        CI.col(mi + k).setZero();
        CI(bound_idx[k], mi + k) = -bound_sign[k];
        ci(mi + k) = bound_sign[k] > 0 ? p.upper(bound_idx[k]) : -p.lower(bound_idx[k]);
    }
    const Mat CE = p.A_eq.rows() ? Mat(p.A_eq.transpose()) : Mat(n, 0);
    const Vec ce = -p.b_eq;

    Eigen::SelfAdjointEigenSolver<Mat> eig(p.H, Eigen::EigenvaluesOnly);
    const double hscale = std::max(1.0, p.H.cwiseAbs().maxCoeff());
    const double min_eig = n ? eig.eigenvalues().minCoeff() : 1.0;
    if (min_eig < -1e-8 * hscale) {
        res.status = Status::NumericalFailure;
        return res;
    }

    Vec x, me_, mi_;
    detail::GoldfarbIdnani gi;
    if (min_eig > 1e-9 * hscale) {
        const Status st = gi.solve(p.H, p.f, CE, ce, CI, ci, x, me_, mi_, res.iterations);
        if (st != Status::Optimal) { res.status = st; return res; }
    } else {
        const double eps = 1e-3 * hscale;
        const Mat Hp = p.H + eps * Mat::Identity(n, n);
        Vec center = Vec::Zero(n);
        bool converged = false;
        for (int outer = 0; outer < 2000; ++outer) {
            const Vec g = p.f - eps * center;
            const Status st = gi.solve(Hp, g, CE, ce, CI, ci, x, me_, mi_, res.iterations);
            if (st != Status::Optimal) { res.status = st; return res; }
            const double step = (x - center).cwiseAbs().maxCoeff();
            center = x;
            if (step <= 1e-12 * std::max(1.0, x.cwiseAbs().maxCoeff())) { converged = true; break; }
        }
        if (!converged) { res.status = Status::NumericalFailure; return res; }
    }

    res.x = x;
    res.objective = 0.5 * x.dot(p.H * x) + p.f.dot(x);
    res.dual_ineq = mi_.head(mi);
    res.dual_eq = -me_;
    Vec grad = p.H * x + p.f + p.A.transpose() * res.dual_ineq;
    if (p.A_eq.rows()) grad += p.A_eq.transpose() * res.dual_eq;
    for (Eigen::Index k = 0; k < mb; ++k) grad(bound_idx[k]) += bound_sign[k] * mi_(mi + k);
    res.dual_residual = grad.cwiseAbs().maxCoeff() / std::max(1.0, p.f.cwiseAbs().maxCoeff() + hscale);
    res.primal_residual = detail::primal_residual(p, x);
    res.dual_objective = res.objective;
    if (res.primal_residual > tol.primal || res.dual_residual > tol.dual * 1e2) {
        res.status = Status::NumericalFailure;
        return res;
    }
    res.status = Status::Optimal;
    return res;
}

}  // namespace zonotube::optim
