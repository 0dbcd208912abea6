#pragma once

// Data matrices from an excitation experiment and the model / disturbance
// sets consistent with them (optionally fused with a prior model set).

#include "linalg.hpp"
#include "setops.hpp"

#include <optional>
#include <random>
#include <string>

namespace zonotube::sysid {

/// The noise model and the prior cannot both hold for the observed data.
class prior_data_conflict : public empty_set_error {
public:
    using empty_set_error::empty_set_error;
};

class rank_deficient_batch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataBatch {
    Mat X0;         ///< n x T, x(0) ... x(T-1)
    Mat X1;         ///< n x T, x(1) ... x(T)
    Mat U0;         ///< m x T
    Mat D0;         ///< [X0; U0]
    Mat D0_pinv;    ///< T x (n+m)
    Mat D0_kernel;  ///< T x (T - rank)
    Eigen::Index rank = 0;

    Eigen::Index n() const { return X0.rows(); }
    Eigen::Index m() const { return U0.rows(); }
    Eigen::Index T() const { return X0.cols(); }
    bool full_row_rank() const { return rank == n() + m(); }

    static DataBatch from_matrices(Mat X0, Mat X1, Mat U0)
    {
        detail::require(X0.rows() == X1.rows() && X0.cols() == X1.cols() && U0.cols() == X0.cols(),
                        "DataBatch: X0 " + detail::shape(X0) + ", X1 " + detail::shape(X1) + ", U0 " +
                            detail::shape(U0));
        DataBatch b;
        b.X0 = std::move(X0);
        b.X1 = std::move(X1);
        b.U0 = std::move(U0);
        b.D0.resize(b.n() + b.m(), b.T());
        b.D0 << b.X0, b.U0;
        auto pk = linalg::pinv_kernel(b.D0);
        b.D0_pinv = std::move(pk.pinv);
        b.D0_kernel = std::move(pk.kernel);
        b.rank = pk.rank;
        return b;
    }

    /// States x(0..T) as columns and inputs u(0..T-1).
    static DataBatch from_trajectory(const Mat& X, const Mat& U)
    {
        detail::require(X.cols() == U.cols() + 1, "DataBatch: need T+1 states for T inputs");
        const Eigen::Index T = U.cols();
        return from_matrices(X.leftCols(T), X.rightCols(T), U);
    }
};

struct ExcitationConfig {
    double fraction = 0.5;               ///< inputs uniform on fraction * U
    std::optional<Vec> start_state;      ///< default: origin
    int max_retries = 20;
};

/// Uniform sample from scale * U by rejection inside its bounding box.
template <class Rng>
Vec sample_input(const Polytope& U, const IntervalBox& box, double scale, Rng& rng)
{
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    const Polytope Us = U.scaled(scale);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        Vec u(box.lower.size());
        for (Eigen::Index i = 0; i < u.size(); ++i)
            u(i) = scale * (box.lower(i) + (box.upper(i) - box.lower(i)) * ud(rng));
        if (membership(Us, u)) return u;
    }
    throw std::runtime_error("sample_input: rejection sampling failed");
}

/// Excite x+ = A x + B u + w with random inputs for T steps. The batch is
/// redrawn until [X0; U0] has full row rank. The realized disturbance
/// sequence (ground truth, simulation only) is written to `noise` if given.
template <class Rng>
DataBatch collect_batch(const Mat& A, const Mat& B, const Zonotope& Zw, const Polytope& U, Eigen::Index T,
                        const ExcitationConfig& cfg, Rng& rng, Mat* noise = nullptr)
{
    const Eigen::Index n = A.rows();
    const Eigen::Index m = B.cols();
    if (T < n + m + 1) {
        throw std::invalid_argument("collect_batch: T = " + std::to_string(T) + " leaves no data-consistency rows (need T >= " +
                                    std::to_string(n + m + 1) + ")");
    }
    const IntervalBox ubox = interval_enclosure(U);
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        Mat X(n, T + 1), Uin(m, T), W(n, T);
        X.col(0) = cfg.start_state.value_or(Vec::Zero(n));
        for (Eigen::Index k = 0; k < T; ++k) {
            Uin.col(k) = sample_input(U, ubox, cfg.fraction, rng);
            W.col(k) = sample(Zw, rng);
            X.col(k + 1) = A * X.col(k) + B * Uin.col(k) + W.col(k);
        }
        DataBatch b = DataBatch::from_trajectory(X, Uin);
        if (b.full_row_rank()) {
            if (noise) *noise = std::move(W);
            return b;
        }
    }
    throw rank_deficient_batch("collect_batch: [X0; U0] stayed rank deficient after retries");
}

// ---------------------------------------------------------------- model sets

/// M_ol = < -G_w o D0^+, (X1 - C_w) D0^+ >
inline MatrixZonotope open_loop_set(const DataBatch& batch, const MatrixZonotope& mw_T)
{
    detail::require(mw_T.rows() == batch.n() && mw_T.cols() == batch.T(), "open_loop_set: disturbance set shape");
    const MatrixZonotope g = block_right_multiply(mw_T, batch.D0_pinv);
    return MatrixZonotope((batch.X1 - mw_T.center()) * batch.D0_pinv, -g.generators());
}

/// Disturbance sequences that some linear model could have produced:
/// (X1 - W) D0_kernel = 0 added to mw_T.
inline ConstrainedMatrixZonotope refine_disturbance_data(const DataBatch& batch, const MatrixZonotope& mw_T)
{
    detail::require(mw_T.rows() == batch.n() && mw_T.cols() == batch.T(), "refine_disturbance_data: shape");
    if (batch.D0_kernel.cols() == 0) return ConstrainedMatrixZonotope(mw_T);
    const MatrixZonotope a = block_right_multiply(mw_T, batch.D0_kernel);
    EqualityBlock blk{a.generators(), (batch.X1 - mw_T.center()) * batch.D0_kernel};
    try {
        return ConstrainedMatrixZonotope(mw_T.center(), mw_T.generators(), {std::move(blk)});
    } catch (const empty_set_error& e) {
        throw empty_set_error(std::string("noise model cannot explain the data: ") + e.what());
    }
}

/// M_d = < -G_theta o D0, X1 - C_theta D0, A_theta, B_theta >
inline ConstrainedMatrixZonotope prior_disturbance_set(const DataBatch& batch, const ConstrainedMatrixZonotope& prior)
{
    detail::require(prior.rows() == batch.n() && prior.cols() == batch.n() + batch.m(),
                    "prior_disturbance_set: prior has shape " + std::to_string(prior.rows()) + "x" +
                        std::to_string(prior.cols()));
    const MatrixZonotope g = block_right_multiply(prior.unconstrained(), batch.D0);
    return ConstrainedMatrixZonotope(batch.X1 - prior.center() * batch.D0, -g.generators(), prior.constraints(), trusted);
}

inline ConstrainedMatrixZonotope intersect_disturbance(const ConstrainedMatrixZonotope& mw,
                                                       const ConstrainedMatrixZonotope& md)
{
    try {
        return intersect(mw, md);
    } catch (const empty_set_error& e) {
        throw prior_data_conflict(std::string("prior contradicts data: ") + e.what());
    }
}

/// Coefficient vector the nominal model is realized at: the center of the
/// coefficient slice. The plain CMZ center (beta = 0) need not satisfy the
/// data-consistency rows, so it is not used.
inline Vec reference_coefficients(const ConstrainedMatrixZonotope& mz)
{
    const auto [A, b] = mz.vectorized_constraints();
    return coefficient_center(A, b);
}

struct RefinedModel {
    ConstrainedMatrixZonotope mol_c;
    Vec reference;  ///< coefficients of the nominal model
    Mat nominal_A;
    Mat nominal_B;
};

/// M_ol^c = < -G_dw o D0^+, (X1 - C_dw) D0^+, A_dw, B_dw > and the nominal
/// (A, B) realized at the reference coefficients.
inline RefinedModel refined_open_loop_set(const DataBatch& batch, const ConstrainedMatrixZonotope& mdw)
{
    const MatrixZonotope g = block_right_multiply(mdw.unconstrained(), batch.D0_pinv);
    ConstrainedMatrixZonotope mol((batch.X1 - mdw.center()) * batch.D0_pinv, -g.generators(), mdw.constraints(), trusted);
    Vec ref = reference_coefficients(mdw);
    const Mat theta = mol.realize(ref);
    Mat A = theta.leftCols(batch.n());
    Mat B = theta.rightCols(batch.m());
    return {std::move(mol), std::move(ref), std::move(A), std::move(B)};
}

/// M_cl^c = < -G_dw o V_K, (X1 - C_dw) V_K, A_dw, B_dw >, requiring X0 V_K = I.
inline ConstrainedMatrixZonotope closed_loop_set(const DataBatch& batch, const ConstrainedMatrixZonotope& mdw,
                                                 const Mat& V_K, double tol = 1e-6)
{
    detail::require(V_K.rows() == batch.T() && V_K.cols() == batch.n(), "closed_loop_set: V_K is " + detail::shape(V_K));
    const double err = (batch.X0 * V_K - Mat::Identity(batch.n(), batch.n())).cwiseAbs().maxCoeff();
    if (err > tol) throw std::invalid_argument("closed_loop_set: X0 V_K deviates from I by " + std::to_string(err));
    const MatrixZonotope g = block_right_multiply(mdw.unconstrained(), V_K);
    return ConstrainedMatrixZonotope((batch.X1 - mdw.center()) * V_K, -g.generators(), mdw.constraints(), trusted);
}

/// Prior model set from an offline batch recorded under its own disturbance
/// zonotope: the data-refined open-loop set of that batch.
inline ConstrainedMatrixZonotope build_prior_from_offline(const DataBatch& offline, const Zonotope& offline_noise)
{
    const MatrixZonotope mw_T = concat_disturbance(offline_noise, offline.T());
    return refined_open_loop_set(offline, refine_disturbance_data(offline, mw_T)).mol_c;
}

/// Singleton prior {theta}: no generators, no constraints.
inline ConstrainedMatrixZonotope singleton_prior(const Mat& theta)
{
    return ConstrainedMatrixZonotope(MatrixZonotope(theta, Mat(theta.rows(), 0)));
}

enum class Refinement { none, data_only, data_prior };

struct ModelSets {
    MatrixZonotope mw_T;
    ConstrainedMatrixZonotope mw;
    std::optional<ConstrainedMatrixZonotope> md;
    ConstrainedMatrixZonotope mdw;
    ConstrainedMatrixZonotope mol_c;
    Vec reference;
    Mat nominal_A;
    Mat nominal_B;
};

/// All model sets for one batch. `none` keeps the raw disturbance set,
/// `data_only` adds the data-consistency rows, `data_prior` also intersects
/// with the prior-consistent disturbance set.
inline ModelSets build_model_sets(const DataBatch& batch, const Zonotope& Zw, Refinement mode,
                                  const ConstrainedMatrixZonotope* prior = nullptr)
{
    ModelSets out;
    out.mw_T = concat_disturbance(Zw, batch.T());
    out.mw = mode == Refinement::none ? ConstrainedMatrixZonotope(out.mw_T) : refine_disturbance_data(batch, out.mw_T);
    if (mode == Refinement::data_prior) {
        detail::require(prior != nullptr, "build_model_sets: data_prior mode needs a prior");
        out.md = prior_disturbance_set(batch, *prior);
        out.mdw = intersect_disturbance(out.mw, *out.md);
    } else {
        out.mdw = out.mw;
    }
    auto refined = refined_open_loop_set(batch, out.mdw);
    out.mol_c = std::move(refined.mol_c);
    out.reference = std::move(refined.reference);
    out.nominal_A = std::move(refined.nominal_A);
    out.nominal_B = std::move(refined.nominal_B);
    return out;
}

}  // namespace zonotube::sysid
