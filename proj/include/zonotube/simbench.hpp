#pragma once

// Closed-loop simulation of the ROSbot benchmark: the elastic tube controller
// (tube-gain LP alternating with the tube MPC), the fixed-tube baseline,
// Monte-Carlo feasibility sweeps and log monitors.

#include "plant.hpp"
#include "serialize.hpp"
#include "sysid.hpp"
#include "tmpc.hpp"
#include "tubegain.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace zonotube::bench {

using io::json;

enum class PriorMode { data_only, data_prior, exact, none };
enum class ControllerKind { elastic, tzpc };

inline const char* to_string(PriorMode p)
{
    switch (p) {
        case PriorMode::data_only: return "data_only";
        case PriorMode::data_prior: return "data_prior";
        case PriorMode::exact: return "exact";
        case PriorMode::none: return "none";
    }
    return "?";
}

inline const char* to_string(ControllerKind c) { return c == ControllerKind::elastic ? "elastic" : "tzpc"; }

inline PriorMode prior_from_string(const std::string& s)
{
    for (PriorMode p : {PriorMode::data_only, PriorMode::data_prior, PriorMode::exact, PriorMode::none})
        if (s == to_string(p)) return p;
    throw std::invalid_argument("unknown prior mode '" + s + "'");
}

inline ControllerKind controller_from_string(const std::string& s)
{
    if (s == "elastic") return ControllerKind::elastic;
    if (s == "tzpc") return ControllerKind::tzpc;
    throw std::invalid_argument("unknown controller '" + s + "'");
}

inline optim::Status status_from_string(const std::string& s)
{
    using optim::Status;
    for (Status st : {Status::Optimal, Status::Infeasible, Status::Unbounded, Status::NumericalFailure})
        if (s == optim::to_string(st)) return st;
    throw std::invalid_argument("unknown solver status '" + s + "'");
}

inline Vec rosbot_start()
{
    Vec x(3);
    x << 4.0, 4.0, std::numbers::pi / 2;
    return x;
}

inline Vec rosbot_target()
{
    Vec x(3);
    x << -3.5, -3.5, -std::numbers::pi / 4;
    return x;
}

struct ScenarioConfig {
    Eigen::Index T = 20;
    double alpha = 0.7;
    PriorMode prior = PriorMode::data_prior;
    ControllerKind controller = ControllerKind::elastic;
    Vec x0 = rosbot_start();
    Vec target = rosbot_target();
    std::uint64_t seed = 1;
    double sigma = 1.0;
    double ts = 0.1;
    int steps = 60;
    int horizon = 10;
    double q_weight = 20.0;
    double r_weight = 0.1;
    double excitation = 0.5;        ///< data inputs uniform on excitation * U
    int prior_points = 17;          ///< offline batch length for the prior
    double prior_excitation = 0.1;  ///< small random inputs around zero
    double recompute_ratio = 0.5;   ///< rebuild terminal set once the tube shrank by this factor
    double target_margin = 0.98;    ///< intermediate targets stay in target_margin * tightened sets
    double target_radius = 0.1;
    double tube_floor = 1e-6;       ///< relative to the admissible state set

    void validate() const
    {
        if (!(alpha >= 0.0)) throw std::invalid_argument("ScenarioConfig: alpha must be nonnegative");
        if (T < 3 + 4 + 1) throw std::invalid_argument("ScenarioConfig: T must be at least n + m + 1 = 8");
        if (x0.size() != 3 || target.size() != 3) throw std::invalid_argument("ScenarioConfig: x0 / target need 3 entries");
        if (!membership(sim::rosbot_state_set(), x0, 1e-12)) throw std::invalid_argument("ScenarioConfig: x0 is outside X");
        if (!(ts > 0.0) || !(sigma >= 0.0)) throw std::invalid_argument("ScenarioConfig: ts > 0 and sigma >= 0 required");
        if (steps < 0 || horizon < 1) throw std::invalid_argument("ScenarioConfig: steps >= 0 and horizon >= 1 required");
        if (!(recompute_ratio > 0.0 && recompute_ratio <= 1.0) || !(target_margin > 0.0 && target_margin < 1.0))
            throw std::invalid_argument("ScenarioConfig: ratios must lie in (0, 1]");
        if (prior_points < 3 + 4 + 1) throw std::invalid_argument("ScenarioConfig: prior batch too short");
    }
};

inline json to_json(const ScenarioConfig& c)
{
    return {{"T", c.T},
            {"alpha", c.alpha},
            {"prior", to_string(c.prior)},
            {"controller", to_string(c.controller)},
            {"x0", io::to_json(c.x0)},
            {"target", io::to_json(c.target)},
            {"seed", c.seed},
            {"sigma", c.sigma},
            {"ts", c.ts},
            {"steps", c.steps},
            {"horizon", c.horizon},
            {"q_weight", c.q_weight},
            {"r_weight", c.r_weight},
            {"excitation", c.excitation},
            {"prior_points", c.prior_points},
            {"prior_excitation", c.prior_excitation},
            {"terminal", {{"recompute_ratio", c.recompute_ratio}, {"target_margin", c.target_margin}}},
            {"target_radius", c.target_radius},
            {"tube_floor", c.tube_floor}};
}

/// Missing keys keep their defaults.
inline ScenarioConfig scenario_from_json(const json& j)
{
    ScenarioConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("T", c.T);
    get("alpha", c.alpha);
    if (j.contains("prior")) c.prior = prior_from_string(j.at("prior").get<std::string>());
    if (j.contains("controller")) c.controller = controller_from_string(j.at("controller").get<std::string>());
    if (j.contains("x0")) c.x0 = io::vec_from_json(j.at("x0"));
    if (j.contains("target")) c.target = io::vec_from_json(j.at("target"));
    get("seed", c.seed);
    get("sigma", c.sigma);
    get("ts", c.ts);
    get("steps", c.steps);
    get("horizon", c.horizon);
    get("q_weight", c.q_weight);
    get("r_weight", c.r_weight);
    get("excitation", c.excitation);
    get("prior_points", c.prior_points);
    get("prior_excitation", c.prior_excitation);
    if (j.contains("terminal")) {
        const json& t = j.at("terminal");
        if (t.contains("recompute_ratio")) t.at("recompute_ratio").get_to(c.recompute_ratio);
        if (t.contains("target_margin")) t.at("target_margin").get_to(c.target_margin);
    }
    get("target_radius", c.target_radius);
    get("tube_floor", c.tube_floor);
    c.validate();
    return c;
}

// ---------------------------------------------------------------- run log

struct StepRecord {
    int t = 0;
    Vec x;
    Vec u;
    Vec xbar;
    Vec ubar;
    Vec h;                ///< tube offsets used at this step
    double lambda = 1.0;  ///< contraction applied after this step
    double rho = 0.0;
    double V = 0.0;       ///< max_j H^j e / h^j(t)
    double V_ref = 0.0;   ///< same, against the first tube
    double cost = 0.0;
    optim::Status lp_status = optim::Status::Optimal;
    optim::Status qp_status = optim::Status::Optimal;
    bool frozen = false;       ///< LP infeasible: previous gain kept, lambda = 1
    bool plan_reused = false;  ///< QP failed: shifted previous plan applied
    bool violation = false;
    std::uint64_t gain_hash = 0;
    Vec y, l, z;
};

struct RunSummary {
    bool feasible_at_t0 = false;
    int steps = 0;
    int violations = 0;
    bool broken = false;
    bool reached_target = false;
    int reach_step = -1;
    double final_distance = 0.0;
    double closest_distance = kInf;
    optim::Status bootstrap_status = optim::Status::NumericalFailure;
    double bootstrap_lambda = 1.0;
    std::string failure;
};

struct RunLog {
    ScenarioConfig config;
    std::vector<StepRecord> steps;
    Vec final_state;
    RunSummary summary;

    bool all_optimal() const
    {
        if (!summary.feasible_at_t0 || summary.broken) return false;
        for (const auto& s : steps)
            if (s.lp_status != optim::Status::Optimal || s.qp_status != optim::Status::Optimal) return false;
        return true;
    }
};

inline std::uint64_t hash_matrix(const Mat& M)
{
    std::uint64_t h = 1469598103934665603ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(M.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(M.size()) * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline json to_json(const StepRecord& s)
{
    return {{"t", s.t},
            {"x", io::to_json(s.x)},
            {"u", io::to_json(s.u)},
            {"xbar", io::to_json(s.xbar)},
            {"ubar", io::to_json(s.ubar)},
            {"h", io::to_json(s.h)},
            {"lambda", s.lambda},
            {"rho", s.rho},
            {"V", s.V},
            {"V_ref", s.V_ref},
            {"cost", s.cost},
            {"lp_status", optim::to_string(s.lp_status)},
            {"qp_status", optim::to_string(s.qp_status)},
            {"frozen", s.frozen},
            {"plan_reused", s.plan_reused},
            {"violation", s.violation},
            {"gain_hash", s.gain_hash},
            {"y", io::to_json(s.y)},
            {"l", io::to_json(s.l)},
            {"z", io::to_json(s.z)}};
}

inline StepRecord step_from_json(const json& j)
{
    StepRecord s;
    j.at("t").get_to(s.t);
    s.x = io::vec_from_json(j.at("x"));
    s.u = io::vec_from_json(j.at("u"));
    s.xbar = io::vec_from_json(j.at("xbar"));
    s.ubar = io::vec_from_json(j.at("ubar"));
    s.h = io::vec_from_json(j.at("h"));
    j.at("lambda").get_to(s.lambda);
    j.at("rho").get_to(s.rho);
    j.at("V").get_to(s.V);
    j.at("V_ref").get_to(s.V_ref);
    j.at("cost").get_to(s.cost);
    s.lp_status = status_from_string(j.at("lp_status").get<std::string>());
    s.qp_status = status_from_string(j.at("qp_status").get<std::string>());
    j.at("frozen").get_to(s.frozen);
    j.at("plan_reused").get_to(s.plan_reused);
    j.at("violation").get_to(s.violation);
    j.at("gain_hash").get_to(s.gain_hash);
    s.y = io::vec_from_json(j.at("y"));
    s.l = io::vec_from_json(j.at("l"));
    s.z = io::vec_from_json(j.at("z"));
    return s;
}

inline json to_json(const RunLog& log)
{
    json steps = json::array();
    for (const auto& s : log.steps) steps.push_back(to_json(s));
    const RunSummary& r = log.summary;
    return {{"config", to_json(log.config)},
            {"steps", std::move(steps)},
            {"final_state", io::to_json(log.final_state)},
            {"summary",
             {{"feasible_at_t0", r.feasible_at_t0},
              {"steps", r.steps},
              {"violations", r.violations},
              {"broken", r.broken},
              {"reached_target", r.reached_target},
              {"reach_step", r.reach_step},
              {"final_distance", r.final_distance},
              {"closest_distance", r.closest_distance},
              {"bootstrap_status", optim::to_string(r.bootstrap_status)},
              {"bootstrap_lambda", r.bootstrap_lambda},
              {"failure", r.failure}}}};
}

inline RunLog run_log_from_json(const json& j)
{
    RunLog log;
    log.config = scenario_from_json(j.at("config"));
    for (const auto& s : j.at("steps")) log.steps.push_back(step_from_json(s));
    log.final_state = io::vec_from_json(j.at("final_state"));
    const json& r = j.at("summary");
    r.at("feasible_at_t0").get_to(log.summary.feasible_at_t0);
    r.at("steps").get_to(log.summary.steps);
    r.at("violations").get_to(log.summary.violations);
    r.at("broken").get_to(log.summary.broken);
    r.at("reached_target").get_to(log.summary.reached_target);
    r.at("reach_step").get_to(log.summary.reach_step);
    r.at("final_distance").get_to(log.summary.final_distance);
    r.at("closest_distance").get_to(log.summary.closest_distance);
    log.summary.bootstrap_status = status_from_string(r.at("bootstrap_status").get<std::string>());
    r.at("bootstrap_lambda").get_to(log.summary.bootstrap_lambda);
    r.at("failure").get_to(log.summary.failure);
    return log;
}

// ---------------------------------------------------------------- scenario setup

/// Independent random stream per purpose, derived from the scenario seed.
enum class Stream : std::uint32_t { data = 1, plant = 2, prior = 3 };

inline std::mt19937_64 make_stream(std::uint64_t seed, Stream s)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(s)};
    return std::mt19937_64(seq);
}

struct Scenario {
    Mat A;  ///< true plant
    Mat B;
    Zonotope Zw;
    Polytope X;
    Polytope U;
    sysid::DataBatch batch;
    sysid::ModelSets sets;
};

inline sysid::DataBatch collect_offline_batch(const ScenarioConfig& cfg, const Mat& A, const Mat& B)
{
    auto rng = make_stream(cfg.seed, Stream::prior);
    sysid::ExcitationConfig ex;
    ex.fraction = cfg.prior_excitation;
    return sysid::collect_batch(A, B, sim::rosbot_offline_disturbance(), sim::rosbot_input_set(), cfg.prior_points, ex,
                                rng);
}

/// Batch and model sets for one scenario. May throw (e.g. a prior that
/// contradicts the data); the simulators turn that into a failed run.
inline Scenario build_scenario(const ScenarioConfig& cfg, PriorMode prior)
{
    Scenario s;
    std::tie(s.A, s.B) = sim::rosbot_model(cfg.ts);
    s.Zw = sim::rosbot_disturbance(cfg.alpha);
    s.X = sim::rosbot_state_set();
    s.U = sim::rosbot_input_set();
    auto rng = make_stream(cfg.seed, Stream::data);
    sysid::ExcitationConfig ex;
    ex.fraction = cfg.excitation;
    s.batch = sysid::collect_batch(s.A, s.B, s.Zw, s.U, cfg.T, ex, rng);
    switch (prior) {
        case PriorMode::none: s.sets = sysid::build_model_sets(s.batch, s.Zw, sysid::Refinement::none); break;
        case PriorMode::data_only: s.sets = sysid::build_model_sets(s.batch, s.Zw, sysid::Refinement::data_only); break;
        case PriorMode::data_prior: {
            const auto offline = collect_offline_batch(cfg, s.A, s.B);
            const auto p = sysid::build_prior_from_offline(offline, sim::rosbot_offline_disturbance());
            s.sets = sysid::build_model_sets(s.batch, s.Zw, sysid::Refinement::data_prior, &p);
            break;
        }
        case PriorMode::exact: {
            Mat theta(s.A.rows(), s.A.cols() + s.B.cols());
            theta << s.A, s.B;
            const auto p = sysid::singleton_prior(theta);
            s.sets = sysid::build_model_sets(s.batch, s.Zw, sysid::Refinement::data_prior, &p);
            break;
        }
    }
    return s;
}

inline tmpc::MpcConfig mpc_config(const ScenarioConfig& cfg, const sysid::ModelSets& sets)
{
    return tmpc::rosbot_config(sets.nominal_A, sets.nominal_B, cfg.horizon, cfg.q_weight, cfg.r_weight);
}

// ---------------------------------------------------------------- target handling

/// max t s.t. H x + t |H_j| <= h has t > tol.
inline bool has_interior(const Polytope& P, double tol = 1e-9)
{
    const Eigen::Index n = P.dim();
    optim::LpProblem lp;
    lp.cost = Vec::Zero(n + 1);
    lp.cost(n) = -1.0;
    lp.A.resize(P.num_facets(), n + 1);
    lp.A << P.H(), P.H().rowwise().norm();
    lp.b = P.h();
    lp.lower = Vec::Constant(n + 1, -kInf);
    lp.upper = Vec::Constant(n + 1, kInf);
    lp.upper(n) = 1.0;
    const auto r = optim::solve_lp(lp);
    return r.optimal() && -r.objective > tol;
}

/// Steady state the MPC regulates to, with terminal ingredients built around it.
struct Regulator {
    Vec xs;
    Vec us;
    tmpc::TerminalIngredients term;
    double built_at = 0.0;  ///< largest tube offset when built

    Polytope shift_state(const Polytope& P) const { return P.translated(-xs); }
    Polytope shift_input(const Polytope& P) const { return P.translated(-us); }
};

/// The admissible steady state of the nominal model closest to the target,
/// inside margin * (Xt, Ut). Equals the target once the target is admissible.
inline std::optional<Regulator> make_regulator(const tmpc::MpcConfig& mpc, const Polytope& Xt, const Polytope& Ut,
                                               const Vec& target, double margin)
{
    const Eigen::Index n = mpc.n();
    // u_s = S x_s holds the nominal model at x_s.
    const Mat S = mpc.nominal_B.completeOrthogonalDecomposition().solve(Mat(Mat::Identity(n, n) - mpc.nominal_A));
    const Polytope Xm = Xt.scaled(margin), Um = Ut.scaled(margin);
    Vec xs = target;
    if (!membership(Xm, xs, 0.0) || !membership(Um, Vec(S * xs), 0.0)) {
        optim::QpProblem qp;
        qp.H = 2.0 * Mat::Identity(n, n);
        qp.f = -2.0 * target;
        qp.A.resize(Xm.num_facets() + Um.num_facets(), n);
        qp.A << Xm.H(), Um.H() * S;
        qp.b.resize(qp.A.rows());
        qp.b << Xm.h(), Um.h();
        qp.A_eq = Mat(0, n);
        qp.b_eq = Vec(0);
        qp.lower = Vec::Constant(n, -kInf);
        qp.upper = Vec::Constant(n, kInf);
        const auto r = optim::solve_qp(qp);
        if (!r.optimal()) return std::nullopt;
        xs = r.x;
    }
    Regulator reg;
    reg.xs = xs;
    reg.us = tmpc::steady_state_input(mpc.nominal_A, mpc.nominal_B, xs, Vec::Zero(n)).u;
    try {
        reg.term = tmpc::terminal_ingredients(mpc, reg.shift_state(Xt), reg.shift_input(Ut));
    } catch (const tmpc::configuration_error&) {
        return std::nullopt;
    }
    return reg;
}

/// Nominal plan in absolute coordinates together with the regulator it was computed for.
struct Plan {
    Mat x;  ///< n x (N+1)
    Mat u;  ///< m x N
    double cost = 0.0;
    optim::Status status = optim::Status::NumericalFailure;
};

inline Plan solve_plan(const tmpc::MpcConfig& mpc, const Regulator& reg, const Polytope& Xt, const Polytope& Ut,
                       const Vec& x_init, const Polytope* spread = nullptr)
{
    const auto sol = tmpc::solve_tmpc(mpc, reg.shift_state(Xt), reg.shift_input(Ut), reg.term, Vec(x_init - reg.xs), spread);
    Plan p;
    p.status = sol.status;
    if (!sol.optimal()) return p;
    p.x = sol.x.colwise() + reg.xs;
    p.u = sol.u.colwise() + reg.us;
    p.cost = sol.objective;
    return p;
}

/// Previous plan advanced by one step, closed with the terminal law.
inline Plan shifted_plan(const Plan& prev, const Regulator& reg, const tmpc::MpcConfig& mpc)
{
    const Eigen::Index N = prev.u.cols();
    Plan p = prev;
    p.x.leftCols(N) = prev.x.rightCols(N);
    p.u.leftCols(N - 1) = prev.u.rightCols(N - 1);
    const Vec last = prev.x.col(N) - reg.xs;
    p.u.col(N - 1) = reg.us + reg.term.K_T * last;
    p.x.col(N) = reg.xs + (mpc.nominal_A + mpc.nominal_B * reg.term.K_T) * last;
    return p;
}

// ---------------------------------------------------------------- fixed-tube baseline

struct TzpcController {
    bool feasible = false;
    std::string failure;
    Mat K_fix;
    Mat V_K;
    Mat P_fix;
    Vec gamma;     ///< open-loop offsets H c_h + F + y
    Vec h_fix;
    int iterations = 0;
    bool closed_form = false;
    Polytope Xt;
    Polytope Ut;
};

/// Row j: min a' h_ref s.t. a' H = H^j Acl, a >= 0. The optimal value is the
/// support of H^j Acl over P(H, h_ref).
inline std::optional<Mat> facet_transition(const Mat& H, const Mat& Acl, const Vec& h_ref)
{
    const Eigen::Index q = H.rows(), n = H.cols();
    Mat P(q, q);
    const Mat HA = H * Acl;
    for (Eigen::Index j = 0; j < q; ++j) {
        optim::LpProblem lp;
        lp.cost = h_ref;
        lp.A = Mat(0, q);
        lp.b = Vec(0);
        lp.A_eq = H.transpose();
        lp.b_eq = HA.row(j).transpose();
        lp.lower = Vec::Zero(q);
        lp.upper = Vec::Constant(q, kInf);
        const auto r = optim::solve_lp(lp);
        if (!r.optimal()) return std::nullopt;
        P.row(j) = r.x.transpose();
    }
    (void)n;
    return P;
}

struct FixedPoint {
    bool converged = false;
    bool closed_form = false;
    int iterations = 0;
    Vec h;
};

/// h <- P h + gamma from h = 0. Falls back to (I - P)^{-1} gamma when the
/// iteration is still moving after `cap` steps but P is a contraction.
inline FixedPoint tube_fixed_point(const Mat& P, const Vec& gamma, int cap = 100, double tol = 1e-8)
{
    FixedPoint out;
    Vec h = Vec::Zero(gamma.size());
    for (int k = 1; k <= cap; ++k) {
        const Vec next = P * h + gamma;
        const double step = (next - h).cwiseAbs().maxCoeff();
        h = next;
        out.iterations = k;
        if (!h.allFinite()) return out;
        if (step <= tol * std::max(1.0, h.cwiseAbs().maxCoeff())) {
            out.converged = true;
            out.h = h;
            return out;
        }
    }
    Eigen::EigenSolver<Mat> es(P, false);
    if (es.eigenvalues().cwiseAbs().maxCoeff() < 1.0) {
        out.h = (Mat::Identity(P.rows(), P.cols()) - P).partialPivLu().solve(gamma);
        out.converged = (out.h.array() >= -1e-12).all();
        out.closed_form = true;
    }
    return out;
}

inline tube::TubeState fixed_tube_state(const Mat& H, const Vec& h)
{
    tube::TubeState t;
    t.H = H;
    t.h = h.cwiseMax(0.0);
    if ((t.h.array() > 0.0).all()) return tube::TubeState::from_polytope(t.polytope());
    t.radius = Vec::Zero(H.cols());
    t.M_e = 0.0;
    return t;
}

/// LQR gain on the nominal model and the smallest tube of its facet
/// directions that the open-loop error recursion leaves invariant.
inline TzpcController build_tzpc(const ScenarioConfig& cfg, const Scenario& sc)
{
    TzpcController c;
    const tmpc::MpcConfig mpc = mpc_config(cfg, sc.sets);
    c.K_fix = tmpc::solve_dare(mpc.nominal_A, mpc.nominal_B, mpc.Q, mpc.R).K;
    const Eigen::Index n = sc.batch.n();
    Mat IK(n + sc.batch.m(), n);
    IK << Mat::Identity(n, n), c.K_fix;
    c.V_K = sc.batch.D0_pinv * IK;
    const Mat& H = sc.X.H();
    const tube::CoeffPolytope pdw(sc.sets.mdw);
    const Vec F = tube::open_loop_mismatch(H, sc.sets.mdw, pdw, sc.batch, sc.X, sc.U);
    c.gamma = H * sc.Zw.center() + F + tube::facet_y(H, sc.Zw);
    const Mat W_ref = sc.sets.mdw.num_generators() ? Mat(sc.sets.mdw.realize(pdw.reference())) : sc.sets.mdw.center();
    const Mat Acl = (sc.batch.X1 - W_ref) * c.V_K;
    const auto P = facet_transition(H, Acl, sc.X.h());
    if (!P) {
        c.failure = "facet transition LP failed";
        return c;
    }
    c.P_fix = *P;
    const FixedPoint fp = tube_fixed_point(c.P_fix, c.gamma);
    c.iterations = fp.iterations;
    c.closed_form = fp.closed_form;
    if (!fp.converged) {
        c.failure = "tube recursion diverges";
        return c;
    }
    c.h_fix = fp.h;
    const tube::TubeState E = fixed_tube_state(H, c.h_fix);
    c.Xt = tmpc::tighten_state(sc.X, E);
    c.Ut = tmpc::tighten_input(sc.U, c.K_fix, E);
    if (!has_interior(c.Xt) || !has_interior(c.Ut)) {
        c.failure = "fixed tube leaves no admissible nominal";
        return c;
    }
    c.feasible = true;
    return c;
}

// ---------------------------------------------------------------- closed loop

/// Everything a tube-gain LP solve saw, for external certification.
struct LpView {
    int t;  ///< -1 for the bootstrap solve
    const Scenario& scenario;
    const tube::TubeGainContext& ctx;
    const tube::TubeState& tube;
    const tube::TubeGainResult& result;
    const Vec& xbar;
    const Vec& ubar;
};

using LpObserver = std::function<void(const LpView&)>;

namespace detail {

class Session {
public:
    Session(const ScenarioConfig& cfg, LpObserver observer) : cfg_(cfg), observer_(std::move(observer))
    {
        log_.config = cfg;
    }

    RunLog run(bool initial_only)
    {
        try {
            sc_ = build_scenario(cfg_, cfg_.controller == ControllerKind::tzpc ? PriorMode::data_only : cfg_.prior);
        } catch (const std::exception& e) {
            return fail(std::string("model sets: ") + e.what());
        }
        mpc_ = mpc_config(cfg_, sc_.sets);
        plant_.emplace(sc_.A, sc_.B, sc_.Zw, cfg_.x0);
        rng_ = make_stream(cfg_.seed, Stream::plant);
        try {
            const bool ok = cfg_.controller == ControllerKind::elastic ? start_elastic() : start_tzpc();
            if (!ok) return finish();
            log_.summary.feasible_at_t0 = true;
            if (!initial_only) loop();
        } catch (const optim::solver_error& e) {
            log_.summary.failure = e.what();
            log_.summary.broken = log_.summary.feasible_at_t0;
        }
        return finish();
    }

private:
    RunLog fail(std::string why)
    {
        log_.summary.failure = std::move(why);
        log_.final_state = cfg_.x0;
        return log_;
    }

    RunLog finish()
    {
        log_.final_state = plant_ ? plant_->state() : cfg_.x0;
        log_.summary.steps = static_cast<int>(log_.steps.size());
        log_.summary.final_distance = (log_.final_state - cfg_.target).norm();
        note_reach(log_.final_state, log_.summary.steps);
        return log_;
    }

    void note_reach(const Vec& x, int t)
    {
        log_.summary.closest_distance = std::min(log_.summary.closest_distance, (x - cfg_.target).norm());
        if (!log_.summary.reached_target && (x - cfg_.target).norm() <= cfg_.target_radius) {
            log_.summary.reached_target = true;
            log_.summary.reach_step = t;
        }
    }

    tube::LambdaRange lambda_range() const
    {
        tube::LambdaRange r;
        const double floor = cfg_.tube_floor * sc_.X.h().maxCoeff();
        r.min = std::min(r.max, std::max(r.min, floor / tube_.h.maxCoeff()));
        return r;
    }

    void tighten()
    {
        Xt_ = tmpc::tighten_state(sc_.X, tube_);
        Ut_ = tmpc::tighten_input(sc_.U, gain_.K, tube_);
        input_offsets_ = sc_.U.h() - Ut_.h();
    }

    bool refresh_regulator(bool force)
    {
        const double scale = tube_.h.maxCoeff();
        if (!force && reg_ && scale > cfg_.recompute_ratio * reg_->built_at) return false;
        auto fresh = make_regulator(mpc_, Xt_, Ut_, cfg_.target, cfg_.target_margin);
        if (!fresh) {
            if (reg_) reg_->built_at = scale;  // retry after the next halving
            return false;
        }
        fresh->built_at = scale;
        prev_reg_ = reg_;
        reg_ = std::move(fresh);
        return true;
    }

    bool start_elastic()
    {
        ctx_.emplace(sc_.batch, sc_.sets.mdw, sc_.Zw, sc_.X.H());
        tube_ = tube::TubeState::from_polytope(sc_.X);
        const tube::InputCap cap{sc_.U.H(), sc_.U.h()};
        const Vec u0 = Vec::Zero(sc_.batch.m());
        const auto boot = ctx_->solve(tube_, cfg_.x0, u0, cfg_.sigma, &cap, lambda_range());
        log_.summary.bootstrap_status = boot.status;
        if (observer_) observer_({-1, sc_, *ctx_, tube_, boot, cfg_.x0, u0});
        if (!boot.optimal()) {
            log_.summary.failure = "bootstrap tube-gain LP " + std::string(optim::to_string(boot.status));
            return false;
        }
        log_.summary.bootstrap_lambda = boot.lambda;
        tube_ = tube::update_tube(tube_, boot.lambda);
        ref_tube_ = tube_;
        gain_ = boot.gain;
        return start_plan();
    }

    bool start_tzpc()
    {
        tzpc_ = build_tzpc(cfg_, sc_);
        log_.summary.bootstrap_status = tzpc_.feasible ? optim::Status::Optimal : optim::Status::Infeasible;
        if (!tzpc_.feasible) {
            log_.summary.failure = "fixed tube: " + tzpc_.failure;
            return false;
        }
        tube_ = fixed_tube_state(sc_.X.H(), tzpc_.h_fix);
        ref_tube_ = tube_;
        gain_.K = tzpc_.K_fix;
        gain_.V_K = tzpc_.V_K;
        return start_plan();
    }

    bool start_plan()
    {
        tighten();
        refresh_regulator(true);
        if (!reg_) {
            log_.summary.failure = "no terminal set for the tightened constraints";
            return false;
        }
        const Polytope spread = tube_.polytope();
        plan_ = solve_plan(mpc_, *reg_, Xt_, Ut_, cfg_.x0, &spread);
        qp_status_ = plan_.status;
        if (plan_.status != optim::Status::Optimal) {
            log_.summary.failure = "initial QP " + std::string(optim::to_string(plan_.status));
            return false;
        }
        return true;
    }

    void loop()
    {
        const bool elastic = cfg_.controller == ControllerKind::elastic;
        for (int t = 0; t < cfg_.steps; ++t) {
            StepRecord rec;
            rec.t = t;
            rec.x = plant_->state();
            rec.xbar = plan_.x.col(0);
            rec.ubar = plan_.u.col(0);
            rec.h = tube_.h;
            rec.cost = plan_.cost;
            rec.qp_status = qp_status_;
            rec.plan_reused = plan_reused_;
            const Vec e = rec.x - rec.xbar;
            rec.V = tube::lyapunov_value(e, tube_);
            rec.V_ref = tube::lyapunov_value(e, ref_tube_);
            note_reach(rec.x, t);

            double lambda = 1.0;
            if (elastic) {
                const tube::InputCap cap{sc_.U.H(), input_offsets_};
                const auto res = ctx_->solve(tube_, rec.xbar, rec.ubar, cfg_.sigma, &cap, lambda_range());
                if (observer_) observer_({t, sc_, *ctx_, tube_, res, rec.xbar, rec.ubar});
                rec.lp_status = res.status;
                rec.y = res.bounds.y;
                rec.l = res.bounds.l;
                rec.z = res.bounds.z;
                if (res.optimal()) {
                    gain_ = res.gain;
                    lambda = res.lambda;
                } else {
                    rec.frozen = true;
                }
            }
            rec.lambda = lambda;
            rec.rho = gain_.rho;
            rec.gain_hash = hash_matrix(gain_.V_K);
            rec.u = rec.ubar + gain_.K * e;
            rec.violation = !membership(sc_.X, rec.x, 1e-7) || !membership(sc_.U, rec.u, 1e-7);
            if (rec.violation) ++log_.summary.violations;
            log_.steps.push_back(rec);

            plant_->step(rec.u, rng_);
            if (lambda < 1.0) tube_ = tube::update_tube(tube_, lambda);
            if (t + 1 == cfg_.steps) break;
            if (!replan()) {
                log_.summary.broken = true;
                log_.summary.failure = "QP infeasible twice in a row at t = " + std::to_string(t + 1);
                return;
            }
        }
    }

    /// Next plan from the propagated nominal state. A terminal set that was
    /// just rebuilt and rejects the plan is dropped for the previous one; if
    /// the QP still fails, the shifted previous plan is applied once.
    bool replan()
    {
        const Plan previous = plan_;
        const Vec x_next = previous.x.col(1);
        tighten();
        const bool rebuilt = refresh_regulator(false);
        plan_ = solve_plan(mpc_, *reg_, Xt_, Ut_, x_next);
        if (plan_.status != optim::Status::Optimal && rebuilt && prev_reg_) {
            reg_ = prev_reg_;
            plan_ = solve_plan(mpc_, *reg_, Xt_, Ut_, x_next);
        }
        qp_status_ = plan_.status;
        if (plan_.status == optim::Status::Optimal) {
            plan_reused_ = false;
            return true;
        }
        if (plan_reused_) return false;
        plan_ = shifted_plan(previous, *reg_, mpc_);
        plan_.status = qp_status_;
        plan_reused_ = true;
        return true;
    }

    const ScenarioConfig& cfg_;
    LpObserver observer_;
    RunLog log_;
    Scenario sc_;
    tmpc::MpcConfig mpc_;
    std::optional<sim::Plant> plant_;
    std::mt19937_64 rng_;
    std::optional<tube::TubeGainContext> ctx_;
    TzpcController tzpc_;
    tube::TubeState tube_;
    tube::TubeState ref_tube_;
    tube::GainParam gain_;
    Polytope Xt_;
    Polytope Ut_;
    Vec input_offsets_;
    std::optional<Regulator> reg_;
    std::optional<Regulator> prev_reg_;
    Plan plan_;
    optim::Status qp_status_ = optim::Status::NumericalFailure;
    bool plan_reused_ = false;
};

}  // namespace detail

/// One closed-loop run. Infeasibility and solver trouble end up in the
/// summary, never as exceptions; an invalid config throws.
inline RunLog simulate_closed_loop(const ScenarioConfig& cfg, LpObserver observer = {})
{
    cfg.validate();
    return detail::Session(cfg, std::move(observer)).run(false);
}

/// Setup plus the t0 LP and QP only.
inline RunLog initial_feasibility(const ScenarioConfig& cfg)
{
    cfg.validate();
    return detail::Session(cfg, {}).run(true);
}

// ---------------------------------------------------------------- monitors

struct LyapunovReport {
    double lambda_bar = 0.0;
    bool disturbance_free = false;
    int checked = 0;
    bool decay_ok = true;          ///< V_ref(t+1) <= lambda_bar V_ref(t) + tol, non-frozen steps
    bool geometric_ok = true;      ///< V_ref(t) <= lambda_bar^t V_ref(0) + tol up to the first freeze
    bool stepwise_ok = true;       ///< V_ref(t+1) <= lambda(t) V_ref(t) + tol, non-frozen steps
    double worst_excess = -kInf;   ///< max V_ref(t+1) - lambda_bar V_ref(t)
    double max_V = 0.0;            ///< over non-frozen steps
    bool containment_ok = true;    ///< max_V <= 1 + 1e-6

    bool ok() const { return containment_ok && (!disturbance_free || (decay_ok && geometric_ok && stepwise_ok)); }
};

inline LyapunovReport lyapunov_monitor(const RunLog& log, double tol = 1e-8)
{
    LyapunovReport r;
    r.disturbance_free = log.config.alpha == 0.0;
    const auto& s = log.steps;
    for (const auto& st : s)
        if (!st.frozen && log.config.controller == ControllerKind::elastic) r.lambda_bar = std::max(r.lambda_bar, st.lambda);
    if (log.config.controller == ControllerKind::tzpc) r.lambda_bar = 1.0;
    bool before_freeze = true;
    double pow = 1.0;
    for (std::size_t t = 0; t < s.size(); ++t) {
        if (!s[t].frozen) r.max_V = std::max(r.max_V, s[t].V);
        if (before_freeze && r.disturbance_free && s[t].V_ref > pow * s.front().V_ref + tol) r.geometric_ok = false;
        if (s[t].frozen) before_freeze = false;
        pow *= r.lambda_bar;
        if (t + 1 < s.size() && !s[t].frozen && !s[t].plan_reused && !s[t + 1].plan_reused) {
            const double excess = s[t + 1].V_ref - r.lambda_bar * s[t].V_ref;
            r.worst_excess = std::max(r.worst_excess, excess);
            ++r.checked;
            if (r.disturbance_free && excess > tol) r.decay_ok = false;
            if (r.disturbance_free && s[t + 1].V_ref > s[t].lambda * s[t].V_ref + tol) r.stepwise_ok = false;
        }
    }
    r.containment_ok = r.max_V <= 1.0 + 1e-6;
    return r;
}

struct VerifyReport {
    int violations = 0;
    bool safety_ok = true;          ///< all-Optimal runs have no violations
    bool tube_monotone = true;      ///< h non-increasing on non-frozen steps
    bool recursive_feasibility = true;  ///< no QP failure after an Optimal QP
    LyapunovReport lyapunov;

    bool ok() const { return safety_ok && tube_monotone && recursive_feasibility && lyapunov.ok(); }
};

inline VerifyReport verify_log(const RunLog& log)
{
    VerifyReport r;
    r.violations = log.summary.violations;
    r.safety_ok = !log.all_optimal() || r.violations == 0;
    const auto& s = log.steps;
    for (std::size_t t = 1; t < s.size(); ++t) {
        if (!s[t - 1].frozen && (s[t].h - s[t - 1].h).maxCoeff() > 1e-12 * s[t - 1].h.cwiseAbs().maxCoeff())
            r.tube_monotone = false;
        if (s[t - 1].qp_status == optim::Status::Optimal && s[t].qp_status != optim::Status::Optimal)
            r.recursive_feasibility = false;
    }
    if (log.summary.broken) r.recursive_feasibility = false;
    r.lyapunov = lyapunov_monitor(log);
    return r;
}

// ---------------------------------------------------------------- exports

/// t, x, xbar, h, lambda, frozen per step (plus the final state as a last row).
inline void write_trajectory_csv(std::ostream& os, const RunLog& log)
{
    const Eigen::Index n = log.final_state.size();
    const Eigen::Index q = log.steps.empty() ? 0 : log.steps.front().h.size();
    os << "t";
    for (Eigen::Index i = 0; i < n; ++i) os << ",x" << i + 1;
    for (Eigen::Index i = 0; i < n; ++i) os << ",xbar" << i + 1;
    for (Eigen::Index i = 0; i < q; ++i) os << ",h" << i + 1;
    os << ",lambda,frozen\n";
    os.precision(17);
    for (const auto& s : log.steps) {
        os << s.t;
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << s.x(i);
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << s.xbar(i);
        for (Eigen::Index i = 0; i < q; ++i) os << ',' << s.h(i);
        os << ',' << s.lambda << ',' << (s.frozen ? 1 : 0) << '\n';
    }
    os << log.summary.steps;
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << log.final_state(i);
    for (Eigen::Index i = 0; i < n + q; ++i) os << ',';
    os << ",,\n";
}

inline RunLog run_phase_portrait(const ScenarioConfig& cfg, std::ostream* csv = nullptr)
{
    RunLog log = simulate_closed_loop(cfg);
    if (csv) write_trajectory_csv(*csv, log);
    return log;
}

// ---------------------------------------------------------------- sweeps

enum class Method { data_prior, data_only, exact, none, tzpc };

inline const char* to_string(Method m)
{
    switch (m) {
        case Method::data_prior: return "data_prior";
        case Method::data_only: return "data_only";
        case Method::exact: return "exact";
        case Method::none: return "none";
        case Method::tzpc: return "tzpc";
    }
    return "?";
}

inline Method method_from_string(const std::string& s)
{
    for (Method m : {Method::data_prior, Method::data_only, Method::exact, Method::none, Method::tzpc})
        if (s == to_string(m)) return m;
    throw std::invalid_argument("unknown method '" + s + "'");
}

inline ScenarioConfig configure(ScenarioConfig cfg, Method m)
{
    cfg.controller = m == Method::tzpc ? ControllerKind::tzpc : ControllerKind::elastic;
    switch (m) {
        case Method::data_prior: cfg.prior = PriorMode::data_prior; break;
        case Method::exact: cfg.prior = PriorMode::exact; break;
        case Method::none: cfg.prior = PriorMode::none; break;
        case Method::data_only:
        case Method::tzpc: cfg.prior = PriorMode::data_only; break;
    }
    return cfg;
}

enum class FeasibilityMode { initial, whole_run };

struct SweepGrid {
    ScenarioConfig base;
    std::vector<Eigen::Index> T;
    std::vector<double> alpha;
    std::vector<Method> methods{Method::data_prior, Method::data_only, Method::tzpc};
    int runs = 50;
    FeasibilityMode mode = FeasibilityMode::initial;
};

struct SweepRow {
    Method method;
    Eigen::Index T;
    double alpha;
    double feasible_pct;
    int runs;
};

/// Seed for run r of grid point (T, alpha index); shared by every method.
inline std::uint64_t run_seed(std::uint64_t base, Eigen::Index T, std::size_t alpha_index, int run)
{
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(T), static_cast<std::uint32_t>(alpha_index),
                      static_cast<std::uint32_t>(run)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline bool run_feasible(const ScenarioConfig& cfg, FeasibilityMode mode)
{
    if (mode == FeasibilityMode::initial) return initial_feasibility(cfg).summary.feasible_at_t0;
    const RunLog log = simulate_closed_loop(cfg);
    return log.summary.feasible_at_t0 && !log.summary.broken && log.summary.violations == 0 &&
           std::all_of(log.steps.begin(), log.steps.end(),
                       [](const StepRecord& s) { return s.qp_status == optim::Status::Optimal; });
}

/// ZONOTUBE_WORKERS if set and positive, else the hardware concurrency.
inline unsigned worker_count()
{
    if (const char* env = std::getenv("ZONOTUBE_WORKERS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls job(i) for i in [0, count) on a pool of `workers` threads.
template <class Job>
void parallel_for(std::size_t count, unsigned workers, Job&& job)
{
    workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), std::max<std::size_t>(count, 1)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (error) std::rethrow_exception(error);
}

using SweepProgress = std::function<void(const SweepRow&)>;

inline std::vector<SweepRow> run_feasibility_sweep(const SweepGrid& grid, unsigned workers = worker_count(),
                                                   const SweepProgress& progress = {})
{
    if (grid.T.empty() || grid.alpha.empty() || grid.methods.empty() || grid.runs < 1)
        throw std::invalid_argument("run_feasibility_sweep: empty grid");
    struct Job {
        std::size_t point;
        ScenarioConfig cfg;
    };
    std::vector<SweepRow> rows;
    std::vector<Job> jobs;
    for (Eigen::Index T : grid.T) {
        for (std::size_t a = 0; a < grid.alpha.size(); ++a) {
            for (Method m : grid.methods) {
                rows.push_back({m, T, grid.alpha[a], 0.0, grid.runs});
                for (int r = 0; r < grid.runs; ++r) {
                    ScenarioConfig cfg = configure(grid.base, m);
                    cfg.T = T;
                    cfg.alpha = grid.alpha[a];
                    cfg.seed = run_seed(grid.base.seed, T, a, r);
                    cfg.validate();
                    jobs.push_back({rows.size() - 1, std::move(cfg)});
                }
            }
        }
    }
    std::vector<char> feasible(jobs.size(), 0);
    std::vector<int> remaining(rows.size(), grid.runs);
    std::mutex sink;
    parallel_for(jobs.size(), workers, [&](std::size_t i) {
        feasible[i] = run_feasible(jobs[i].cfg, grid.mode) ? 1 : 0;
        std::lock_guard lock(sink);
        if (--remaining[jobs[i].point] == 0 && progress) {
            SweepRow row = rows[jobs[i].point];
            int hits = 0;
            for (std::size_t k = 0; k < jobs.size(); ++k)
                if (jobs[k].point == jobs[i].point) hits += feasible[k];
            row.feasible_pct = 100.0 * hits / grid.runs;
            progress(row);
        }
    });
    for (std::size_t k = 0; k < jobs.size(); ++k) rows[jobs[k].point].feasible_pct += feasible[k];
    for (auto& row : rows) row.feasible_pct *= 100.0 / grid.runs;
    return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows)
{
    os << "method,T,alpha,feasible_pct,runs\n";
    for (const auto& r : rows) os << to_string(r.method) << ',' << r.T << ',' << r.alpha << ',' << r.feasible_pct << ',' << r.runs << '\n';
}

}  // namespace zonotube::bench
