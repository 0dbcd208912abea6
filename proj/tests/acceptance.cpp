// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Closed-loop criteria run the robot scenario with a one-second sample.

#include <zonotube/simbench.hpp>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace zonotube;
using namespace zonotube::bench;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

ScenarioConfig robot(std::uint64_t seed, double alpha, Eigen::Index T = 20)
{
    ScenarioConfig c;
    c.ts = 1.0;
    c.seed = seed;
    c.alpha = alpha;
    c.T = T;
    return c;
}

Mat theta_of(const Scenario& sc)
{
    Mat th(sc.A.rows(), sc.A.cols() + sc.B.cols());
    th << sc.A, sc.B;
    return th;
}

Mat randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c)
{
    std::normal_distribution<double> nd;
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(rng);
    return m;
}

Polytope random_polytope(std::mt19937_64& rng, Eigen::Index n, Eigen::Index extra)
{
    Mat H(extra + 2 * n, n);
    H << randn(rng, extra, n), Mat::Identity(n, n), -Mat::Identity(n, n);
    std::uniform_real_distribution<double> ud(0.5, 1.5);
    Vec h(H.rows());
    for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = ud(rng);
    return Polytope(H, h);
}

// ---------------------------------------------------------------- 1

Outcome noiseless_identification()
{
    const auto t0 = Clock::now();
    ScenarioConfig cfg = robot(101, 0.0);
    const Scenario sc = build_scenario(cfg, PriorMode::data_only);
    const auto refined = sysid::refined_open_loop_set(sc.batch, sc.sets.mdw);
    const double center_err = (refined.mol_c.center() - theta_of(sc)).cwiseAbs().maxCoeff();
    double gen = 0.0;
    const Eigen::Index cols = refined.mol_c.cols();
    for (Eigen::Index i = 0; i < refined.mol_c.num_generators(); ++i) {
        const Mat Gi = refined.mol_c.generators().middleCols(i * cols, cols);
        gen = std::max(gen, Gi.cwiseAbs().rowwise().sum().maxCoeff());
    }
    const double dt = seconds_since(t0);
    std::ostringstream os;
    os << "center err " << center_err << ", max generator inf-norm " << gen << ", " << dt << " s";
    return {center_err <= 1e-9 && gen <= 1e-9 && dt < 1.0, os.str()};
}

// ---------------------------------------------------------------- 2, 3, disturbed half of 4

struct ContainmentTally {
    long lp_optimal = 0;
    long ol_checks = 0, ol_fail = 0;
    long dw_checks = 0, dw_fail = 0;
    long cl_checks = 0, cl_fail = 0;
    long samples = 0, sample_violations = 0;
    double worst_margin = -kInf;
    double max_V = 0.0;
    int runs = 0;
    double containment_seconds = 0.0;
};

ContainmentTally containment_suite(int steps)
{
    ContainmentTally tally;
    for (double alpha : {0.2, 0.7}) {
        for (int k = 0; k < 25; ++k) {
            ScenarioConfig cfg = robot(500 + static_cast<std::uint64_t>(k), alpha);
            cfg.steps = steps;
            std::mt19937_64 rng(cfg.seed * 7919 + static_cast<std::uint64_t>(alpha * 10));
            bool once = false;
            const RunLog log = simulate_closed_loop(cfg, [&](const LpView& v) {
                const auto t_mem = Clock::now();
                const auto& sc = v.scenario;
                const auto& batch = v.ctx.batch();
                if (!once) {
                    once = true;
                    ++tally.ol_checks;
                    if (!membership(sc.sets.mol_c, theta_of(sc), 1e-6)) ++tally.ol_fail;
                    // the batch's true disturbance, recovered from the true model
                    const Mat W0 = batch.X1 - sc.A * batch.X0 - sc.B * batch.U0;
                    ++tally.dw_checks;
                    if (!membership(v.ctx.mdw(), W0, 1e-6)) ++tally.dw_fail;
                }
                if (!v.result.optimal()) return;
                ++tally.lp_optimal;
                const Mat Acl = sc.A + sc.B * v.result.gain.K;
                const auto mcl = sysid::closed_loop_set(batch, v.ctx.mdw(), v.result.gain.V_K);
                ++tally.cl_checks;
                if (!membership(mcl, Acl, 1e-6)) ++tally.cl_fail;
                tally.containment_seconds += seconds_since(t_mem);
                const auto rep = tube::check_contractivity(v.ctx, v.tube, v.result, v.xbar, v.ubar, 10000, rng);
                tally.samples += rep.samples;
                tally.sample_violations += rep.violations;
                tally.worst_margin = std::max(tally.worst_margin, rep.worst_margin);
            });
            for (const auto& s : log.steps) tally.max_V = std::max(tally.max_V, s.V);
            ++tally.runs;
        }
    }
    return tally;
}

// ---------------------------------------------------------------- 4

Outcome lyapunov_decay(const ContainmentTally& disturbed)
{
    int ok = 0, frozen = 0;
    double worst = -kInf;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const RunLog log = simulate_closed_loop(robot(900 + seed, 0.0));
        if (!log.summary.feasible_at_t0) continue;
        const auto& s = log.steps;
        const LyapunovReport r = lyapunov_monitor(log);
        // V(e(t)) <= lambda_bar^t V(e(0)) at every non-frozen step
        bool geometric = true;
        double pow = 1.0;
        for (const auto& st : s) {
            if (st.frozen) ++frozen;
            else if (st.V_ref > pow * s.front().V_ref + 1e-8) geometric = false;
            worst = std::max(worst, st.V_ref - pow * s.front().V_ref);
            pow *= r.lambda_bar;
        }
        if (geometric && r.stepwise_ok) ++ok;
    }
    std::ostringstream os;
    os << ok << "/10 disturbance-free runs decay (worst excess " << worst << ", frozen steps " << frozen
       << "); disturbed max V " << disturbed.max_V << " over " << disturbed.runs << " runs";
    return {ok == 10 && disturbed.max_V <= 1.0 + 1e-6, os.str()};
}

// ---------------------------------------------------------------- 5

Outcome recursive_feasibility()
{
    const auto t0 = Clock::now();
    constexpr int runs = 100;
    std::vector<int> breaks(runs, 0), feasible(runs, 0), violations(runs, 0);
    parallel_for(runs, worker_count(), [&](std::size_t i) {
        const RunLog log = simulate_closed_loop(robot(2000 + i, 0.7));
        feasible[i] = log.summary.feasible_at_t0;
        violations[i] = log.summary.violations;
        const auto& s = log.steps;
        for (std::size_t t = 0; t + 1 < s.size(); ++t)
            if (s[t + 1].lp_status == optim::Status::Optimal && s[t].qp_status == optim::Status::Optimal &&
                s[t + 1].qp_status == optim::Status::Infeasible)
                ++breaks[i];
    });
    int total = 0, started = 0, viol = 0;
    for (int i = 0; i < runs; ++i) {
        total += breaks[i];
        started += feasible[i];
        viol += violations[i];
    }
    std::ostringstream os;
    os << total << " QP losses after an Optimal step over " << started << "/" << runs << " started runs, " << viol
       << " violations, " << seconds_since(t0) << " s";
    return {total == 0 && seconds_since(t0) < 600.0, os.str()};
}

// ---------------------------------------------------------------- 6

Outcome case_study()
{
    const RunLog log = simulate_closed_loop(robot(1, 0.7));
    const VerifyReport v = verify_log(log);
    std::ostringstream os;
    os << "reached " << log.summary.reached_target << " at step " << log.summary.reach_step << " (closest "
       << log.summary.closest_distance << "), violations " << log.summary.violations << ", tube monotone "
       << v.tube_monotone;
    return {log.summary.reached_target && log.summary.violations == 0 && v.tube_monotone, os.str()};
}

// ---------------------------------------------------------------- 7

Outcome sweep_ordering()
{
    const auto t0 = Clock::now();
    SweepGrid g;
    g.base = robot(1, 0.0);
    g.T = {15, 30};
    g.alpha = {0.1, 0.25, 0.5, 0.75, 1.0};
    g.runs = 50;
    const auto rows = run_feasibility_sweep(g);
    auto pct = [&](Method m, Eigen::Index T, double a) {
        for (const auto& r : rows)
            if (r.method == m && r.T == T && r.alpha == a) return r.feasible_pct;
        throw std::logic_error("missing grid point");
    };
    bool a_ok = true, b_ok = true, c_ok = true;
    std::ostringstream os;
    for (double a : g.alpha) a_ok = a_ok && pct(Method::data_prior, 30, a) == 100.0;
    for (Eigen::Index T : g.T)
        for (double a : g.alpha) {
            const double dp = pct(Method::data_prior, T, a), dn = pct(Method::data_only, T, a), tz = pct(Method::tzpc, T, a);
            b_ok = b_ok && dp + 5.0 >= dn && dn + 5.0 >= tz;
        }
    for (double a : g.alpha)
        if (a >= 0.5) c_ok = c_ok && pct(Method::tzpc, 15, a) < 10.0;
    os << "(a) " << (a_ok ? "ok" : "fail") << " (b) " << (b_ok ? "ok" : "fail") << " (c) " << (c_ok ? "ok" : "fail")
       << ", " << seconds_since(t0) << " s\n";
    for (Eigen::Index T : g.T) {
        os << "      T=" << T;
        for (Method m : g.methods) {
            os << "  " << to_string(m) << ":";
            for (double a : g.alpha) os << ' ' << pct(m, T, a);
        }
        os << '\n';
    }
    std::string text = os.str();
    text.pop_back();
    return {a_ok && b_ok && c_ok && seconds_since(t0) < 1800.0, text};
}

// ---------------------------------------------------------------- 8

Outcome set_algebra()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(88);
    std::uniform_int_distribution<int> dim(2, 4), gens(1, 6);
    long cases = 0, failures = 0;
    auto check = [&](bool ok) {
        ++cases;
        if (!ok) ++failures;
    };
    for (int k = 0; k < 2500; ++k) {
        // support is additive under Minkowski sum: LP route on the sum, closed form on the parts
        const int n = dim(rng);
        const Zonotope a(randn(rng, n, 1), randn(rng, n, gens(rng))), b(randn(rng, n, 1), randn(rng, n, gens(rng)));
        const Vec d = randn(rng, n, 1);
        const double lhs = support_cz(ConstrainedZonotope(minkowski_sum(a, b)), d);
        check(std::abs(lhs - support(a, d) - support(b, d)) <= 1e-7 * std::max(1.0, std::abs(lhs)));
    }
    for (int k = 0; k < 2500; ++k) {
        // support LP against the best vertex
        const int n = 2 + k % 2;
        const Polytope P = random_polytope(rng, n, 2 + k % 4);
        const auto V = vertices(P);
        const Vec d = randn(rng, n, 1);
        double best = -kInf;
        for (const Vec& v : V) best = std::max(best, d.dot(v));
        check(std::abs(support(P, d) - best) <= 1e-6);
    }
    for (int k = 0; k < 2500; ++k) {
        // interval enclosure holds every vertex
        const int n = 2 + k % 2;
        const Polytope P = random_polytope(rng, n, 3);
        const IntervalBox box = interval_enclosure(P);
        bool ok = true;
        for (const Vec& v : vertices(P)) ok = ok && box.contains(v, 1e-9);
        check(ok);
    }
    for (int k = 0; k < 2500; ++k) {
        // samples of a constrained zonotope are members of it
        const int n = dim(rng), s = n + gens(rng);
        const Mat A = randn(rng, 1 + k % 2, s);
        const Vec zeta0 = 0.5 * zonotube::detail::uniform_cube(s, rng);
        const ConstrainedZonotope z(randn(rng, n, 1), randn(rng, n, s), A, A * zeta0);
        check(membership(z, sample(z, rng), 1e-7));
    }
    std::ostringstream os;
    os << failures << " failures in " << cases << " cases, " << seconds_since(t0) << " s";
    return {failures == 0 && cases == 10000 && seconds_since(t0) < 60.0, os.str()};
}

// ---------------------------------------------------------------- 9

Outcome scalar_fixed_point()
{
    Mat H(2, 1);
    H << 1, -1;
    Mat Acl(1, 1);
    Acl << 0.5;  // a + b K
    Mat Gw(1, 1);
    Gw << 0.3;
    const Vec gamma = H * Vec::Zero(1) + tube::facet_y(H, Zonotope(Vec::Zero(1), Gw));
    const auto P = facet_transition(H, Acl, Vec::Ones(2));
    if (!P) return {false, "facet transition LP failed"};
    const FixedPoint fp = tube_fixed_point(*P, gamma);
    // geometric series 0.3 * sum 0.5^k
    double oracle = 0.0, term = 0.3;
    for (int k = 0; k < 200; ++k, term *= 0.5) oracle += term;
    const double err = fp.converged ? (fp.h.array() - oracle).abs().maxCoeff() : kInf;
    std::ostringstream os;
    os << "h_fix " << (fp.converged ? fp.h(0) : kInf) << " vs " << oracle << " (err " << err << ")";
    return {err <= 1e-6, os.str()};
}

}  // namespace

int main(int argc, char** argv)
{
    // optional arguments pick criteria by number
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    std::vector<std::pair<std::string, std::function<Outcome()>>> criteria;
    ContainmentTally tally;
    bool tally_ready = false;
    auto run_containment = [&] {
        if (!tally_ready) {
            tally = containment_suite(60);
            tally_ready = true;
        }
    };

    criteria.emplace_back("1 noiseless identification", noiseless_identification);
    criteria.emplace_back("2 ground-truth containment", [&] {
        const auto t0 = Clock::now();
        run_containment();
        std::ostringstream os;
        os << "theta* in M_ol " << tally.ol_checks - tally.ol_fail << "/" << tally.ol_checks << ", W0 in M_dw "
           << tally.dw_checks - tally.dw_fail << "/" << tally.dw_checks << ", A*+B*K in M_cl "
           << tally.cl_checks - tally.cl_fail << "/" << tally.cl_checks << ", membership time "
           << tally.containment_seconds << " s (suite " << seconds_since(t0) << " s)";
        const bool ok = tally.ol_fail == 0 && tally.dw_fail == 0 && tally.cl_fail == 0 && tally.cl_checks > 0 &&
                        tally.containment_seconds < 120.0;
        return Outcome{ok, os.str()};
    });
    criteria.emplace_back("3 contractivity certification", [&] {
        run_containment();
        std::ostringstream os;
        os << tally.sample_violations << " violations in " << tally.samples << " samples over " << tally.lp_optimal
           << " Optimal LPs, worst margin " << tally.worst_margin;
        return Outcome{tally.sample_violations == 0 && tally.samples == 10000L * tally.lp_optimal && tally.lp_optimal > 0,
                       os.str()};
    });
    criteria.emplace_back("4 lyapunov decay", [&] {
        run_containment();
        return lyapunov_decay(tally);
    });
    criteria.emplace_back("5 recursive feasibility", recursive_feasibility);
    criteria.emplace_back("6 case study", case_study);
    criteria.emplace_back("7 feasibility sweep ordering", sweep_ordering);
    criteria.emplace_back("8 set algebra properties", set_algebra);
    criteria.emplace_back("9 baseline tube fixed point", scalar_fixed_point);

    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        if (!only.empty() && !only.contains(std::atoi(name.c_str()))) continue;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criteria failed" : std::string("acceptance: all passed"))
              << std::endl;
    return failed ? 1 : 0;
}
