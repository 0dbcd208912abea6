// zonotube command line: identification, closed-loop runs, sweeps, phase
// portraits and log verification.

#include <zonotube/serialize.hpp>
#include <zonotube/simbench.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <set>

using namespace zonotube;
using namespace zonotube::bench;

namespace {

struct ScenarioFlags {
    std::string config_path;
    Eigen::Index T = 0;
    double alpha = 0.0;
    std::string prior;
    std::string controller;
    std::uint64_t seed = 0;
    double ts = 0.0;
    double sigma = 0.0;
    int steps = 0;
    std::map<std::string, CLI::Option*> given;

    /// `skip` names flags the subcommand defines itself.
    void attach(CLI::App& app, std::set<std::string> skip = {})
    {
        given["config"] = app.add_option("--config", config_path, "scenario JSON file")->check(CLI::ExistingFile);
        if (!skip.contains("T")) given["T"] = app.add_option("--T", T, "data length");
        if (!skip.contains("alpha")) given["alpha"] = app.add_option("--alpha", alpha, "disturbance scaling");
        if (!skip.contains("prior"))
            given["prior"] = app.add_option("--prior", prior, "data_only | data_prior | exact | none")
                                 ->check(CLI::IsMember({"data_only", "data_prior", "exact", "none"}));
        if (!skip.contains("controller"))
            given["controller"] =
                app.add_option("--controller", controller, "elastic | tzpc")->check(CLI::IsMember({"elastic", "tzpc"}));
        given["seed"] = app.add_option("--seed", seed, "base seed");
        given["ts"] = app.add_option("--ts", ts, "sampling time [s]");
        given["sigma"] = app.add_option("--sigma", sigma, "weight on lambda in the tube LP");
        given["steps"] = app.add_option("--steps", steps, "closed-loop steps");
    }

    bool set(const std::string& key) const
    {
        const auto it = given.find(key);
        return it != given.end() && it->second->count() > 0;
    }

    ScenarioConfig resolve() const
    {
        ScenarioConfig c;
        if (set("config")) {
            std::ifstream in(config_path);
            c = scenario_from_json(json::parse(in));
        }
        if (set("T")) c.T = T;
        if (set("alpha")) c.alpha = alpha;
        if (set("prior")) c.prior = prior_from_string(prior);
        if (set("controller")) c.controller = controller_from_string(controller);
        if (set("seed")) c.seed = seed;
        if (set("ts")) c.ts = ts;
        if (set("sigma")) c.sigma = sigma;
        if (set("steps")) c.steps = steps;
        c.validate();
        return c;
    }
};

std::ofstream open_out(const std::string& path)
{
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    return f;
}

template <class Write>
void emit(const std::string& path, Write&& write)
{
    if (path.empty() || path == "-") {
        write(std::cout);
        return;
    }
    auto f = open_out(path);
    write(f);
}

void print_summary(const RunLog& log)
{
    const auto& s = log.summary;
    std::cerr << "feasible_at_t0=" << s.feasible_at_t0 << " steps=" << s.steps << " violations=" << s.violations
              << " broken=" << s.broken << " reached=" << s.reached_target << " reach_step=" << s.reach_step
              << " final_distance=" << s.final_distance;
    if (!s.failure.empty()) std::cerr << " failure=\"" << s.failure << '"';
    std::cerr << '\n';
}

int cmd_identify(const ScenarioConfig& cfg, const std::string& out)
{
    const Scenario sc = build_scenario(cfg, cfg.prior);
    Mat theta(sc.A.rows(), sc.A.cols() + sc.B.cols());
    theta << sc.A, sc.B;
    json j = {{"config", to_json(cfg)},
              {"nominal_A", io::to_json(sc.sets.nominal_A)},
              {"nominal_B", io::to_json(sc.sets.nominal_B)},
              {"reference", io::to_json(sc.sets.reference)},
              {"M_w", io::to_json(sc.sets.mw)},
              {"M_dw", io::to_json(sc.sets.mdw)},
              {"M_ol", io::to_json(sc.sets.mol_c)},
              {"truth_in_M_ol", membership(sc.sets.mol_c, theta)}};
    if (sc.sets.md) j["M_d"] = io::to_json(*sc.sets.md);
    emit(out, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
    return 0;
}

int cmd_run(const ScenarioConfig& cfg, const std::string& out, const std::string& csv)
{
    const RunLog log = simulate_closed_loop(cfg);
    emit(out, [&](std::ostream& os) { os << to_json(log).dump(2) << '\n'; });
    if (!csv.empty()) {
        auto f = open_out(csv);
        write_trajectory_csv(f, log);
    }
    print_summary(log);
    return log.summary.feasible_at_t0 ? 0 : 2;
}

int cmd_portrait(const ScenarioConfig& cfg, const std::vector<std::string>& priors, const std::string& prefix)
{
    for (const auto& p : priors) {
        ScenarioConfig c = cfg;
        c.prior = prior_from_string(p);
        const std::string path = prefix + "_" + p + ".csv";
        auto f = open_out(path);
        const RunLog log = run_phase_portrait(c, &f);
        std::cerr << p << " -> " << path << ": ";
        print_summary(log);
    }
    return 0;
}

int cmd_verify(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    const RunLog log = run_log_from_json(json::parse(in));
    const VerifyReport r = verify_log(log);
    const auto& l = r.lyapunov;
    auto line = [](const char* name, bool ok) { std::cout << (ok ? "ok   " : "FAIL ") << name << '\n'; };
    line("safety", r.safety_ok);
    line("tube monotone", r.tube_monotone);
    line("recursive feasibility", r.recursive_feasibility);
    line("tube containment", l.containment_ok);
    if (l.disturbance_free) {
        line("lyapunov stepwise decay", l.stepwise_ok);
        line("lyapunov decay at lambda_bar", l.decay_ok);
        line("lyapunov geometric bound", l.geometric_ok);
    }
    std::cout << "violations=" << r.violations << " lambda_bar=" << l.lambda_bar << " max_V=" << l.max_V
              << " checked=" << l.checked << '\n';
    return r.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"zonotube: data-driven elastic tube MPC toolkit"};
    app.require_subcommand(1);

    ScenarioFlags id_flags, run_flags, portrait_flags, sweep_flags;
    std::string out, csv;

    auto* identify = app.add_subcommand("identify", "build the model sets for one data batch, JSON out");
    id_flags.attach(*identify, {"controller"});
    identify->add_option("--out", out, "output file (default stdout)");

    auto* run = app.add_subcommand("run", "one closed-loop scenario, RunLog JSON out");
    run_flags.attach(*run);
    run->add_option("--out", out, "RunLog JSON file (default stdout)");
    run->add_option("--csv", csv, "trajectory CSV file");

    std::vector<std::string> priors{"data_prior", "data_only"};
    std::string prefix = "portrait";
    auto* portrait = app.add_subcommand("portrait", "trajectory and tube CSV per prior mode");
    portrait_flags.attach(*portrait, {"prior", "controller"});
    portrait->add_option("--prior", priors, "prior modes to compare")
        ->check(CLI::IsMember({"data_only", "data_prior", "exact", "none"}));
    portrait->add_option("--out", prefix, "file prefix, writes <prefix>_<prior>.csv");

    std::vector<Eigen::Index> Ts{15, 30};
    std::vector<double> alphas{0.1, 0.25, 0.5, 0.75, 1.0};
    std::vector<std::string> methods{"data_prior", "data_only", "tzpc"};
    int runs = 50;
    std::string feasibility = "initial";
    unsigned workers = worker_count();
    auto* sweep = app.add_subcommand("sweep", "feasibility percentage over a (T, alpha) grid, CSV out");
    sweep_flags.attach(*sweep, {"T", "alpha", "prior", "controller"});
    sweep->add_option("--T", Ts, "data lengths");
    sweep->add_option("--alpha", alphas, "disturbance scalings");
    sweep->add_option("--methods", methods, "data_prior data_only exact none tzpc")
        ->check(CLI::IsMember({"data_prior", "data_only", "exact", "none", "tzpc"}));
    sweep->add_option("--runs", runs, "Monte-Carlo runs per grid point")->check(CLI::PositiveNumber);
    sweep->add_option("--feasibility", feasibility, "initial | whole-run")
        ->check(CLI::IsMember({"initial", "whole-run"}));
    sweep->add_option("--workers", workers, "worker threads (default ZONOTUBE_WORKERS or all cores)");
    sweep->add_option("--out", out, "results CSV (default stdout)");

    std::string log_path;
    auto* verify = app.add_subcommand("verify", "invariant checks over a RunLog JSON");
    verify->add_option("log", log_path, "RunLog JSON written by `run`")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*identify) return cmd_identify(id_flags.resolve(), out);
        if (*run) return cmd_run(run_flags.resolve(), out, csv);
        if (*portrait) return cmd_portrait(portrait_flags.resolve(), priors, prefix);
        if (*verify) return cmd_verify(log_path);
        if (*sweep) {
            SweepGrid g;
            g.base = sweep_flags.resolve();
            g.T = Ts;
            g.alpha = alphas;
            g.methods.clear();
            for (const auto& m : methods) g.methods.push_back(method_from_string(m));
            g.runs = runs;
            g.mode = feasibility == "whole-run" ? FeasibilityMode::whole_run : FeasibilityMode::initial;
            const auto rows = run_feasibility_sweep(g, workers, [](const SweepRow& r) {
                std::cerr << to_string(r.method) << " T=" << r.T << " alpha=" << r.alpha << " -> " << r.feasible_pct
                          << "%\n";
            });
            emit(out, [&](std::ostream& os) { write_sweep_csv(os, rows); });
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
