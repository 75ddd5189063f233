#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "polycouple/harness.hpp"

namespace pc = polycouple;

namespace {

int cmd_check_phc(const std::string& path) {
    const pc::PhcProblem prob = pc::load_json_file(path).get<pc::PhcProblem>();
    const pc::PhcVerdict v =
        pc::check_phc(prob.sigma1, prob.sigma2, prob.w1, prob.w2, prob.n);
    std::cout << pc::json(v).dump() << "\n";
    return v.holds ? 0 : 3;
}

int cmd_reduce(const std::string& path) {
    const pc::PhcProblem prob = pc::load_json_file(path).get<pc::PhcProblem>();
    const pc::Reduction red = pc::reduce_to_monomials(prob.sigma1, prob.sigma2, prob.w1, prob.w2,
                                                      prob.n, prob.w3, prob.w3_tilde);
    pc::json z = pc::json::array();
    for (std::size_t i = 0; i < red.z_index.size(); ++i)
        z.push_back(pc::json{{"index", red.z_index[i]},
                             {"value", red.z3[i]},
                             {"value_tilde", red.z3_tilde[i]}});
    std::cout << pc::json{{"phi", red.phi}, {"psi1", red.psi1}, {"z", z}}.dump() << "\n";
    return 0;
}

struct CoupleFlags {
    std::string config_path;
    std::string scenario = "heisenberg";
    int a = 1, b = 0, n = 0;
    std::uint64_t seed = 1;
    long replica = 0;
    double R = 0.0, dt = 0.0, tol = 0.0, tol_inner = 0.0;
    double t_cap_factor = 0.0, theta_cap_factor = 0.0;
    int max_cycles = 0;
    bool trace = false;
    bool strict = false;
};

pc::ExperimentConfig merge_config(const CLI::App* sc, const CoupleFlags& f) {
    pc::json j;
    if (!f.config_path.empty())
        j = pc::load_json_file(f.config_path);
    else
        j = pc::json{{"scenario", f.scenario}};
    if (sc->count("--scenario")) j["scenario"] = f.scenario;
    if (sc->count("--a") || sc->count("--b")) j["index"] = pc::json{{"a", f.a}, {"b", f.b}};
    if (sc->count("--n")) j["n"] = f.n;
    if (sc->count("--seed")) j["master_seed"] = f.seed;
    if (!j.contains("coupler")) j["coupler"] = pc::json::object();
    if (sc->count("--R")) j["coupler"]["R"] = f.R;
    if (sc->count("--dt")) j["coupler"]["dt"] = f.dt;
    if (sc->count("--tol")) j["coupler"]["tol_couple"] = f.tol;
    if (sc->count("--tol-inner")) j["coupler"]["tol_inner"] = f.tol_inner;
    if (sc->count("--max-cycles")) j["coupler"]["max_cycles"] = f.max_cycles;
    if (sc->count("--t-cap-factor")) j["coupler"]["t_cap_factor"] = f.t_cap_factor;
    if (sc->count("--theta-cap-factor")) j["coupler"]["theta_cap_factor"] = f.theta_cap_factor;
    return j.get<pc::ExperimentConfig>();
}

int cmd_couple(const CLI::App* sc, const CoupleFlags& f) {
    pc::ExperimentConfig cfg = merge_config(sc, f);
    cfg.replicas = 1;
    cfg.output_path.clear();
    cfg.validate();
    pc::TraceSink sink;
    if (f.trace)
        sink = [](const pc::CycleStats& cs) { std::cerr << pc::json(cs).dump() << "\n"; };
    const auto [rec, outcome] = pc::run_one_detailed(cfg, f.replica, sink);
    std::cout << pc::json{{"record", rec}, {"outcome", outcome}}.dump() << "\n";
    return (f.strict && !rec.success) ? 4 : 0;
}

struct SweepFlags {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    long replicas = 0;
    long replica_offset = 0;
    double R = 0.0, dt = 0.0;
};

int cmd_sweep(const CLI::App* sc, const SweepFlags& f) {
    pc::json j = pc::load_json_file(f.config_path);
    if (sc->count("--seed")) j["master_seed"] = f.seed;
    if (sc->count("--replicas")) j["replicas"] = f.replicas;
    if (sc->count("--replica-offset")) j["replica_offset"] = f.replica_offset;
    if (sc->count("--out")) j["output_path"] = f.out;
    if (sc->count("--R") || sc->count("--dt")) {
        if (!j.contains("coupler")) j["coupler"] = pc::json::object();
        if (sc->count("--R")) j["coupler"]["R"] = f.R;
        if (sc->count("--dt")) j["coupler"]["dt"] = f.dt;
    }
    pc::ExperimentConfig cfg = j.get<pc::ExperimentConfig>();
    cfg.validate();
    if (cfg.scenario == pc::Scenario::phc_check || cfg.scenario == pc::Scenario::oracle) {
        pc::json rep;
        if (cfg.scenario == pc::Scenario::phc_check)
            rep = pc::json(pc::check_phc(cfg.phc.sigma1, cfg.phc.sigma2, cfg.phc.w1, cfg.phc.w2,
                                         cfg.phc.n));
        else
            rep = pc::run_named_oracle(cfg);
        if (!cfg.output_path.empty()) pc::save_text_file(cfg.output_path, rep.dump() + "\n");
        std::cout << rep.dump() << "\n";
        return 0;
    }
    const std::vector<pc::RunRecord> records = pc::run_experiment(cfg);
    long successes = 0, censored = 0;
    for (const pc::RunRecord& r : records) {
        successes += r.success ? 1 : 0;
        censored += r.censored ? 1 : 0;
    }
    std::cout << pc::json{{"scenario", cfg.label()},
                          {"records", records.size()},
                          {"successes", successes},
                          {"censored", censored},
                          {"output_path", cfg.output_path}}
                     .dump()
              << "\n";
    return 0;
}

struct OracleFlags {
    std::string name;
    double t = 1.0;
    double dt = 1e-3;
    long N = 100000;
    std::uint64_t seed = 1;
};

int cmd_oracle(const OracleFlags& f) {
    pc::ExperimentConfig cfg;
    cfg.scenario = pc::Scenario::oracle;
    cfg.oracle_name = f.name;
    cfg.oracle_t = f.t;
    cfg.oracle_dt = f.dt;
    cfg.oracle_N = f.N;
    cfg.master_seed = f.seed;
    cfg.validate();
    std::cout << pc::run_named_oracle(cfg).dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "polycouple: couplings of planar Brownian motion with monomial integrals.\n"
        "Rank checks and reductions for polynomial fields, single coupling runs,\n"
        "Monte Carlo sweeps, and analytic-moment oracles."};
    app.require_subcommand(1);

    std::string phc_path;
    CLI::App* sc_phc = app.add_subcommand(
        "check-phc", "Evaluate the bracket-matrix rank condition for a polynomial field pair");
    sc_phc->add_option("config", phc_path, "JSON file with sigma1, sigma2, w1, w2, n")
        ->required();

    std::string red_path;
    CLI::App* sc_red = app.add_subcommand(
        "reduce", "Reduce a polynomial field pair to monomial integral coordinates");
    sc_red
        ->add_option("config", red_path,
                     "JSON file with sigma1, sigma2, w1, w2, n and optional w3, w3_tilde")
        ->required();

    CoupleFlags cf;
    CLI::App* sc_couple =
        app.add_subcommand("couple", "Run a single coupling replica and print JSON outcome");
    sc_couple->add_option("--config", cf.config_path, "experiment config JSON (flags override)");
    sc_couple->add_option("--scenario", cf.scenario, "heisenberg, monomial, or full");
    sc_couple->add_option("--a", cf.a, "monomial index a (monomial scenario)");
    sc_couple->add_option("--b", cf.b, "monomial index b (monomial scenario)");
    sc_couple->add_option("--n", cf.n, "carried integral order n");
    sc_couple->add_option("--seed", cf.seed, "master seed");
    sc_couple->add_option("--replica", cf.replica, "replica id (default 0)");
    sc_couple->add_option("--R", cf.R, "coupling control parameter R");
    sc_couple->add_option("--dt", cf.dt, "step size as a fraction of each phase's natural scale");
    sc_couple->add_option("--tol", cf.tol, "declare-coupled tolerance");
    sc_couple->add_option("--tol-inner", cf.tol_inner, "tolerance of nested sub-couplings");
    sc_couple->add_option("--max-cycles", cf.max_cycles, "cycle limit per coupling loop");
    sc_couple->add_option("--t-cap-factor", cf.t_cap_factor,
                          "phase time cap in natural-scale units");
    sc_couple->add_option("--theta-cap-factor", cf.theta_cap_factor,
                          "far line-hit time cap in natural-scale units");
    sc_couple->add_flag("--trace", cf.trace, "stream per-cycle stats as JSON lines to stderr");
    sc_couple->add_flag("--strict", cf.strict, "exit 4 when the coupling does not succeed");

    SweepFlags sf;
    CLI::App* sc_sweep = app.add_subcommand(
        "sweep", "Run a replica sweep from a JSON config, writing CSV plus metadata sidecar");
    sc_sweep->add_option("--config", sf.config_path, "experiment config JSON")->required();
    sc_sweep->add_option("--seed", sf.seed, "master seed override");
    sc_sweep->add_option("--replicas", sf.replicas, "replica count override");
    sc_sweep->add_option("--replica-offset", sf.replica_offset, "first replica id override");
    sc_sweep->add_option("--R", sf.R, "coupling control parameter override");
    sc_sweep->add_option("--dt", sf.dt, "step size override");
    sc_sweep->add_option("--out", sf.out, "output CSV path override");

    OracleFlags of;
    CLI::App* sc_oracle = app.add_subcommand(
        "oracle", "Run an analytic-moment or identity oracle and print its report");
    sc_oracle
        ->add_option("--name", of.name, "I10_var, I20_var, levy_var, or levy_identity")
        ->required();
    sc_oracle->add_option("--t", of.t, "end time");
    sc_oracle->add_option("--dt", of.dt, "step size (coarsest level for levy_identity)");
    sc_oracle->add_option("--N", of.N, "number of Monte Carlo paths");
    sc_oracle->add_option("--seed", of.seed, "master seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << pc::json{{"error", e.what()}}.dump() << "\n";
        return 2;
    }

    try {
        if (sc_phc->parsed()) return cmd_check_phc(phc_path);
        if (sc_red->parsed()) return cmd_reduce(red_path);
        if (sc_couple->parsed()) return cmd_couple(sc_couple, cf);
        if (sc_sweep->parsed()) return cmd_sweep(sc_sweep, sf);
        if (sc_oracle->parsed()) return cmd_oracle(of);
    } catch (const pc::phc_violation& e) {
        std::cerr << pc::json{{"error", e.what()}}.dump() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << pc::json{{"error", e.what()}}.dump() << "\n";
        return 2;
    }
    return 2;
}
