#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "polycouple/harness.hpp"

using namespace polycouple;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string temp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

ExperimentConfig small_heis_sweep(const std::string& out) {
    ExperimentConfig cfg;
    cfg.scenario = Scenario::heisenberg;
    cfg.coupler = CouplerConfig::heisenberg_defaults();
    cfg.replicas = 8;
    cfg.master_seed = 77;
    cfg.output_path = out;
    return cfg;
}

}  // namespace

TEST_CASE("scenario names round trip", "[harness][config]") {
    for (Scenario s : {Scenario::heisenberg, Scenario::monomial, Scenario::full,
                       Scenario::phc_check, Scenario::oracle})
        CHECK(parse_scenario(scenario_string(s)) == s);
    CHECK_THROWS_AS(parse_scenario("nope"), std::invalid_argument);
}

TEST_CASE("experiment config json round trip", "[harness][config]") {
    ExperimentConfig cfg;
    cfg.scenario = Scenario::monomial;
    cfg.index = {2, 0};
    cfg.coupler = CouplerConfig::monomial_defaults(2);
    cfg.coupler.R = 12.0;
    cfg.replicas = 17;
    cfg.replica_offset = 3;
    cfg.master_seed = 99;
    cfg.output_path = "x.csv";
    json j = cfg;
    const ExperimentConfig back = j.get<ExperimentConfig>();
    CHECK(back.scenario == cfg.scenario);
    CHECK(back.index == cfg.index);
    CHECK(back.coupler.R == 12.0);
    CHECK(back.coupler.n == 2);
    CHECK(back.replicas == 17);
    CHECK(back.replica_offset == 3);
    CHECK(back.master_seed == 99);
    CHECK(back.output_path == "x.csv");
    CHECK(back.label() == "monomial_2_0");
}

TEST_CASE("config json applies scenario defaults then overrides", "[harness][config]") {
    {
        const json j = {{"scenario", "monomial"}, {"index", {{"a", 2}, {"b", 0}}}};
        const ExperimentConfig cfg = j.get<ExperimentConfig>();
        CHECK(cfg.coupler.R == 8.0);
        CHECK(cfg.coupler.n == 2);
        CHECK(cfg.label() == "monomial_2_0");
    }
    {
        const json j = {{"scenario", "full"}, {"n", 3}};
        const ExperimentConfig cfg = j.get<ExperimentConfig>();
        CHECK(cfg.coupler.n == 3);
        CHECK(cfg.coupler.max_cycles == 500);
        CHECK(cfg.label() == "full_3");
    }
    {
        const json j = {{"scenario", "heisenberg"}, {"coupler", {{"R", 6.5}}}};
        const ExperimentConfig cfg = j.get<ExperimentConfig>();
        CHECK(cfg.coupler.R == 6.5);
        CHECK(cfg.coupler.max_cycles == 200);
    }
}

TEST_CASE("config validation", "[harness][config]") {
    ExperimentConfig cfg;
    cfg.replicas = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.replicas = 1;
    cfg.replica_offset = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.replica_offset = 0;

    cfg.scenario = Scenario::monomial;
    cfg.index = {0, 1};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.index = {2, 1};
    cfg.coupler.n = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.index = {1, 1};
    CHECK_NOTHROW(cfg.validate());

    cfg.scenario = Scenario::oracle;
    cfg.oracle_name = "unknown";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.oracle_name = "I10_var";
    cfg.oracle_dt = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.oracle_dt = 1e-3;
    CHECK_NOTHROW(cfg.validate());

    cfg.scenario = Scenario::phc_check;
    cfg.phc.sigma1 = BivariatePolyVec(1);
    cfg.phc.sigma2 = BivariatePolyVec(2);
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("normalized starts put unit discrepancy on the target", "[harness][start]") {
    SECTION("first integral") {
        ExperimentConfig cfg;
        const CoupledState st = make_start_state(cfg);
        CHECK(st.d1 == 0.0);
        CHECK(st.w2 == st.w2t);
        CHECK(st.delta_integral({1, 0}) == 1.0);
        CHECK(st.integral({1, 0}) == 0.0);
    }
    SECTION("monomial target") {
        ExperimentConfig cfg;
        cfg.scenario = Scenario::monomial;
        cfg.index = {2, 0};
        cfg.coupler = CouplerConfig::monomial_defaults(2);
        const CoupledState st = make_start_state(cfg);
        CHECK(st.delta_integral({2, 0}) == 1.0);
        CHECK(st.delta_integral({1, 0}) == 0.0);
        CHECK(st.delta_integral({1, 1}) == 0.0);
    }
    SECTION("full scenario targets the top index") {
        ExperimentConfig cfg;
        cfg.scenario = Scenario::full;
        cfg.coupler = CouplerConfig::full_defaults(2);
        const CoupledState st = make_start_state(cfg);
        CHECK(st.delta_integral({1, 1}) == 1.0);
        CHECK(st.delta_integral({2, 0}) == 0.0);
    }
    SECTION("custom start") {
        ExperimentConfig cfg;
        cfg.start.paper_normalized = false;
        cfg.start.w1 = 0.5;
        cfg.start.w1_tilde = -0.25;
        cfg.start.w2 = 0.125;
        cfg.start.w2_tilde = -0.5;
        cfg.start.integrals.push_back({{1, 0}, 2.0, -1.0});
        const CoupledState st = make_start_state(cfg);
        CHECK(st.w1() == 0.5);
        CHECK(st.w1t() == -0.25);
        CHECK(st.w2 == 0.125);
        CHECK(st.w2t == -0.5);
        CHECK(st.integral({1, 0}) == 2.0);
        CHECK(st.delta_integral({1, 0}) == 3.0);
    }
}

TEST_CASE("single runs are deterministic", "[harness][run]") {
    ExperimentConfig cfg;
    cfg.master_seed = 1234;
    const auto [r1, o1] = run_one_detailed(cfg, 5);
    const auto [r2, o2] = run_one_detailed(cfg, 5);
    CHECK(r1.success == r2.success);
    CHECK(r1.coupling_time_physical == r2.coupling_time_physical);
    CHECK(r1.cycles == r2.cycles);
    CHECK(r1.active_time == r2.active_time);
    CHECK(r1.sup_delta_w1 == r2.sup_delta_w1);
    CHECK(r1.seed == r2.seed);
    CHECK(o1.total_steps == o2.total_steps);
    CHECK(r1.scenario == "heisenberg");
    CHECK(r1.replica_id == 5);
    CHECK_FALSE(r1.censored);
}

TEST_CASE("csv rows round trip at full precision", "[harness][io]") {
    RunRecord r;
    r.replica_id = 3;
    r.scenario = "heisenberg";
    r.success = true;
    r.coupling_time_physical = 0.1234567890123456789;
    r.cycles = 17;
    r.active_time = 1e-300;
    r.sup_delta_w1 = 3.0000000000000004;
    r.seed = 18446744073709551615ull;
    r.censored = false;

    const std::string path = temp_path("pc_csv_roundtrip.csv");
    {
        std::ofstream out(path, std::ios::binary);
        out << kCsvHeader << "\n" << csv_row(r) << "\n";
    }
    const std::vector<RunRecord> back = parse_run_csv(path);
    REQUIRE(back.size() == 1);
    CHECK(back[0].replica_id == r.replica_id);
    CHECK(back[0].scenario == r.scenario);
    CHECK(back[0].success == r.success);
    CHECK(back[0].coupling_time_physical == r.coupling_time_physical);
    CHECK(back[0].cycles == r.cycles);
    CHECK(back[0].active_time == r.active_time);
    CHECK(back[0].sup_delta_w1 == r.sup_delta_w1);
    CHECK(back[0].seed == r.seed);
    CHECK(back[0].censored == r.censored);
    std::filesystem::remove(path);
}

TEST_CASE("sweeps write reproducible csv and metadata", "[harness][run]") {
    const std::string out = temp_path("pc_sweep_a.csv");
    ExperimentConfig cfg = small_heis_sweep(out);
    const std::vector<RunRecord> recs = run_experiment(cfg);
    REQUIRE(recs.size() == 8);
    for (long i = 0; i < 8; ++i) CHECK(recs[i].replica_id == i);

    const std::string first = slurp(out);
    REQUIRE(std::filesystem::exists(out + ".meta.json"));
    const json meta = load_json_file(out + ".meta.json");
    CHECK(meta.at("records").get<long>() == 8);
    CHECK(meta.at("code_version").get<std::string>() == kCodeVersion);
    CHECK(meta.contains("config_hash"));
    CHECK(meta.at("config").at("scenario").get<std::string>() == "heisenberg");

    // Second run, same config: byte-identical CSV.
    run_experiment(cfg);
    CHECK(slurp(out) == first);

    // Same again with a forced worker count.
    setenv("POLYCOUPLE_THREADS", "3", 1);
    run_experiment(cfg);
    unsetenv("POLYCOUPLE_THREADS");
    CHECK(slurp(out) == first);

    // Parsed rows match the in-memory records exactly.
    const std::vector<RunRecord> parsed = parse_run_csv(out);
    REQUIRE(parsed.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(parsed[i].coupling_time_physical == recs[i].coupling_time_physical);
        CHECK(parsed[i].seed == recs[i].seed);
        CHECK(parsed[i].success == recs[i].success);
    }
    std::filesystem::remove(out);
    std::filesystem::remove(out + ".meta.json");
}

TEST_CASE("replica offset partitions a sweep", "[harness][run]") {
    ExperimentConfig whole = small_heis_sweep("");
    whole.replicas = 10;
    const std::vector<RunRecord> all = run_experiment(whole);

    ExperimentConfig head = whole;
    head.replicas = 6;
    ExperimentConfig tail = whole;
    tail.replicas = 4;
    tail.replica_offset = 6;
    std::vector<RunRecord> parts = run_experiment(head);
    const std::vector<RunRecord> rest = run_experiment(tail);
    parts.insert(parts.end(), rest.begin(), rest.end());

    REQUIRE(parts.size() == all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(parts[i].replica_id == all[i].replica_id);
        CHECK(parts[i].seed == all[i].seed);
        CHECK(parts[i].coupling_time_physical == all[i].coupling_time_physical);
    }
}

TEST_CASE("faulting replicas surface as censored rows", "[harness][run]") {
    ExperimentConfig cfg;
    cfg.scenario = Scenario::monomial;
    cfg.index = {2, 0};
    cfg.coupler = CouplerConfig::monomial_defaults(2);
    cfg.start.paper_normalized = false;
    cfg.start.w1 = 1e160;  // phase scales overflow to inf
    cfg.start.w1_tilde = 1e160;
    cfg.start.integrals.push_back({{2, 0}, 1.0, 0.0});
    cfg.replicas = 2;
    CHECK_THROWS_AS(run_one(cfg, 0), std::exception);

    const std::vector<RunRecord> recs = run_experiment(cfg);
    REQUIRE(recs.size() == 2);
    for (const RunRecord& r : recs) {
        CHECK(r.censored);
        CHECK_FALSE(r.success);
        CHECK(r.seed != 0);
        CHECK(r.scenario == "monomial_2_0");
    }
}

TEST_CASE("km estimator on a hand-checked sample", "[harness][stats]") {
    const std::vector<double> times{1.0, 2.0, 2.0, 3.0};
    const std::vector<bool> cens{false, false, true, false};
    const std::vector<KmStep> km = kaplan_meier(times, cens);
    REQUIRE(km.size() == 3);
    CHECK(km[0].t == 1.0);
    CHECK(km[0].s == Catch::Approx(0.75));
    CHECK(km[0].se == Catch::Approx(0.75 * std::sqrt(1.0 / 12.0)));
    CHECK(km[1].t == 2.0);
    CHECK(km[1].s == Catch::Approx(0.5));
    CHECK(km[2].t == 3.0);
    CHECK(km[2].s == Catch::Approx(0.0));
    CHECK_THROWS_AS(kaplan_meier({1.0}, {false, false}), std::invalid_argument);
}

TEST_CASE("survival curve on a grid", "[harness][stats]") {
    const std::vector<double> times{1.0, 2.0, 3.0, 4.0};
    const std::vector<bool> none(4, false);
    const std::vector<double> grid{0.5, 1.0, 2.5, 4.0, 9.0};
    const std::vector<SurvivalPoint> s = survival_curve(times, none, grid);
    REQUIRE(s.size() == grid.size());
    CHECK(s[0].s == 1.0);
    CHECK(s[1].s == Catch::Approx(0.75));
    CHECK(s[2].s == Catch::Approx(0.5));
    CHECK(s[3].s == Catch::Approx(0.0));
    CHECK(s[4].s == Catch::Approx(0.0));
    for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i].s <= s[i - 1].s);

    // Censoring an observation can only raise the curve.
    const std::vector<bool> half{false, true, false, false};
    const std::vector<SurvivalPoint> sc = survival_curve(times, half, grid);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(sc[i].s >= s[i].s - 1e-12);

    CHECK_THROWS_AS(survival_curve(times, none, {2.0, 1.0}), std::invalid_argument);
}

TEST_CASE("tail estimators recover a known exponent", "[harness][stats]") {
    const long N = 10000;
    NoiseStream ns(707, 3);
    std::vector<double> t(N);
    std::vector<bool> c(N, false);
    for (long i = 0; i < N; ++i) {
        double u = ns.next_u01();
        if (u < 1e-12) u = 1e-12;
        t[i] = std::pow(u, -2.0);  // survival t^-1/2
    }
    const TailFit hill = estimate_tail(t, c, "hill");
    CHECK(hill.method == "hill");
    CHECK(hill.gamma_hat > 0.45);
    CHECK(hill.gamma_hat < 0.55);
    CHECK(hill.se > 0.0);

    const TailFit lls = estimate_tail(t, c, "loglog_ls");
    CHECK(lls.gamma_hat > 0.35);
    CHECK(lls.gamma_hat < 0.65);
    CHECK(lls.t_hi > lls.t_lo);

    CHECK_THROWS_AS(estimate_tail(t, std::vector<bool>(N - 1, false), "hill"),
                    std::invalid_argument);
    CHECK_THROWS_AS(estimate_tail({1.0, 2.0}, {false, false}, "hill"), std::invalid_argument);
    CHECK_THROWS_AS(estimate_tail(t, c, "magic"), std::invalid_argument);
    const std::vector<double> flat(200, 1.0);
    CHECK_THROWS_AS(estimate_tail(flat, std::vector<bool>(200, false), "hill"),
                    std::runtime_error);
}

TEST_CASE("ks distance", "[harness][stats]") {
    const std::vector<double> a{1.0, 2.0, 3.0};
    CHECK(ks_distance(a, a) == 0.0);
    CHECK(ks_distance(a, {4.0, 5.0, 6.0}) == 1.0);
    CHECK(ks_distance({1.0, 2.0}, {1.5}) == Catch::Approx(0.5));
    CHECK(ks_distance({1.0, 1.0, 2.0}, {1.0, 2.0, 2.0}) == Catch::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(ks_distance({}, a), std::invalid_argument);
}

TEST_CASE("moment oracles", "[harness][oracle]") {
    SECTION("degenerate horizon passes trivially") {
        const OracleReport rep = oracle_moments("I10_var", 0.0, 1e-3, 100, 1);
        CHECK(rep.pass);
        CHECK(rep.estimate == 0.0);
        CHECK(rep.analytic == 0.0);
    }
    SECTION("unknown name throws") {
        CHECK_THROWS_AS(oracle_moments("nope", 1.0, 1e-3, 100, 1), std::invalid_argument);
    }
    SECTION("small smoke run matches the analytic variance") {
        const OracleReport rep = oracle_moments("I10_var", 0.5, 2e-3, 4000, 2024);
        CHECK(rep.analytic == Catch::Approx(0.125));
        CHECK(rep.pass);
    }
}

TEST_CASE("quadratic variation identity oracle", "[harness][oracle]") {
    CHECK_THROWS_AS(oracle_levy_identity(1, 0.0, 1e-3, 3, 100), std::invalid_argument);
    CHECK_THROWS_AS(oracle_levy_identity(1, 1.0, 0.0, 3, 100), std::invalid_argument);
    CHECK_THROWS_AS(oracle_levy_identity(1, 1.0, 1e-3, 0, 100), std::invalid_argument);
    CHECK_THROWS_AS(oracle_levy_identity(1, 1.0, 1e-3, 3, 0), std::invalid_argument);

    const LevyIdentityReport rep = oracle_levy_identity(909, 1.0, 4e-3, 3, 2000);
    REQUIRE(rep.ratios.size() == 3);
    CHECK(rep.ratios_in_band);
    for (double x : rep.ratios) {
        CHECK(x > 1.5);
        CHECK(x < 2.5);
    }
    CHECK(rep.mean_sq_disc.size() == 4);
    // Halving dt halves the mean squared mismatch, so the sequence decreases.
    for (std::size_t i = 1; i < rep.mean_sq_disc.size(); ++i)
        CHECK(rep.mean_sq_disc[i] < rep.mean_sq_disc[i - 1]);
}

TEST_CASE("named oracle dispatch", "[harness][oracle]") {
    ExperimentConfig cfg;
    cfg.scenario = Scenario::oracle;
    cfg.oracle_name = "levy_identity";
    cfg.oracle_t = 0.5;
    cfg.oracle_dt = 4e-3;
    cfg.oracle_N = 500;
    cfg.master_seed = 3;
    const json levy = run_named_oracle(cfg);
    CHECK(levy.contains("ratios"));
    CHECK(levy.contains("ratios_in_band"));

    cfg.oracle_name = "levy_var";
    cfg.oracle_N = 2000;
    const json mom = run_named_oracle(cfg);
    CHECK(mom.contains("estimate"));
    CHECK(mom.contains("pass"));
    CHECK(mom.at("name").get<std::string>() == "levy_var");
}

TEST_CASE("worker count respects the environment", "[harness][run]") {
    setenv("POLYCOUPLE_THREADS", "3", 1);
    CHECK(worker_count(10) == 3);
    CHECK(worker_count(2) == 2);
    setenv("POLYCOUPLE_THREADS", "0", 1);
    CHECK(worker_count(4) >= 1);
    unsetenv("POLYCOUPLE_THREADS");
    CHECK(worker_count(1) == 1);
}
