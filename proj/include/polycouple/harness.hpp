#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "couplers.hpp"
#include "io.hpp"
#include "polynomial.hpp"
#include "rng.hpp"
#include "sdecore.hpp"

namespace polycouple {

enum class Scenario { heisenberg, monomial, full, phc_check, oracle };

inline Scenario parse_scenario(const std::string& s) {
    if (s == "heisenberg") return Scenario::heisenberg;
    if (s == "monomial") return Scenario::monomial;
    if (s == "full") return Scenario::full;
    if (s == "phc_check") return Scenario::phc_check;
    if (s == "oracle") return Scenario::oracle;
    throw std::invalid_argument("unknown scenario: " + s);
}

inline std::string scenario_string(Scenario s) {
    switch (s) {
        case Scenario::heisenberg: return "heisenberg";
        case Scenario::monomial: return "monomial";
        case Scenario::full: return "full";
        case Scenario::phc_check: return "phc_check";
        case Scenario::oracle: return "oracle";
    }
    return "?";
}

// Starting points of a coupled run. The default "paper-normalized" start puts
// both copies at the origin with unit discrepancy in the scenario's target
// integral, which is the normalization every cycle analysis assumes.
struct StartSpec {
    bool paper_normalized = true;
    double w1 = 0.0, w1_tilde = 0.0;
    double w2 = 0.0, w2_tilde = 0.0;
    struct IntegralStart {
        MonomialIndex index;
        double value = 0.0;
        double value_tilde = 0.0;
    };
    std::vector<IntegralStart> integrals;
};

inline void to_json(json& j, const StartSpec& s) {
    if (s.paper_normalized) {
        j = "paper-normalized";
        return;
    }
    json arr = json::array();
    for (const auto& is : s.integrals)
        arr.push_back(json{{"index", is.index},
                           {"value", is.value},
                           {"value_tilde", is.value_tilde}});
    j = json{{"w1", s.w1},
             {"w1_tilde", s.w1_tilde},
             {"w2", s.w2},
             {"w2_tilde", s.w2_tilde},
             {"integrals", arr}};
}

inline void from_json(const json& j, StartSpec& s) {
    s = StartSpec{};
    if (j.is_string()) {
        if (j.get<std::string>() != "paper-normalized")
            throw std::invalid_argument("start: expected \"paper-normalized\" or an object");
        return;
    }
    s.paper_normalized = false;
    s.w1 = j.value("w1", 0.0);
    s.w1_tilde = j.value("w1_tilde", 0.0);
    s.w2 = j.value("w2", 0.0);
    s.w2_tilde = j.value("w2_tilde", 0.0);
    if (j.contains("integrals"))
        for (const json& e : j.at("integrals")) {
            StartSpec::IntegralStart is;
            e.at("index").get_to(is.index);
            is.value = e.value("value", 0.0);
            is.value_tilde = e.value("value_tilde", 0.0);
            s.integrals.push_back(is);
        }
}

struct ExperimentConfig {
    Scenario scenario = Scenario::heisenberg;
    MonomialIndex index{1, 0};  // monomial scenario target
    std::string oracle_name;    // oracle scenario
    CouplerConfig coupler = CouplerConfig::heisenberg_defaults();
    long replicas = 1;
    long replica_offset = 0;
    std::uint64_t master_seed = 1;
    std::string output_path;
    StartSpec start;
    PhcProblem phc;
    double oracle_t = 1.0;
    double oracle_dt = 1e-3;
    long oracle_N = 100000;

    std::string label() const {
        switch (scenario) {
            case Scenario::heisenberg: return "heisenberg";
            case Scenario::monomial:
                return "monomial_" + std::to_string(index.a) + "_" + std::to_string(index.b);
            case Scenario::full: return "full_" + std::to_string(coupler.n);
            case Scenario::phc_check: return "phc_check";
            case Scenario::oracle: return "oracle_" + oracle_name;
        }
        return "?";
    }

    void validate() const {
        if (replicas < 1) throw std::invalid_argument("config: replicas must be >= 1");
        if (replica_offset < 0) throw std::invalid_argument("config: replica_offset must be >= 0");
        switch (scenario) {
            case Scenario::heisenberg:
            case Scenario::full: coupler.validate(); break;
            case Scenario::monomial:
                coupler.validate();
                if (index.a < 1 || index.a + index.b > coupler.n)
                    throw std::invalid_argument("config: monomial index " + to_string(index) +
                                                " outside coupled range at n=" +
                                                std::to_string(coupler.n));
                break;
            case Scenario::phc_check:
                if (phc.sigma1.dim_out != phc.sigma2.dim_out)
                    throw std::invalid_argument("config: sigma1/sigma2 dimension mismatch");
                break;
            case Scenario::oracle:
                if (oracle_name != "I10_var" && oracle_name != "I20_var" &&
                    oracle_name != "levy_var" && oracle_name != "levy_identity")
                    throw std::invalid_argument("config: unknown oracle name: " + oracle_name);
                if (!(oracle_t >= 0.0) || !(oracle_dt > 0.0) || oracle_N < 1)
                    throw std::invalid_argument("config: bad oracle parameters");
                break;
        }
    }
};

inline void to_json(json& j, const ExperimentConfig& cfg) {
    j = json{{"scenario", scenario_string(cfg.scenario)},
             {"coupler", cfg.coupler},
             {"replicas", cfg.replicas},
             {"replica_offset", cfg.replica_offset},
             {"master_seed", cfg.master_seed},
             {"output_path", cfg.output_path},
             {"start", cfg.start}};
    if (cfg.scenario == Scenario::monomial) j["index"] = cfg.index;
    if (cfg.scenario == Scenario::oracle) {
        j["oracle_name"] = cfg.oracle_name;
        j["oracle_t"] = cfg.oracle_t;
        j["oracle_dt"] = cfg.oracle_dt;
        j["oracle_N"] = cfg.oracle_N;
    }
    if (cfg.scenario == Scenario::phc_check) j["phc"] = cfg.phc;
}

inline void from_json(const json& j, ExperimentConfig& cfg) {
    cfg = ExperimentConfig{};
    cfg.scenario = parse_scenario(j.at("scenario").get<std::string>());
    if (j.contains("index")) j.at("index").get_to(cfg.index);
    switch (cfg.scenario) {
        case Scenario::heisenberg: cfg.coupler = CouplerConfig::heisenberg_defaults(); break;
        case Scenario::monomial:
            cfg.coupler = CouplerConfig::monomial_defaults(
                std::max(1, cfg.index.a + cfg.index.b));
            break;
        case Scenario::full: cfg.coupler = CouplerConfig::full_defaults(1); break;
        default: break;
    }
    if (j.contains("coupler")) from_json(j.at("coupler"), cfg.coupler);
    if (j.contains("n")) cfg.coupler.n = j.at("n").get<int>();
    cfg.replicas = j.value("replicas", cfg.replicas);
    cfg.replica_offset = j.value("replica_offset", cfg.replica_offset);
    cfg.master_seed = j.value("master_seed", cfg.master_seed);
    cfg.output_path = j.value("output_path", cfg.output_path);
    if (j.contains("start")) from_json(j.at("start"), cfg.start);
    cfg.oracle_name = j.value("oracle_name", cfg.oracle_name);
    cfg.oracle_t = j.value("oracle_t", cfg.oracle_t);
    cfg.oracle_dt = j.value("oracle_dt", cfg.oracle_dt);
    cfg.oracle_N = j.value("oracle_N", cfg.oracle_N);
    if (j.contains("phc")) j.at("phc").get_to(cfg.phc);
}

inline CoupledState make_start_state(const ExperimentConfig& cfg) {
    const int n = cfg.coupler.n;
    CoupledState st = make_state(n);
    if (cfg.start.paper_normalized) {
        MonomialIndex target{1, 0};
        switch (cfg.scenario) {
            case Scenario::heisenberg: target = {1, 0}; break;
            case Scenario::monomial: target = cfg.index; break;
            case Scenario::full: {
                for (const MonomialIndex& idx : coupled_indices(n))
                    if (order_key(idx, n) > order_key(target, n)) target = idx;
                break;
            }
            default:
                throw std::invalid_argument("make_start_state: scenario has no coupled runs");
        }
        st.set_integral_pair(target, 0.0, -1.0);
        return st;
    }
    st.set_w1_pair(cfg.start.w1, cfg.start.w1_tilde);
    st.w2 = cfg.start.w2;
    st.w2t = cfg.start.w2_tilde;
    for (const auto& is : cfg.start.integrals)
        st.set_integral_pair(is.index, is.value, is.value_tilde);
    return st;
}

struct RunRecord {
    long replica_id = 0;
    std::string scenario;
    bool success = false;
    double coupling_time_physical = 0.0;
    long cycles = 0;
    double active_time = 0.0;
    double sup_delta_w1 = 0.0;
    std::uint64_t seed = 0;
    bool censored = false;
};

inline constexpr const char* kCsvHeader =
    "replica_id,scenario,success,coupling_time_physical,cycles,active_time,sup_delta_w1,seed,"
    "censored";

inline std::string csv_row(const RunRecord& r) {
    std::ostringstream os;
    os << r.replica_id << ',' << r.scenario << ',' << (r.success ? 1 : 0) << ','
       << format_double(r.coupling_time_physical) << ',' << r.cycles << ','
       << format_double(r.active_time) << ',' << format_double(r.sup_delta_w1) << ',' << r.seed
       << ',' << (r.censored ? 1 : 0);
    return os.str();
}

inline std::vector<RunRecord> parse_run_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader)
        throw std::runtime_error("bad CSV header in " + path);
    std::vector<RunRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::size_t pos = 0;
        while (true) {
            const std::size_t c = line.find(',', pos);
            f.push_back(line.substr(pos, c == std::string::npos ? c : c - pos));
            if (c == std::string::npos) break;
            pos = c + 1;
        }
        if (f.size() != 9) throw std::runtime_error("bad CSV row in " + path + ": " + line);
        RunRecord r;
        r.replica_id = std::strtol(f[0].c_str(), nullptr, 10);
        r.scenario = f[1];
        r.success = f[2] == "1";
        r.coupling_time_physical = std::strtod(f[3].c_str(), nullptr);
        r.cycles = std::strtol(f[4].c_str(), nullptr, 10);
        r.active_time = std::strtod(f[5].c_str(), nullptr);
        r.sup_delta_w1 = std::strtod(f[6].c_str(), nullptr);
        r.seed = std::strtoull(f[7].c_str(), nullptr, 10);
        r.censored = f[8] == "1";
        out.push_back(std::move(r));
    }
    return out;
}

inline void to_json(json& j, const RunRecord& r) {
    j = json{{"replica_id", r.replica_id},
             {"scenario", r.scenario},
             {"success", r.success},
             {"coupling_time_physical", r.coupling_time_physical},
             {"cycles", r.cycles},
             {"active_time", r.active_time},
             {"sup_delta_w1", r.sup_delta_w1},
             {"seed", r.seed},
             {"censored", r.censored}};
}

inline std::pair<RunRecord, CouplingOutcome> run_one_detailed(const ExperimentConfig& cfg,
                                                              long replica_id,
                                                              const TraceSink& sink = {}) {
    NoiseStream noise(cfg.master_seed, static_cast<std::uint64_t>(replica_id));
    RunRecord rec;
    rec.replica_id = replica_id;
    rec.scenario = cfg.label();
    rec.seed = noise.key;
    const CoupledState st = make_start_state(cfg);
    CouplingOutcome out;
    switch (cfg.scenario) {
        case Scenario::heisenberg: out = heisenberg_couple(st, cfg.coupler, noise, sink); break;
        case Scenario::monomial:
            out = monomial_couple(st, cfg.index, cfg.coupler, noise, sink);
            break;
        case Scenario::full: out = full_couple(st, cfg.coupler, noise, sink); break;
        default: throw std::invalid_argument("run_one: scenario has no replica runs");
    }
    rec.success = out.success;
    rec.coupling_time_physical = out.coupling_time_physical;
    rec.cycles = out.cycles;
    rec.active_time = out.active_time;
    rec.sup_delta_w1 = out.sup_delta_w1;
    rec.censored = !out.success;
    return {rec, out};
}

inline RunRecord run_one(const ExperimentConfig& cfg, long replica_id,
                         const TraceSink& sink = {}) {
    return run_one_detailed(cfg, replica_id, sink).first;
}

inline int worker_count(long replicas) {
    long w = 0;
    if (const char* env = std::getenv("POLYCOUPLE_THREADS"); env && *env)
        w = std::strtol(env, nullptr, 10);
    if (w <= 0) w = static_cast<long>(std::thread::hardware_concurrency());
    if (w <= 0) w = 1;
    return static_cast<int>(std::min(w, std::max<long>(replicas, 1)));
}

json run_named_oracle(const ExperimentConfig& cfg);

// Runs every replica of the configured scenario, writes the CSV and its
// metadata sidecar when output_path is set, and returns the records in
// replica order regardless of worker scheduling. A replica that throws is
// recorded as a censored failure row; the sweep always completes.
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<RunRecord> records;
    if (cfg.scenario == Scenario::phc_check) {
        const PhcVerdict v =
            check_phc(cfg.phc.sigma1, cfg.phc.sigma2, cfg.phc.w1, cfg.phc.w2, cfg.phc.n);
        if (!cfg.output_path.empty()) save_text_file(cfg.output_path, json(v).dump() + "\n");
        return records;
    }
    if (cfg.scenario == Scenario::oracle) {
        const json rep = run_named_oracle(cfg);
        if (!cfg.output_path.empty()) save_text_file(cfg.output_path, rep.dump() + "\n");
        return records;
    }
    records.resize(static_cast<std::size_t>(cfg.replicas));
    std::atomic<long> next{0};
    const auto work = [&records, &cfg, &next] {
        for (;;) {
            const long i = next.fetch_add(1);
            if (i >= cfg.replicas) return;
            const long rid = cfg.replica_offset + i;
            try {
                records[static_cast<std::size_t>(i)] = run_one(cfg, rid);
            } catch (const std::exception&) {
                RunRecord rec;
                rec.replica_id = rid;
                rec.scenario = cfg.label();
                rec.seed = NoiseStream(cfg.master_seed, static_cast<std::uint64_t>(rid)).key;
                rec.censored = true;
                records[static_cast<std::size_t>(i)] = rec;
            }
        }
    };
    const int workers = worker_count(cfg.replicas);
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int i = 0; i < workers; ++i) pool.emplace_back(work);
        for (std::thread& th : pool) th.join();
    }
    if (!cfg.output_path.empty()) {
        std::ostringstream csv;
        csv << kCsvHeader << '\n';
        for (const RunRecord& r : records) csv << csv_row(r) << '\n';
        save_text_file(cfg.output_path, csv.str());
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const json cfg_json = cfg;
        const json meta = {{"config", cfg_json},
                           {"config_hash", hex64(fnv64(cfg_json.dump()))},
                           {"code_version", kCodeVersion},
                           {"wall_time_seconds", wall},
                           {"records", records.size()}};
        save_text_file(cfg.output_path + ".meta.json", meta.dump(2) + "\n");
    }
    return records;
}

// Product-limit survival estimate. Censored observations leave the risk set
// without an event, so they only raise the curve; ties process events first.
struct KmStep {
    double t = 0.0;
    double s = 1.0;
    double se = 0.0;
};

inline std::vector<KmStep> kaplan_meier(const std::vector<double>& times,
                                        const std::vector<bool>& censored) {
    if (times.size() != censored.size())
        throw std::invalid_argument("kaplan_meier: length mismatch");
    std::vector<std::size_t> order(times.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (times[x] != times[y]) return times[x] < times[y];
        return censored[x] < censored[y];
    });
    std::vector<KmStep> out;
    double s = 1.0, gw = 0.0;
    std::size_t at_risk = times.size();
    std::size_t i = 0;
    while (i < order.size()) {
        const double t = times[order[i]];
        std::size_t d = 0, c = 0;
        while (i < order.size() && times[order[i]] == t) {
            (censored[order[i]] ? c : d) += 1;
            ++i;
        }
        if (d > 0) {
            const double nd = static_cast<double>(at_risk);
            s *= 1.0 - static_cast<double>(d) / nd;
            if (at_risk > d) gw += static_cast<double>(d) / (nd * (nd - static_cast<double>(d)));
            out.push_back({t, s, s * std::sqrt(gw)});
        }
        at_risk -= d + c;
    }
    return out;
}

struct SurvivalPoint {
    double t = 0.0;
    double s = 1.0;
    double se = 0.0;
};

inline std::vector<SurvivalPoint> survival_curve(const std::vector<double>& times,
                                                 const std::vector<bool>& censored,
                                                 const std::vector<double>& grid) {
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (grid[i] < grid[i - 1])
            throw std::invalid_argument("survival_curve: grid must be sorted ascending");
    const std::vector<KmStep> km = kaplan_meier(times, censored);
    std::vector<SurvivalPoint> out;
    out.reserve(grid.size());
    std::size_t j = 0;
    double s = 1.0, se = 0.0;
    for (const double t : grid) {
        while (j < km.size() && km[j].t <= t) {
            s = km[j].s;
            se = km[j].se;
            ++j;
        }
        out.push_back({t, s, se});
    }
    return out;
}

struct TailFit {
    double gamma_hat = 0.0;
    double se = 0.0;
    double t_lo = 0.0;
    double t_hi = 0.0;
    std::string method;
};

inline void to_json(json& j, const TailFit& f) {
    j = json{{"gamma_hat", f.gamma_hat},
             {"se", f.se},
             {"t_lo", f.t_lo},
             {"t_hi", f.t_hi},
             {"method", f.method}};
}

// Survival-exponent estimate gamma for P(tau > t) ~ t^(-gamma). loglog_ls
// fits log-survival against log-time over the top decade of event times
// (widened to keep at least 30 events); hill averages log-excesses over the
// top 10% order statistics. Censored times enter the product-limit curve as
// censorings and enter hill as plain values (they are genuine exceedances of
// every lower threshold).
inline TailFit estimate_tail(const std::vector<double>& times, const std::vector<bool>& censored,
                             const std::string& method = "loglog_ls") {
    if (times.size() != censored.size())
        throw std::invalid_argument("estimate_tail: length mismatch");
    if (times.size() < 100) throw std::invalid_argument("estimate_tail: need >= 100 samples");
    const auto [mn_it, mx_it] = std::minmax_element(times.begin(), times.end());
    if (*mn_it == *mx_it) throw std::runtime_error("degenerate sample");
    TailFit fit;
    fit.method = method;
    if (method == "hill") {
        std::vector<double> v = times;
        std::sort(v.begin(), v.end());
        const std::size_t k = std::max<std::size_t>(2, v.size() / 10);
        const double threshold = v[v.size() - 1 - k];
        if (!(threshold > 0.0)) throw std::runtime_error("too few positive exceedances in range");
        double mean_log = 0.0;
        for (std::size_t i = v.size() - k; i < v.size(); ++i)
            mean_log += std::log(v[i] / threshold);
        mean_log /= static_cast<double>(k);
        if (!(mean_log > 0.0)) throw std::runtime_error("degenerate sample");
        fit.gamma_hat = 1.0 / mean_log;
        fit.se = fit.gamma_hat / std::sqrt(static_cast<double>(k));
        fit.t_lo = threshold;
        fit.t_hi = v.back();
        return fit;
    }
    if (method != "loglog_ls") throw std::invalid_argument("estimate_tail: unknown method");
    const std::vector<KmStep> km = kaplan_meier(times, censored);
    std::vector<std::pair<double, double>> pts;  // (log t, log S)
    for (const KmStep& step : km)
        if (step.t > 0.0 && step.s > 0.0) pts.emplace_back(std::log(step.t), std::log(step.s));
    if (pts.size() < 30) throw std::runtime_error("too few exceedances in range");
    const double log_hi = pts.back().first;
    double log_lo = log_hi - std::log(10.0);
    std::size_t first = pts.size();
    for (std::size_t i = 0; i < pts.size(); ++i)
        if (pts[i].first >= log_lo) {
            first = i;
            break;
        }
    if (pts.size() - first < 30) first = pts.size() - 30;
    const std::size_t m = pts.size() - first;
    double sx = 0, sy = 0;
    for (std::size_t i = first; i < pts.size(); ++i) {
        sx += pts[i].first;
        sy += pts[i].second;
    }
    const double mx = sx / static_cast<double>(m), my = sy / static_cast<double>(m);
    double sxx = 0, sxy = 0;
    for (std::size_t i = first; i < pts.size(); ++i) {
        sxx += (pts[i].first - mx) * (pts[i].first - mx);
        sxy += (pts[i].first - mx) * (pts[i].second - my);
    }
    if (!(sxx > 0.0)) throw std::runtime_error("degenerate sample");
    const double slope = sxy / sxx;
    double ssr = 0;
    for (std::size_t i = first; i < pts.size(); ++i) {
        const double r = pts[i].second - my - slope * (pts[i].first - mx);
        ssr += r * r;
    }
    fit.gamma_hat = -slope;
    fit.se = std::sqrt(ssr / (static_cast<double>(m) - 2.0) / sxx);
    fit.t_lo = std::exp(pts[first].first);
    fit.t_hi = std::exp(log_hi);
    return fit;
}

// Two-sample Kolmogorov-Smirnov distance. All observations tied at one value
// advance together before the gap is measured, so matched samples (ties
// across the two sets) compare their CDFs only at completed jumps.
inline double ks_distance(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_distance: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() || j < b.size()) {
        const double x = (i < a.size() && (j >= b.size() || a[i] <= b[j])) ? a[i] : b[j];
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

struct OracleReport {
    std::string name;
    double analytic = 0.0;
    double estimate = 0.0;
    double se = 0.0;
    bool pass = false;
    long N = 0;
    double t = 0.0;
    double dt = 0.0;
};

inline void to_json(json& j, const OracleReport& r) {
    j = json{{"name", r.name}, {"analytic", r.analytic}, {"estimate", r.estimate},
             {"se", r.se},     {"pass", r.pass},         {"N", r.N},
             {"t", r.t},       {"dt", r.dt}};
}

// Monte Carlo second moments of single-path integrals from the origin against
// their closed forms: E I(1,0)^2 = t^2/2, E I(2,0)^2 = t^3, and the Brownian
// area variance t^2. PASS iff within 3 standard errors.
inline OracleReport oracle_moments(const std::string& name, double t, double dt, long N,
                                   std::uint64_t seed) {
    int which = -1;
    double analytic = 0.0;
    if (name == "I10_var") {
        which = 0;
        analytic = t * t / 2.0;
    } else if (name == "I20_var") {
        which = 1;
        analytic = t * t * t;
    } else if (name == "levy_var") {
        which = 2;
        analytic = t * t;
    } else {
        throw std::invalid_argument("oracle_moments: unknown oracle name: " + name);
    }
    const long steps = std::lround(t / dt);
    const double sq = std::sqrt(dt);
    double sum = 0.0, sum_sq = 0.0;
    for (long r = 0; r < N; ++r) {
        NoiseStream noise(seed, static_cast<std::uint64_t>(r));
        double w1 = 0.0, w2 = 0.0, acc = 0.0, acc2 = 0.0;
        for (long s = 0; s < steps; ++s) {
            double z1, z2;
            noise.next_normal_pair(z1, z2);
            const double xi1 = z1 * sq, xi2 = z2 * sq;
            if (which == 0)
                acc += w1 * xi2;
            else if (which == 1)
                acc += w1 * w1 * xi2;
            else {
                acc += w1 * xi2;
                acc2 += w2 * xi1;
            }
            w1 += xi1;
            w2 += xi2;
        }
        const double v = which == 2 ? acc - acc2 : acc;
        sum += v * v;
        sum_sq += v * v * v * v;
    }
    OracleReport rep;
    rep.name = name;
    rep.analytic = analytic;
    rep.N = N;
    rep.t = t;
    rep.dt = dt;
    rep.estimate = sum / static_cast<double>(N);
    const double var = std::max(0.0, sum_sq / static_cast<double>(N) - rep.estimate * rep.estimate);
    rep.se = std::sqrt(var / static_cast<double>(N));
    rep.pass = std::fabs(rep.estimate - rep.analytic) <= 3.0 * rep.se;
    return rep;
}

struct LevyIdentityReport {
    double t = 1.0;
    long N = 0;
    std::vector<double> dts;
    std::vector<double> mean_sq_disc;  // E[ (max_s |residual(s)|)^2 ] per dt
    std::vector<double> max_disc;      // worst path residual per dt
    std::vector<double> ratios;        // mean_sq_disc[h] / mean_sq_disc[h+1]
    bool ratios_in_band = false;       // all ratios within [1.5, 2.5]
};

inline void to_json(json& j, const LevyIdentityReport& r) {
    j = json{{"t", r.t},
             {"N", r.N},
             {"dts", r.dts},
             {"mean_sq_disc", r.mean_sq_disc},
             {"max_disc", r.max_disc},
             {"ratios", r.ratios},
             {"ratios_in_band", r.ratios_in_band}};
}

// The Brownian area computed directly (two Euler sums) and via the product
// identity 2*I(1,0) - (W1 W2 - W1(0) W2(0)) differ per step by exactly the
// product-rule residual -xi1*xi2, so the mean squared maximal pathwise
// discrepancy is proportional to dt and halves under dt halving.
inline LevyIdentityReport oracle_levy_identity(std::uint64_t seed, double t, double dt0,
                                               int halvings, long N) {
    if (!(dt0 > 0.0) || halvings < 0 || N < 1)
        throw std::invalid_argument("oracle_levy_identity: bad parameters");
    LevyIdentityReport rep;
    rep.t = t;
    rep.N = N;
    for (int h = 0; h <= halvings; ++h) {
        const double dt = dt0 / static_cast<double>(1 << h);
        const long steps = std::lround(t / dt);
        const double sq = std::sqrt(dt);
        double acc = 0.0, worst = 0.0;
        for (long r = 0; r < N; ++r) {
            NoiseStream noise(seed, static_cast<std::uint64_t>(h) * 0x100000001ull +
                                        static_cast<std::uint64_t>(r));
            double w1 = 0.0, w2 = 0.0, i10 = 0.0, s21 = 0.0, peak = 0.0;
            for (long s = 0; s < steps; ++s) {
                double z1, z2;
                noise.next_normal_pair(z1, z2);
                const double xi1 = z1 * sq, xi2 = z2 * sq;
                i10 += w1 * xi2;
                s21 += w2 * xi1;
                w1 += xi1;
                w2 += xi2;
                peak = std::max(peak, std::fabs(i10 + s21 - w1 * w2));
            }
            acc += peak * peak;
            worst = std::max(worst, peak);
        }
        rep.dts.push_back(dt);
        rep.mean_sq_disc.push_back(acc / static_cast<double>(N));
        rep.max_disc.push_back(worst);
    }
    rep.ratios_in_band = true;
    for (std::size_t h = 0; h + 1 < rep.mean_sq_disc.size(); ++h) {
        const double ratio = rep.mean_sq_disc[h] / rep.mean_sq_disc[h + 1];
        rep.ratios.push_back(ratio);
        if (!(ratio >= 1.5 && ratio <= 2.5)) rep.ratios_in_band = false;
    }
    return rep;
}

inline json run_named_oracle(const ExperimentConfig& cfg) {
    if (cfg.oracle_name == "levy_identity")
        return json(oracle_levy_identity(cfg.master_seed, cfg.oracle_t, cfg.oracle_dt, 3,
                                         cfg.oracle_N));
    return json(
        oracle_moments(cfg.oracle_name, cfg.oracle_t, cfg.oracle_dt, cfg.oracle_N,
                       cfg.master_seed));
}

}  // namespace polycouple
