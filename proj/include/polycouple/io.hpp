#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "couplers.hpp"
#include "monomial.hpp"
#include "polynomial.hpp"

namespace polycouple {

using nlohmann::json;

inline constexpr const char* kCodeVersion = "polycouple 0.1.0";

// %.17g prints the shortest decimal that round-trips a double through strtod.
inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::uint64_t fnv64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

inline void save_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path);
}

inline void to_json(json& j, const MonomialIndex& idx) { j = json{{"a", idx.a}, {"b", idx.b}}; }
inline void from_json(const json& j, MonomialIndex& idx) {
    idx.a = j.at("a").get<int>();
    idx.b = j.at("b").get<int>();
}

// Polynomial vectors serialize as a term list: {"dim_out": d, "terms":
// [{"l": .., "m": .., "coef": [..]}, ...]}.
inline void to_json(json& j, const BivariatePolyVec& p) {
    json terms = json::array();
    for (const auto& [key, coef] : p.terms)
        terms.push_back(json{{"l", key.first}, {"m", key.second}, {"coef", coef}});
    j = json{{"dim_out", p.dim_out}, {"terms", terms}};
}

inline void from_json(const json& j, BivariatePolyVec& p) {
    p = BivariatePolyVec{};
    p.dim_out = j.at("dim_out").get<int>();
    if (p.dim_out < 1) throw std::invalid_argument("polynomial dim_out must be >= 1");
    for (const json& term : j.at("terms")) {
        const int l = term.at("l").get<int>();
        const int m = term.at("m").get<int>();
        const std::vector<double> coef = term.at("coef").get<std::vector<double>>();
        if (static_cast<int>(coef.size()) != p.dim_out)
            throw std::invalid_argument("polynomial term coef length != dim_out");
        p.add_term(l, m, coef);
    }
    p.canonicalize();
}

inline void to_json(json& j, const PhcVerdict& v) {
    j = json{{"holds", v.holds}, {"rank", v.rank}, {"cols", v.cols}};
}

inline void to_json(json& j, const CouplerConfig& cfg) {
    j = json{{"R", cfg.R},
             {"tol_couple", cfg.tol_couple},
             {"tol_inner", cfg.tol_inner},
             {"max_cycles", cfg.max_cycles},
             {"dt", cfg.dt},
             {"t_cap_factor", cfg.t_cap_factor},
             {"theta_cap_factor", cfg.theta_cap_factor},
             {"n", cfg.n}};
}

inline void from_json(const json& j, CouplerConfig& cfg) {
    cfg.R = j.value("R", cfg.R);
    cfg.tol_couple = j.value("tol_couple", cfg.tol_couple);
    cfg.tol_inner = j.value("tol_inner", cfg.tol_inner);
    cfg.max_cycles = j.value("max_cycles", cfg.max_cycles);
    cfg.dt = j.value("dt", cfg.dt);
    cfg.t_cap_factor = j.value("t_cap_factor", cfg.t_cap_factor);
    cfg.theta_cap_factor = j.value("theta_cap_factor", cfg.theta_cap_factor);
    cfg.n = j.value("n", cfg.n);
}

inline void to_json(json& j, const CycleStats& cs) {
    j = json{{"stage", cs.stage},
             {"level", cs.level},
             {"cycle", cs.cycle},
             {"phase_sim", cs.phase_sim},
             {"phase_phys", cs.phase_phys},
             {"delta_in", cs.delta_in},
             {"delta_out", cs.delta_out},
             {"capped", cs.capped},
             {"capped_phase", cs.capped_phase},
             {"active_sim", cs.active_sim},
             {"active_phys", cs.active_phys},
             {"sup_abs_d1", cs.sup_abs_d1},
             {"drive_increment", cs.drive_increment}};
}

inline void to_json(json& j, const CouplingOutcome& out) {
    j = json{{"success", out.success},
             {"coupling_time_physical", out.coupling_time_physical},
             {"cycles", out.cycles},
             {"active_time", out.active_time},
             {"sup_delta_w1", out.sup_delta_w1},
             {"failure", out.failure},
             {"failure_level", out.failure_level},
             {"total_steps", out.total_steps},
             {"recursion_invariant_ok", out.recursion_invariant_ok}};
}

// Input document for the rank test and the reduction: two polynomial
// diffusion coefficient vectors and a base point.
struct PhcProblem {
    BivariatePolyVec sigma1;
    BivariatePolyVec sigma2;
    double w1 = 0.0;
    double w2 = 0.0;
    int n = 1;
    std::vector<double> w3;        // start of the integral-driven coordinates,
    std::vector<double> w3_tilde;  // one entry per output dimension; default 0
};

inline void to_json(json& j, const PhcProblem& p) {
    j = json{{"sigma1", p.sigma1}, {"sigma2", p.sigma2}, {"w1", p.w1},
             {"w2", p.w2},         {"n", p.n},           {"w3", p.w3},
             {"w3_tilde", p.w3_tilde}};
}

inline void from_json(const json& j, PhcProblem& p) {
    j.at("sigma1").get_to(p.sigma1);
    j.at("sigma2").get_to(p.sigma2);
    p.w1 = j.value("w1", 0.0);
    p.w2 = j.value("w2", 0.0);
    p.n = j.value("n", 1);
    p.w3.assign(static_cast<std::size_t>(p.sigma1.dim_out), 0.0);
    p.w3_tilde = p.w3;
    if (j.contains("w3")) j.at("w3").get_to(p.w3);
    if (j.contains("w3_tilde")) j.at("w3_tilde").get_to(p.w3_tilde);
    if (p.n < 1) throw std::invalid_argument("phc problem: n must be >= 1");
}

}  // namespace polycouple
