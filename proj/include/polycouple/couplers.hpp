#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "monomial.hpp"
#include "rng.hpp"
#include "sdecore.hpp"

namespace polycouple {

// Knobs shared by every coupler. dt and t_cap_factor are dimensionless: each
// phase runs at step size dt * (its natural time scale) and is abandoned after
// t_cap_factor natural units. The natural scale of a phase is the squared
// trigger distance over the quadratic-variation rate of its trigger
// coordinate, so cycles stay resolved by ~1/dt steps across the geometric
// range of cycle sizes; past one natural unit the step doubles with elapsed
// time, so hitting tails cost O(log cap) steps and a large cap is nearly free.
// theta_cap_factor covers the far line hit, whose natural scale is R^(4n+2).
// tol_couple is the declare-coupled threshold on the carried discrepancies.
// Couplings nested inside full_couple coalesce at tol_inner * tol_couple so
// their truncation errors stay below the top-level threshold.
struct CouplerConfig {
    double R = 4.0;
    double tol_couple = 1e-8;
    double tol_inner = 1e-3;
    int max_cycles = 200;
    double dt = 2e-3;
    double t_cap_factor = 1e12;
    double theta_cap_factor = 1e12;
    int n = 1;

    void validate() const {
        if (!(R > 1.0)) throw std::invalid_argument("CouplerConfig: R must be > 1");
        if (!(tol_couple > 0.0) || !(tol_inner > 0.0))
            throw std::invalid_argument("CouplerConfig: tolerances must be positive");
        if (max_cycles < 1) throw std::invalid_argument("CouplerConfig: max_cycles must be >= 1");
        if (!(dt > 0.0)) throw std::invalid_argument("CouplerConfig: dt must be positive");
        if (!(t_cap_factor > 0.0) || !(theta_cap_factor > 0.0))
            throw std::invalid_argument("CouplerConfig: cap factors must be positive");
        if (n < 1 || n > kMaxN)
            throw std::invalid_argument("CouplerConfig: n must be in [1," + std::to_string(kMaxN) +
                                        "]");
    }

    static CouplerConfig heisenberg_defaults() {
        CouplerConfig cfg;
        cfg.R = 4.0;
        cfg.n = 1;
        return cfg;
    }
    static CouplerConfig monomial_defaults(int n) {
        CouplerConfig cfg;
        cfg.R = 8.0;
        cfg.n = n;
        return cfg;
    }
    static CouplerConfig full_defaults(int n) {
        CouplerConfig cfg;
        cfg.R = 8.0;
        cfg.n = n;
        cfg.max_cycles = 500;
        return cfg;
    }
};

struct CycleStats {
    std::string stage;  // "heisenberg", "monomial(a,b)", "outer(a,b)"
    int level = 0;      // recursion depth, 0 at the top
    int cycle = 0;      // 1-based within its loop
    std::vector<double> phase_sim;
    std::vector<double> phase_phys;
    double delta_in = 0.0;
    double delta_out = 0.0;
    bool capped = false;
    int capped_phase = -1;
    double active_sim = 0.0;
    double active_phys = 0.0;
    double sup_abs_d1 = 0.0;      // cycle-local coordinates
    double drive_increment = 0.0;  // signed change of the target dI over the
                                   // synchronous targeting phase (monomial)
};

struct CouplingOutcome {
    bool success = false;
    double coupling_time_physical = 0.0;
    long cycles = 0;
    double active_time = 0.0;
    double sup_delta_w1 = 0.0;
    std::string failure;  // "", "t_cap", "max_cycles", "fault", "precondition"
    int failure_level = -1;
    long total_steps = 0;
    bool recursion_invariant_ok = true;
};

using TraceSink = std::function<void(const CycleStats&)>;

namespace detail {

// Per-run bookkeeping threaded through nesting levels.
struct RunContext {
    double sup_d1 = 0.0;
    double active_phys = 0.0;
    long cycles = 0;
    long steps = 0;
    bool invariant_ok = true;
    const TraceSink* sink = nullptr;

    void absorb_phase(const PhaseResult& res) {
        sup_d1 = std::max(sup_d1, res.max_abs_d1);
        steps += res.steps;
    }
    void emit(const CycleStats& cs) const {
        if (sink && *sink) (*sink)(cs);
    }
};

inline double pow_int(double x, int k) {
    double out = 1.0;
    for (int i = 0; i < k; ++i) out *= x;
    return out;
}

inline void require_coupled_base(const CoupledState& st, const char* who) {
    if (st.d1 != 0.0 || st.w2 != st.w2t)
        throw std::invalid_argument(std::string(who) +
                                    ": requires dW1 == 0 and shared W2 at entry");
}

inline int sign_of(double x) { return x < 0.0 ? -1 : 1; }

// Slope of the far line used by the (a,b) cycle: R for a = 1, one factor R^2
// lower per extra unit of a. On a shared line the leak an (a,b) cycle leaves
// in a same-degree index (k,l) and the leak the (k,l) cycles push back have
// product exactly 1 at any R; separating the lines by a makes that product
// R^(-2(k-a)^2), so rounds over a level contract instead of stalling.
inline double cycle_line_slope(const MonomialIndex& idx, double R) {
    return std::pow(R, 3 - 2 * idx.a);
}

// Tolerances are physical quantities. A scale event multiplies a stored
// discrepancy of degree d (dI for d = a+b, dW1 for d = 0) by f^(d+1) and
// phys_scale by f^-2, so the stored threshold equivalent to a physical
// tolerance carries the factor phys_scale^-((d+1)/2).
inline double stored_tol(const CoupledState& st, double tol, int deg) {
    return tol * std::pow(st.phys_scale, -0.5 * (deg + 1));
}

// Euclidean norm of (dW1, carried dI with order key <= key) in physical
// units, undoing any accumulated rescale factor per component.
inline double physical_residual(const CoupledState& st, int key) {
    const double d1p = st.d1 * std::pow(st.phys_scale, 0.5);
    double q = d1p * d1p;
    for (int i = 0; i < st.m; ++i) {
        if (order_key({st.ia[i], st.ib[i]}, st.n) > key) continue;
        const double p = st.dI[i] * std::pow(st.phys_scale, 0.5 * (st.ia[i] + st.ib[i] + 1));
        q += p * p;
    }
    return std::sqrt(q);
}

// Diffusive rescale of a far-out pair back to the R^(2n+2) radius, applied
// between cycles. Brownian scaling is an exact symmetry of the joint state
// (positions, discrepancies, physical clock), so coupling statistics are
// unchanged; what it buys is resolution. Line hits renew the shared radius
// by heavy-tailed multiplicative draws with no inward drift, and once the
// radius passes ~1e13 the unit displacement of the targeting phase falls
// below the position's own floating-point spacing and cycles stop acting.
// No stopped ride can pull the radius in (its conditional log stays a
// martingale, so failed attempts only spread it), but the deterministic
// rescale costs nothing and keeps every phase resolved.
inline void rescale_if_far(CoupledState& st, const CouplerConfig& cfg, RunContext& ctx, int level,
                           int cycle) {
    const double w1 = st.w1();
    const double r = std::hypot(w1, st.w2);
    if (r <= pow_int(cfg.R, 2 * cfg.n + 6)) return;
    CycleStats cs;
    cs.stage = "rescale";
    cs.level = level;
    cs.cycle = cycle;
    cs.delta_in = r;
    scale(st, pow_int(cfg.R, 2 * cfg.n + 2) / r);
    cs.delta_out = std::hypot(st.w1(), st.w2);
    ctx.emit(cs);
}


// Three-phase contraction cycle for the (1,0) integral. Entry: discrepancy
// only in I_(1,0). Reflection grows |dW1| to |dI|/R, a synchronous span
// drives dI through zero, reflection closes dW1. The level is proportional
// to the residual, so the crossing phase traverses |dI| at rate (|dI|/R)^2
// in natural time R^2 and the state is never rescaled between cycles.
inline CycleStats heisenberg_cycle(CoupledState& st, const CouplerConfig& cfg, NoiseStream& noise,
                                   RunContext& ctx) {
    require_coupled_base(st, "heisenberg_cycle");
    const int slot = st.index_of({1, 0});
    CycleStats cs;
    cs.stage = "heisenberg";
    cs.delta_in = std::fabs(st.dI[slot]);
    cs.phase_sim.assign(3, 0.0);
    cs.phase_phys.assign(3, 0.0);
    const double L1 = std::min(std::fabs(st.dI[slot]), 1.0) / cfg.R;

    const auto run_phase = [&](int phase, StepMode mode, const auto& predicate, double s_nat,
                               double cap_factor) {
        const double t0 = st.phys_time;
        const PhaseResult res =
            run_until(st, mode, predicate, cfg.dt * s_nat, cap_factor * s_nat, noise, s_nat);
        cs.phase_sim[phase] = res.duration;
        cs.phase_phys[phase] = st.phys_time - t0;
        cs.sup_abs_d1 = std::max(cs.sup_abs_d1, res.max_abs_d1);
        ctx.absorb_phase(res);
        if (!res.hit) {
            cs.capped = true;
            cs.capped_phase = phase;
        }
        return res.hit;
    };

    const double s_w1 = L1 * L1 / 4.0;
    if (!run_phase(0, StepMode::reflect_w1, pred::AbsD1Reaches{L1}, s_w1, cfg.t_cap_factor))
        return cs;
    const double ratio = std::fabs(st.dI[slot]) / L1;
    const double s_t2 = ratio * ratio;
    if (!run_phase(1, StepMode::synchronous, pred::DIntegralZero{slot}, s_t2, cfg.t_cap_factor))
        return cs;
    if (!run_phase(2, StepMode::reflect_w1, pred::D1Zero{}, s_w1, cfg.t_cap_factor)) return cs;
    cs.delta_out = std::fabs(st.dI[slot]);
    return cs;
}

inline CycleStats monomial_cycle(CoupledState& st, const MonomialIndex& idx,
                                 const CouplerConfig& cfg, NoiseStream& noise, RunContext& ctx,
                                 double slope) {
    require_coupled_base(st, "monomial_cycle");
    const int slot = st.index_of(idx);
    const int a = idx.a, b = idx.b;
    CycleStats cs;
    cs.stage = "monomial(" + std::to_string(a) + "," + std::to_string(b) + ")";
    cs.delta_in = std::fabs(st.dI[slot]);
    cs.phase_sim.assign(5, 0.0);
    cs.phase_phys.assign(5, 0.0);

    const auto run_phase = [&](int phase, StepMode mode, const auto& predicate, double s_nat,
                               double cap_factor) {
        const double t0 = st.phys_time;
        const PhaseResult res =
            run_until(st, mode, predicate, cfg.dt * s_nat, cap_factor * s_nat, noise, s_nat);
        cs.phase_sim[phase] = res.duration;
        cs.phase_phys[phase] = st.phys_time - t0;
        cs.sup_abs_d1 = std::max(cs.sup_abs_d1, res.max_abs_d1);
        ctx.absorb_phase(res);
        if (!res.hit) {
            cs.capped = true;
            cs.capped_phase = phase;
        }
        return res.hit;
    };

    // Far line hit: W2 = slope*W1 with |W1| beyond the gate. The default gate
    // R^(2n) (n of the full system) grows whenever the residual is oversized
    // for it: the gate keeps |W1|^(a+b-1) * slope^b at least R^2 * |dI|, so
    // the reflection level below never exceeds 1/R^2 and the active phases'
    // leak back into the target (relative size ~a*level/2) stays a small
    // contraction defect. Riding outward is a one-dimensional hit with
    // exponential time tails, so an oversized residual is repositioned and
    // cancelled in one cycle instead of ground down in diverging slices.
    // The natural scale covers the approach from the entry point as well as
    // the gate excursion, so the phase stays resolved wherever the pair sits.
    double w1_gate = pow_int(cfg.R, 2 * cfg.n);
    const double need = cfg.R * cfg.R * std::fabs(st.dI[slot]) / pow_int(slope, b);
    if (pow_int(w1_gate, a + b - 1) < need)
        w1_gate = std::pow(need, 1.0 / (a + b - 1));
    const double g0 = st.w2 - slope * st.w1();
    const double s_theta = pow_int(cfg.R, 4 * cfg.n + 2) + g0 * g0 / (1.0 + slope * slope) +
                           st.w1() * st.w1() + w1_gate * w1_gate;
    if (!run_phase(0, StepMode::synchronous, pred::LineHit{slope, w1_gate}, s_theta,
                   cfg.theta_cap_factor))
        return cs;
    const double w1_theta = st.w1();
    const int sgn_theta = (a + b - 1) % 2 == 1 ? sign_of(w1_theta) : 1;

    // Reflection level proportional to the residual: the targeting phase
    // displaces W2 by 1/a at this |dW1|, which cancels the whole residual in
    // one pass, and every leak left in other integrals scales linearly with
    // it. The gate above keeps the ratio at most 1/R^2; the min is a guard
    // for states entering already far beyond the gate.
    const double level_tau =
        std::min(std::fabs(st.dI[slot]) /
                     (pow_int(std::fabs(w1_theta), a + b - 1) * pow_int(slope, b)),
                 1.0 / (cfg.R * cfg.R));
    const double s_tau = level_tau * level_tau / 4.0;
    if (!run_phase(1, StepMode::reflect_w1, pred::AbsD1Reaches{level_tau}, s_tau,
                   cfg.t_cap_factor))
        return cs;

    const double target_w2 = st.w2 - (1.0 / a) * sign_of(st.d1) * sgn_theta;
    const double s_eta = 1.0 / (static_cast<double>(a) * a);
    const double dI_before_drive = st.dI[slot];
    if (!run_phase(2, StepMode::synchronous, pred::W2Reaches{target_w2}, s_eta, cfg.t_cap_factor))
        return cs;
    cs.drive_increment = st.dI[slot] - dI_before_drive;

    if (!run_phase(3, StepMode::reflect_w1, pred::D1Zero{}, s_tau, cfg.t_cap_factor)) return cs;

    // Renewal always returns to the shared line W2 = R*W1 regardless of slope.
    const double g = st.w2 - cfg.R * st.w1();
    const double s_beta = std::max(g * g / (1.0 + cfg.R * cfg.R), 1e-30);
    if (!run_phase(4, StepMode::synchronous, pred::LineHit{cfg.R, 0.0}, s_beta, cfg.t_cap_factor))
        return cs;

    cs.active_sim = cs.phase_sim[1] + cs.phase_sim[2] + cs.phase_sim[3];
    cs.active_phys = cs.phase_phys[1] + cs.phase_phys[2] + cs.phase_phys[3];
    cs.delta_out = std::fabs(st.dI[slot]);
    return cs;
}

inline CouplingOutcome couple_loop_single(CoupledState& st, const MonomialIndex& idx,
                                          const CouplerConfig& cfg, NoiseStream& noise,
                                          RunContext& ctx, double tol, int level, double slope) {
    CouplingOutcome out;
    const double phys0 = st.phys_time;
    const int slot = st.index_of(idx);
    const int deg = idx.a + idx.b;
    const bool heis = (idx == MonomialIndex{1, 0});
    if (std::fabs(st.dI[slot]) <= stored_tol(st, tol, deg)) {
        st.dI[slot] = 0.0;
        out.success = true;
        return out;
    }
    for (int k = 1; k <= cfg.max_cycles; ++k) {
        rescale_if_far(st, cfg, ctx, level, k);
        // The cycle cancels a positive discrepancy; relabeling the copies
        // costs nothing.
        if (st.dI[slot] < 0.0) swap_labels(st);
        CycleStats cs = heis ? heisenberg_cycle(st, cfg, noise, ctx)
                             : monomial_cycle(st, idx, cfg, noise, ctx, slope);
        cs.level = level;
        cs.cycle = k;
        ++ctx.cycles;
        ++out.cycles;
        ctx.active_phys += cs.active_phys;
        if (cs.capped) {
            ctx.emit(cs);
            out.failure = "t_cap";
            out.failure_level = level;
            out.coupling_time_physical = st.phys_time - phys0;
            return out;
        }
        ctx.emit(cs);
        if (std::fabs(st.dI[slot]) <= stored_tol(st, tol, deg)) {
            st.d1 = 0.0;
            st.dI[slot] = 0.0;
            out.success = true;
            out.coupling_time_physical = st.phys_time - phys0;
            return out;
        }
    }
    out.failure = "max_cycles";
    out.failure_level = level;
    out.coupling_time_physical = st.phys_time - phys0;
    return out;
}

inline CouplingOutcome couple_upto(CoupledState& st, const MonomialIndex& idx,
                                   const CouplerConfig& cfg, NoiseStream& noise, RunContext& ctx,
                                   int level);

// One outer stage sequence for an index above (1,0): couple everything
// below, ride synchronously back to the line, then run the single-index
// strategy on the index's own theta line. Smaller discrepancies re-opened by
// the active phases drive the outer loop's contraction.
inline CouplingOutcome couple_upto(CoupledState& st, const MonomialIndex& idx,
                                   const CouplerConfig& cfg, NoiseStream& noise, RunContext& ctx,
                                   int level) {
    const double tol = level == 0 ? cfg.tol_couple : cfg.tol_inner * cfg.tol_couple;
    if (idx == MonomialIndex{1, 0})
        return couple_loop_single(st, idx, cfg, noise, ctx, tol, level, cfg.R);

    CouplingOutcome out;
    const double phys0 = st.phys_time;
    const MonomialIndex pred_idx = coupled_representative(predecessor(idx, st.n), st.n);
    const int key = order_key(idx, st.n);
    const auto residual_q = [&]() { return physical_residual(st, key); };
    const auto coalesce = [&]() {
        st.d1 = 0.0;
        for (int i = 0; i < st.m; ++i)
            if (order_key({st.ia[i], st.ib[i]}, st.n) <= key) st.dI[i] = 0.0;
    };
    double q_prev = residual_q();
    if (q_prev <= tol) {
        coalesce();
        out.success = true;
        return out;
    }
    for (int k = 1; k <= cfg.max_cycles; ++k) {
        // sigma1: recursive coupling of all strictly smaller indices.
        CouplingOutcome sub = couple_upto(st, pred_idx, cfg, noise, ctx, level + 1);
        out.cycles += sub.cycles;
        if (!sub.success) {
            out.failure = sub.failure;
            out.failure_level = sub.failure_level;
            out.coupling_time_physical = st.phys_time - phys0;
            return out;
        }
        // sigma2: synchronous until the line W2 = R*W1.
        {
            const double g = st.w2 - cfg.R * st.w1();
            const double s_line = std::max(g * g / (1.0 + cfg.R * cfg.R), 1e-30);
            const PhaseResult res =
                run_until(st, StepMode::synchronous, pred::LineHit{cfg.R, 0.0}, cfg.dt * s_line,
                          cfg.t_cap_factor * s_line, noise, s_line);
            ctx.absorb_phase(res);
            if (!res.hit) {
                out.failure = "t_cap";
                out.failure_level = level;
                out.coupling_time_physical = st.phys_time - phys0;
                return out;
            }
        }
        // Recursion invariant: every strictly smaller carried discrepancy and
        // dW1 are exactly zero when the single-index strategy starts.
        {
            const int key = order_key(idx, st.n);
            bool ok = (st.d1 == 0.0);
            for (int i = 0; i < st.m && ok; ++i)
                if (order_key({st.ia[i], st.ib[i]}, st.n) < key && st.dI[i] != 0.0) ok = false;
            if (!ok) ctx.invariant_ok = false;
        }
        // sigma3: the single-index strategy for idx, at its own normalization,
        // on its own theta line.
        CouplingOutcome mono = couple_loop_single(st, idx, cfg, noise, ctx,
                                                  cfg.tol_inner * cfg.tol_couple, level,
                                                  cycle_line_slope(idx, cfg.R));
        out.cycles += mono.cycles;
        if (!mono.success) {
            out.failure = mono.failure;
            out.failure_level = mono.failure_level;
            out.coupling_time_physical = st.phys_time - phys0;
            return out;
        }
        // Aggregate discrepancy of everything up to idx decides success.
        const double q = residual_q();
        CycleStats cs;
        cs.stage = "outer(" + std::to_string(idx.a) + "," + std::to_string(idx.b) + ")";
        cs.level = level;
        cs.cycle = k;
        cs.delta_in = q_prev;
        cs.delta_out = q;
        q_prev = q;
        ++ctx.cycles;
        ctx.emit(cs);
        if (q <= tol) {
            coalesce();
            out.success = true;
            out.coupling_time_physical = st.phys_time - phys0;
            return out;
        }
    }
    out.failure = "max_cycles";
    out.failure_level = level;
    out.coupling_time_physical = st.phys_time - phys0;
    return out;
}

}  // namespace detail

// Reflection coupling of the planar Brownian pair: the mirror copy receives
// increments reflected across the fixed initial difference direction until
// both coordinates meet, then they are clamped equal. Integrals of both
// copies evolve throughout. hit=false on cap exhaustion.
inline PhaseResult reflect_couple_bm(CoupledState& st, const CouplerConfig& cfg,
                                     NoiseStream& noise) {
    cfg.validate();
    PhaseResult res;
    res.max_abs_d1 = std::fabs(st.d1);
    double delta = std::hypot(st.d1, st.w2 - st.w2t);
    if (delta == 0.0) {
        st.d1 = 0.0;
        st.w2t = st.w2;
        res.hit = true;
        return res;
    }
    const double u1 = st.d1 / delta;
    const double u2 = (st.w2 - st.w2t) / delta;
    const double s_nat = delta * delta / 4.0;
    const double t_cap = cfg.t_cap_factor * s_nat;
    double dt = cfg.dt * s_nat;
    double sq = std::sqrt(dt);
    double next_grow = s_nat;
    for (;;) {
        while (res.duration >= next_grow) {
            dt *= 2.0;
            sq = std::sqrt(dt);
            next_grow *= 2.0;
        }
        if (!(res.duration + dt <= t_cap)) break;
        double z1, z2;
        noise.next_normal_pair(z1, z2);
        const double xi1 = z1 * sq;
        const double xi2 = z2 * sq;
        const double zeta = xi1 * u1 + xi2 * u2;
        const double xi1t = xi1 - 2.0 * zeta * u1;
        const double xi2t = xi2 - 2.0 * zeta * u2;
        const double inc = 2.0 * zeta;
        const std::optional<double> lam = linear_crossing(delta, inc, 0.0);
        if (lam) {
            const double l = *lam;
            detail::apply_increments(st, l * xi1, l * xi1t, l * xi2, l * xi2t, l * dt);
            res.duration += l * dt;
            ++res.steps;
            st.d1 = 0.0;
            st.w2t = st.w2;
            detail::check_finite(st);
            res.max_abs_d1 = std::max(res.max_abs_d1, std::fabs(st.d1));
            res.hit = true;
            return res;
        }
        detail::apply_increments(st, xi1, xi1t, xi2, xi2t, dt);
        res.duration += dt;
        ++res.steps;
        delta += inc;
        res.max_abs_d1 = std::max(res.max_abs_d1, std::fabs(st.d1));
        detail::check_finite(st);
    }
    return res;
}

// Contraction loop for the (1,0) integral from a coupled Brownian base.
inline CouplingOutcome heisenberg_couple(CoupledState st, const CouplerConfig& cfg,
                                         NoiseStream& noise, const TraceSink& sink = {},
                                         CoupledState* final_state = nullptr) {
    cfg.validate();
    detail::require_coupled_base(st, "heisenberg_couple");
    detail::RunContext ctx;
    ctx.sink = &sink;
    CouplingOutcome out = detail::couple_loop_single(st, {1, 0}, cfg, noise, ctx,
                                                     cfg.tol_couple, 0, cfg.R);
    out.sup_delta_w1 = ctx.sup_d1;
    out.active_time = ctx.active_phys;
    out.cycles = ctx.cycles;

    out.total_steps = ctx.steps;
    if (final_state) *final_state = st;
    return out;
}

// Contraction loop for one monomial index (a >= 1) from a coupled Brownian
// base near the line W2 = R*W1.
inline CouplingOutcome monomial_couple(CoupledState st, const MonomialIndex& idx,
                                       const CouplerConfig& cfg, NoiseStream& noise,
                                       const TraceSink& sink = {},
                                       CoupledState* final_state = nullptr) {
    cfg.validate();
    if (idx.a < 1 || idx.a + idx.b > cfg.n)
        throw std::invalid_argument("monomial_couple: index " + to_string(idx) +
                                    " not coupled at n=" + std::to_string(cfg.n));
    detail::require_coupled_base(st, "monomial_couple");
    detail::RunContext ctx;
    ctx.sink = &sink;
    CouplingOutcome out =
        detail::couple_loop_single(st, idx, cfg, noise, ctx, cfg.tol_couple, 0, cfg.R);
    out.sup_delta_w1 = ctx.sup_d1;
    out.active_time = ctx.active_phys;
    out.cycles = ctx.cycles;

    out.total_steps = ctx.steps;
    if (final_state) *final_state = st;
    return out;
}

// Full coupling of W1 and every carried integral: planar reflection until the
// Brownian pairs meet, synchronous ride to the line, then the inductive
// couple-up-to loop on the maximal carried index.
inline CouplingOutcome full_couple(CoupledState st, const CouplerConfig& cfg, NoiseStream& noise,
                                   const TraceSink& sink = {},
                                   CoupledState* final_state = nullptr) {
    cfg.validate();
    if (st.n != cfg.n)
        throw std::invalid_argument("full_couple: state n != config n");
    detail::RunContext ctx;
    ctx.sink = &sink;
    CouplingOutcome out;
    const double phys0 = st.phys_time;
    const PhaseResult meet = reflect_couple_bm(st, cfg, noise);
    ctx.absorb_phase(meet);
    if (!meet.hit) {
        out.failure = "t_cap";
        out.failure_level = 0;
        out.coupling_time_physical = st.phys_time - phys0;
        out.sup_delta_w1 = ctx.sup_d1;
        out.total_steps = ctx.steps;
        return out;
    }
    {
        const double g = st.w2 - cfg.R * st.w1();
        const double s_line = std::max(g * g / (1.0 + cfg.R * cfg.R), 1e-30);
        const PhaseResult res =
            run_until(st, StepMode::synchronous, pred::LineHit{cfg.R, 0.0}, cfg.dt * s_line,
                      cfg.t_cap_factor * s_line, noise, s_line);
        ctx.absorb_phase(res);
        if (!res.hit) {
            out.failure = "t_cap";
            out.failure_level = 0;
            out.coupling_time_physical = st.phys_time - phys0;
            out.sup_delta_w1 = ctx.sup_d1;
            out.total_steps = ctx.steps;
            return out;
        }
    }
    const std::vector<MonomialIndex> carried = coupled_indices(cfg.n);
    MonomialIndex target = carried.front();
    for (const MonomialIndex& idx : carried)
        if (order_key(idx, cfg.n) > order_key(target, cfg.n)) target = idx;
    out = detail::couple_upto(st, target, cfg, noise, ctx, 0);
    out.coupling_time_physical = st.phys_time - phys0;
    out.sup_delta_w1 = ctx.sup_d1;
    out.active_time = ctx.active_phys;
    out.cycles = ctx.cycles;

    out.total_steps = ctx.steps;
    out.recursion_invariant_ok = ctx.invariant_ok;
    if (final_state) *final_state = st;
    return out;
}

}  // namespace polycouple
