#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "monomial.hpp"
#include "rng.hpp"

namespace polycouple {

struct numeric_fault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Stepping mode of the coupling: the mirror copy receives the same W1
// increment (synchronous) or its negation (reflection). W2 is shared in both
// modes; the planar pre-stage that reflects the full 2-D pair lives in the
// coupler layer on top of raw increment application.
enum class StepMode { synchronous, reflect_w1 };

inline constexpr int kMaxN = 4;
inline constexpr int kMaxIntegrals = kMaxN * (kMaxN + 1) / 2;

// Joint state of the two coupled copies.
//
// W1 coordinates are stored as s1 = W1 + W1~ and d1 = W1 - W1~ so that the
// conserved combination of each mode is a stored field: synchronous steps
// never touch d1 and reflection steps never touch s1, making the conservation
// laws bit-exact rather than approximate. Integrals are stored as the plain
// copy I plus the discrepancy dI = I - I~, with dI updated in factored form
// (W1^a - W1t^a = d1 * sum of cross powers) so dI is frozen at exactly zero
// whenever d1 == 0 and both W2 coordinates agree.
//
// The integral list covers exactly {(a,b): a >= 1, a+b <= n} in monomial
// order. t is the simulation clock since the last rescale; phys_time converts
// every step through phys_scale, which scale() divides by r^2.
struct CoupledState {
    double t = 0.0;
    double s1 = 0.0;
    double d1 = 0.0;
    double w2 = 0.0;
    double w2t = 0.0;
    int n = 1;
    int m = 0;
    std::array<std::int8_t, kMaxIntegrals> ia{};
    std::array<std::int8_t, kMaxIntegrals> ib{};
    std::array<double, kMaxIntegrals> I{};
    std::array<double, kMaxIntegrals> dI{};
    double phys_scale = 1.0;
    double phys_time = 0.0;

    double w1() const { return 0.5 * (s1 + d1); }
    double w1t() const { return 0.5 * (s1 - d1); }

    void set_w1_pair(double w1_val, double w1t_val) {
        s1 = w1_val + w1t_val;
        d1 = w1_val - w1t_val;
    }

    int index_of(const MonomialIndex& idx) const {
        for (int i = 0; i < m; ++i)
            if (ia[i] == idx.a && ib[i] == idx.b) return i;
        throw std::invalid_argument("CoupledState: integral " + to_string(idx) +
                                    " not carried at n=" + std::to_string(n));
    }

    double integral(const MonomialIndex& idx) const { return I[index_of(idx)]; }
    double integral_tilde(const MonomialIndex& idx) const {
        const int i = index_of(idx);
        return I[i] - dI[i];
    }
    double delta_integral(const MonomialIndex& idx) const { return dI[index_of(idx)]; }

    void set_integral_pair(const MonomialIndex& idx, double value, double value_tilde) {
        const int i = index_of(idx);
        I[i] = value;
        dI[i] = value - value_tilde;
    }
};

inline CoupledState make_state(int n, double w1 = 0.0, double w2 = 0.0) {
    if (n < 1 || n > kMaxN)
        throw std::invalid_argument("make_state: n must be in [1," + std::to_string(kMaxN) + "]");
    CoupledState st;
    st.n = n;
    st.set_w1_pair(w1, w1);
    st.w2 = w2;
    st.w2t = w2;
    const std::vector<MonomialIndex> idx = coupled_indices(n);
    st.m = static_cast<int>(idx.size());
    for (int i = 0; i < st.m; ++i) {
        st.ia[i] = static_cast<std::int8_t>(idx[i].a);
        st.ib[i] = static_cast<std::int8_t>(idx[i].b);
    }
    return st;
}

// Relabel the two copies (W <-> W~). The coupling is symmetric under this
// swap, which flips the sign of every discrepancy; cycle constructions that
// assume a positive target discrepancy apply it at cycle entry.
inline void swap_labels(CoupledState& st) {
    st.d1 = -st.d1;
    const double tmp = st.w2;
    st.w2 = st.w2t;
    st.w2t = tmp;
    for (int i = 0; i < st.m; ++i) {
        st.I[i] -= st.dI[i];
        st.dI[i] = -st.dI[i];
    }
}

inline std::string dump_state(const CoupledState& st) {
    std::ostringstream os;
    os.precision(17);
    os << "t=" << st.t << " w1=" << st.w1() << " w1t=" << st.w1t() << " w2=" << st.w2
       << " w2t=" << st.w2t << " phys_scale=" << st.phys_scale << " phys_time=" << st.phys_time;
    for (int i = 0; i < st.m; ++i)
        os << " I(" << int(st.ia[i]) << "," << int(st.ib[i]) << ")=" << st.I[i]
           << " dI=" << st.dI[i];
    return os.str();
}

namespace detail {

// One Euler update with explicit increments; left-endpoint integrands.
// xi1t is the W1 increment of the mirror copy; xi2/xi2t likewise for W2.
// All state updates are linear in (xi1, xi1t, xi2, xi2t, dt), which is what
// makes the crossing interpolation in run_until an exact sub-step.
inline void apply_increments(CoupledState& st, double xi1, double xi1t, double xi2, double xi2t,
                             double dt) {
    const double w1v = st.w1();
    const double w1tv = st.w1t();
    double pw1[kMaxN + 1], pw1t[kMaxN + 1], sum[kMaxN];
    pw1[0] = 1.0;
    pw1t[0] = 1.0;
    for (int k = 1; k <= st.n; ++k) {
        pw1[k] = pw1[k - 1] * w1v;
        pw1t[k] = pw1t[k - 1] * w1tv;
    }
    // sum[k] = sum_{j=0..k} W1^{k-j} W1t^j, so W1^a - W1t^a = d1 * sum[a-1].
    for (int k = 0; k < st.n; ++k) {
        double s = 0.0;
        for (int j = 0; j <= k; ++j) s += pw1[k - j] * pw1t[j];
        sum[k] = s;
    }
    if (st.w2 == st.w2t && xi2 == xi2t) {
        double pw2[kMaxN + 1];
        pw2[0] = 1.0;
        for (int k = 1; k <= st.n; ++k) pw2[k] = pw2[k - 1] * st.w2;
        for (int i = 0; i < st.m; ++i) {
            const int a = st.ia[i], b = st.ib[i];
            double base = pw2[b] * xi2;
            if (b > 0) base += 0.5 * b * pw2[b - 1] * dt;
            st.I[i] += pw1[a] * base;
            st.dI[i] += st.d1 * sum[a - 1] * base;
        }
    } else {
        double pw2[kMaxN + 1], pw2t[kMaxN + 1];
        pw2[0] = 1.0;
        pw2t[0] = 1.0;
        for (int k = 1; k <= st.n; ++k) {
            pw2[k] = pw2[k - 1] * st.w2;
            pw2t[k] = pw2t[k - 1] * st.w2t;
        }
        for (int i = 0; i < st.m; ++i) {
            const int a = st.ia[i], b = st.ib[i];
            double base = pw2[b] * xi2;
            double baset = pw2t[b] * xi2t;
            if (b > 0) {
                base += 0.5 * b * pw2[b - 1] * dt;
                baset += 0.5 * b * pw2t[b - 1] * dt;
            }
            const double inc = pw1[a] * base;
            const double inct = pw1t[a] * baset;
            st.I[i] += inc;
            st.dI[i] += inc - inct;
        }
    }
    st.s1 += xi1 + xi1t;
    st.d1 += xi1 - xi1t;
    st.w2 += xi2;
    st.w2t += xi2t;
    st.t += dt;
    st.phys_time += st.phys_scale * dt;
}

inline void check_finite(const CoupledState& st) {
    if (!std::isfinite(st.s1 + st.d1 + st.w2)) [[unlikely]]
        throw numeric_fault("non-finite state: " + dump_state(st));
}

}  // namespace detail

// One Euler step of size dt with fresh noise. Both copies share xi2; the
// mirror W1 increment is +xi1 or -xi1 according to mode.
inline void step(CoupledState& st, StepMode mode, double dt, NoiseStream& noise) {
    if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
    const double sq = std::sqrt(dt);
    double z1, z2;
    noise.next_normal_pair(z1, z2);
    const double xi1 = z1 * sq;
    const double xi2 = z2 * sq;
    detail::apply_increments(st, xi1, mode == StepMode::synchronous ? xi1 : -xi1, xi2, xi2, dt);
    detail::check_finite(st);
}

// Brownian scaling: W coordinates by r, each integral by r^(a+b+1). The
// simulation clock restarts; physical time conversion absorbs r^2.
inline void scale(CoupledState& st, double r) {
    if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("scale: r must be positive");
    st.s1 *= r;
    st.d1 *= r;
    st.w2 *= r;
    st.w2t *= r;
    const double r2 = r * r;
    for (int i = 0; i < st.m; ++i) {
        double f = r2;
        for (int k = 1; k < st.ia[i] + st.ib[i]; ++k) f *= r;
        st.I[i] *= f;
        st.dI[i] *= f;
    }
    st.phys_scale /= r2;
    st.t = 0.0;
}

// Euclidean norm of (delta W1, delta I over carried indices up to `upto`).
inline double delta_norm(const CoupledState& st, const MonomialIndex& upto) {
    const int key = order_key(upto, st.n);
    double q = st.d1 * st.d1;
    for (int i = 0; i < st.m; ++i)
        if (order_key({st.ia[i], st.ib[i]}, st.n) <= key) q += st.dI[i] * st.dI[i];
    return std::sqrt(q);
}

inline double delta_norm(const CoupledState& st) {
    double q = st.d1 * st.d1;
    for (int i = 0; i < st.m; ++i) q += st.dI[i] * st.dI[i];
    return std::sqrt(q);
}

struct PhaseResult {
    bool hit = false;
    double duration = 0.0;  // simulation-clock time spent in the phase
    std::uint64_t steps = 0;
    double max_abs_d1 = 0.0;
};

// Crossing fraction of a linear coordinate moving from q to q+inc toward
// `target`; empty when the step does not reach it.
inline std::optional<double> linear_crossing(double q, double inc, double target) {
    if (inc == 0.0) return std::nullopt;
    const double lam = (target - q) / inc;
    if (lam > 0.0 && lam <= 1.0) return lam;
    return std::nullopt;
}

// Phase predicates. Each exposes:
//   already_met(st)          exact entry check
//   coord(st)                the linear trigger coordinate
//   coord_inc(st, ...)       its change under given increments (bit-match of
//                            the committed update is not required; the clamp
//                            lands the coordinate exactly)
//   crossing(q, inc)         fraction of the step at which the trigger fires
//   gate(st)                 extra condition checked at the interpolated point
//   clamp(st)                set the trigger quantity exactly
namespace pred {

// |d1| reaches level L (reflection phases growing the discrepancy).
struct AbsD1Reaches {
    double level;
    bool already_met(const CoupledState& st) const { return std::fabs(st.d1) >= level; }
    double coord(const CoupledState& st) const { return st.d1; }
    double coord_inc(const CoupledState&, double xi1, double xi1t, double, double, double) const {
        return xi1 - xi1t;
    }
    std::optional<double> crossing(double q, double inc) const {
        const std::optional<double> up = linear_crossing(q, inc, level);
        const std::optional<double> dn = linear_crossing(q, inc, -level);
        if (up && dn) return std::min(*up, *dn);
        return up ? up : dn;
    }
    bool gate(const CoupledState&) const { return true; }
    void clamp(CoupledState& st) const { st.d1 = st.d1 >= 0.0 ? level : -level; }
};

// d1 returns to exactly zero (reflection phases closing the discrepancy).
struct D1Zero {
    bool already_met(const CoupledState& st) const { return st.d1 == 0.0; }
    double coord(const CoupledState& st) const { return st.d1; }
    double coord_inc(const CoupledState&, double xi1, double xi1t, double, double, double) const {
        return xi1 - xi1t;
    }
    std::optional<double> crossing(double q, double inc) const {
        return linear_crossing(q, inc, 0.0);
    }
    bool gate(const CoupledState&) const { return true; }
    void clamp(CoupledState& st) const { st.d1 = 0.0; }
};

// dI of one carried index crosses zero (synchronous drift-out phases).
struct DIntegralZero {
    int slot;
    bool already_met(const CoupledState& st) const { return st.dI[slot] == 0.0; }
    double coord(const CoupledState& st) const { return st.dI[slot]; }
    double coord_inc(const CoupledState& st, double, double, double xi2, double, double dt) const {
        const int a = st.ia[slot], b = st.ib[slot];
        const double w1v = st.w1(), w1tv = st.w1t();
        // w1^a - w1t^a factored through d1; the plain difference cancels to
        // zero ulps when the pair sits far from the origin.
        double sum = 0.0;
        for (int j = 0; j < a; ++j) {
            double term = 1.0;
            for (int k = 0; k < j; ++k) term *= w1v;
            for (int k = j + 1; k < a; ++k) term *= w1tv;
            sum += term;
        }
        double pb = 1.0;
        for (int k = 0; k < b; ++k) pb *= st.w2;
        double base = pb * xi2;
        if (b > 0) {
            double pbm = 1.0;
            for (int k = 0; k + 1 < b; ++k) pbm *= st.w2;
            base += 0.5 * b * pbm * dt;
        }
        return st.d1 * sum * base;
    }
    std::optional<double> crossing(double q, double inc) const {
        return linear_crossing(q, inc, 0.0);
    }
    bool gate(const CoupledState&) const { return true; }
    void clamp(CoupledState& st) const { st.dI[slot] = 0.0; }
};

// Shared W2 reaches a fixed level (synchronous, both copies coalesced).
struct W2Reaches {
    double level;
    bool already_met(const CoupledState& st) const { return st.w2 == level; }
    double coord(const CoupledState& st) const { return st.w2; }
    double coord_inc(const CoupledState&, double, double, double xi2, double, double) const {
        return xi2;
    }
    std::optional<double> crossing(double q, double inc) const {
        return linear_crossing(q, inc, level);
    }
    bool gate(const CoupledState&) const { return true; }
    void clamp(CoupledState& st) const {
        st.w2 = level;
        st.w2t = level;
    }
};

// W2 - R*W1 crosses zero, optionally gated by |W1| >= w1_gate at the crossing
// point (the gate distinguishes the far-field line hit from plain line hits).
struct LineHit {
    double R;
    double w1_gate = 0.0;
    bool already_met(const CoupledState& st) const {
        return st.w2 - R * st.w1() == 0.0 && std::fabs(st.w1()) >= w1_gate;
    }
    double coord(const CoupledState& st) const { return st.w2 - R * st.w1(); }
    double coord_inc(const CoupledState&, double xi1, double, double xi2, double, double) const {
        return xi2 - R * xi1;  // synchronous W1: both copies move by xi1
    }
    std::optional<double> crossing(double q, double inc) const {
        return linear_crossing(q, inc, 0.0);
    }
    bool gate(const CoupledState& st) const { return std::fabs(st.w1()) >= w1_gate; }
    void clamp(CoupledState& st) const {
        st.w2 = R * st.w1();
        st.w2t = st.w2;
    }
};

}  // namespace pred

// Run steps of one phase until the predicate fires or t_cap simulation time
// elapses. On a detected crossing the commits are the same Euler increments
// scaled by the crossing fraction (an exact linear interpolation of every
// field, since updates are linear in increments), after which the trigger
// quantity is clamped to its exact target. hit=false only on cap exhaustion.
// Once the elapsed phase time exceeds grow_after the step size doubles each
// time the elapsed time doubles, so resolution stays proportional to elapsed
// time (scale-invariant for Brownian hitting problems) and a heavy-tailed
// phase costs O(log(t_cap/grow_after)) steps per decade instead of O(t_cap).
template <class Pred>
PhaseResult run_until(CoupledState& st, StepMode mode, const Pred& predicate, double dt,
                      double t_cap, NoiseStream& noise,
                      double grow_after = std::numeric_limits<double>::infinity()) {
    if (!(dt > 0.0)) throw std::invalid_argument("run_until: dt must be positive");
    if (!std::isfinite(dt) || !std::isfinite(t_cap))
        throw numeric_fault("run_until: non-finite step or cap");
    PhaseResult res;
    res.max_abs_d1 = std::fabs(st.d1);
    if (predicate.already_met(st)) {
        predicate.clamp(st);
        res.hit = true;
        return res;
    }
    double step = dt;
    double sq = std::sqrt(dt);
    double next_grow = grow_after;
    const bool sync = (mode == StepMode::synchronous);
    double q = predicate.coord(st);
    for (;;) {
        while (res.duration >= next_grow) {
            step *= 2.0;
            sq = std::sqrt(step);
            next_grow *= 2.0;
        }
        if (!(res.duration + step <= t_cap)) break;
        double z1, z2;
        noise.next_normal_pair(z1, z2);
        const double xi1 = z1 * sq;
        const double xi2 = z2 * sq;
        const double xi1t = sync ? xi1 : -xi1;
        const double inc = predicate.coord_inc(st, xi1, xi1t, xi2, xi2, step);
        const std::optional<double> lam = predicate.crossing(q, inc);
        if (lam) {
            const double l = *lam;
            detail::apply_increments(st, l * xi1, l * xi1t, l * xi2, l * xi2, l * step);
            res.duration += l * step;
            ++res.steps;
            res.max_abs_d1 = std::max(res.max_abs_d1, std::fabs(st.d1));
            if (predicate.gate(st)) {
                predicate.clamp(st);
                detail::check_finite(st);
                res.hit = true;
                return res;
            }
            q = predicate.coord(st);
            detail::check_finite(st);
            continue;
        }
        detail::apply_increments(st, xi1, xi1t, xi2, xi2, step);
        res.duration += step;
        ++res.steps;
        const double ad1 = std::fabs(st.d1);
        if (ad1 > res.max_abs_d1) res.max_abs_d1 = ad1;
        detail::check_finite(st);
        q = predicate.coord(st);
    }
    return res;
}

}  // namespace polycouple
