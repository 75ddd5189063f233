#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace polycouple {

// Exponent pair (a,b) of the monomial integrand W1^a W2^b.
struct MonomialIndex {
    int a = 0;
    int b = 0;

    friend bool operator==(const MonomialIndex& x, const MonomialIndex& y) {
        return x.a == y.a && x.b == y.b;
    }
    friend bool operator!=(const MonomialIndex& x, const MonomialIndex& y) { return !(x == y); }
};

inline std::string to_string(const MonomialIndex& idx) {
    return "(" + std::to_string(idx.a) + "," + std::to_string(idx.b) + ")";
}

// Degree weight of I_(a,b) under the Brownian scaling W -> rW: I scales by r^degree.
inline int scaling_degree(const MonomialIndex& idx) { return idx.a + idx.b + 1; }

// Total-order key on exponent pairs; parity trick makes it injective on a+b <= n
// and antisymmetric under (a,b) -> (b,a).
inline int order_key(const MonomialIndex& idx, int n) {
    return 2 * n * idx.a + (2 * n + 1) * idx.b;
}

inline bool order_less(const MonomialIndex& x, const MonomialIndex& y, int n) {
    return order_key(x, n) < order_key(y, n);
}

// All pairs (a,b), a,b >= 0, a+b <= n, sorted by order_key. Includes (0,0).
inline std::vector<MonomialIndex> simplex_indices(int n) {
    if (n < 0) throw std::invalid_argument("simplex_indices: n must be >= 0");
    std::vector<MonomialIndex> out;
    for (int a = 0; a <= n; ++a)
        for (int b = 0; a + b <= n; ++b) out.push_back({a, b});
    for (std::size_t i = 1; i < out.size(); ++i) {
        MonomialIndex key = out[i];
        std::size_t j = i;
        while (j > 0 && order_key(out[j - 1], n) > order_key(key, n)) {
            out[j] = out[j - 1];
            --j;
        }
        out[j] = key;
    }
    return out;
}

// Indices whose integrals are carried in the coupled state: a >= 1, a+b <= n.
// Pure-W2 monomials are omitted; I_(0,b) always agrees between copies driven by
// the same W2, so it carries no discrepancy.
inline std::vector<MonomialIndex> coupled_indices(int n) {
    std::vector<MonomialIndex> out;
    for (const MonomialIndex& idx : simplex_indices(n))
        if (idx.a >= 1) out.push_back(idx);
    return out;
}

// Immediate predecessor of idx in the order over the full simplex (a+b <= n).
// Predecessor of the minimum (0,0) is reported as (0,0) itself.
inline MonomialIndex predecessor(const MonomialIndex& idx, int n) {
    if (idx.a < 0 || idx.b < 0 || idx.a + idx.b > n)
        throw std::invalid_argument("predecessor: index outside simplex for n=" + std::to_string(n));
    const std::vector<MonomialIndex> all = simplex_indices(n);
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (all[i] == idx) return i == 0 ? all[0] : all[i - 1];
    }
    throw std::logic_error("predecessor: index not found");
}

// Latest coupled (a>=1) index at or before idx; identities I_(0,b) = I at the
// predecessor mean coupling (0,b) reduces to coupling this index.
inline MonomialIndex coupled_representative(MonomialIndex idx, int n) {
    while (idx.a == 0 && !(idx == MonomialIndex{0, 0})) idx = predecessor(idx, n);
    return idx;
}

}  // namespace polycouple
