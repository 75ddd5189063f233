#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "monomial.hpp"

namespace polycouple {

struct phc_violation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct inconsistent_start : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Vector-valued polynomial in (x1, x2): terms maps the exponent pair (l, m)
// of x1^l x2^m to a coefficient vector of length dim_out. Canonical form keeps
// no term whose coefficients are all exactly zero.
struct BivariatePolyVec {
    int dim_out = 0;
    std::map<std::pair<int, int>, std::vector<double>> terms;

    BivariatePolyVec() = default;
    explicit BivariatePolyVec(int dim) : dim_out(dim) {
        if (dim <= 0) throw std::invalid_argument("BivariatePolyVec: dim_out must be positive");
    }

    void add_term(int l, int m, const std::vector<double>& coef) {
        if (l < 0 || m < 0) throw std::invalid_argument("BivariatePolyVec: negative exponent");
        if (static_cast<int>(coef.size()) != dim_out)
            throw std::invalid_argument("BivariatePolyVec: coefficient length != dim_out");
        std::vector<double>& slot = terms[{l, m}];
        if (slot.empty()) slot.assign(dim_out, 0.0);
        for (int i = 0; i < dim_out; ++i) slot[i] += coef[i];
        canonicalize();
    }

    void canonicalize() {
        for (auto it = terms.begin(); it != terms.end();) {
            bool all_zero = true;
            for (double c : it->second)
                if (c != 0.0) all_zero = false;
            it = all_zero ? terms.erase(it) : std::next(it);
        }
    }

    int max_degree() const {
        int deg = 0;
        for (const auto& [lm, coef] : terms) deg = std::max(deg, lm.first + lm.second);
        return deg;
    }

    bool is_zero() const { return terms.empty(); }

    friend bool operator==(const BivariatePolyVec& p, const BivariatePolyVec& q) {
        return p.dim_out == q.dim_out && p.terms == q.terms;
    }
};

inline std::vector<double> eval(const BivariatePolyVec& p, double x1, double x2) {
    std::vector<double> out(p.dim_out, 0.0);
    for (const auto& [lm, coef] : p.terms) {
        double mono = 1.0;
        for (int i = 0; i < lm.first; ++i) mono *= x1;
        for (int i = 0; i < lm.second; ++i) mono *= x2;
        for (int i = 0; i < p.dim_out; ++i) out[i] += coef[i] * mono;
    }
    return out;
}

// Partial derivative with respect to x1 (var=1) or x2 (var=2).
inline BivariatePolyVec partial(const BivariatePolyVec& p, int var) {
    if (var != 1 && var != 2) throw std::invalid_argument("partial: var must be 1 or 2");
    BivariatePolyVec out(p.dim_out);
    for (const auto& [lm, coef] : p.terms) {
        const int e = (var == 1) ? lm.first : lm.second;
        if (e == 0) continue;
        std::vector<double> scaled(coef);
        for (double& c : scaled) c *= e;
        const int l = (var == 1) ? lm.first - 1 : lm.first;
        const int m = (var == 1) ? lm.second : lm.second - 1;
        std::vector<double>& slot = out.terms[{l, m}];
        if (slot.empty()) slot.assign(out.dim_out, 0.0);
        for (int i = 0; i < out.dim_out; ++i) slot[i] += scaled[i];
    }
    out.canonicalize();
    return out;
}

inline BivariatePolyVec partial(const BivariatePolyVec& p, int var, int times) {
    BivariatePolyVec out = p;
    for (int i = 0; i < times; ++i) out = partial(out, var);
    return out;
}

// q(x1,x2) = integral of p in the first variable from w1 to x1, so that
// d/dx1 q = p exactly and q(w1, x2) = 0 for every x2.
inline BivariatePolyVec antiderivative_x1(const BivariatePolyVec& p, double w1) {
    BivariatePolyVec out(p.dim_out);
    for (const auto& [lm, coef] : p.terms) {
        const int l = lm.first;
        const int m = lm.second;
        std::vector<double> scaled(coef);
        for (double& c : scaled) c /= (l + 1);
        {
            std::vector<double>& slot = out.terms[{l + 1, m}];
            if (slot.empty()) slot.assign(out.dim_out, 0.0);
            for (int i = 0; i < out.dim_out; ++i) slot[i] += scaled[i];
        }
        double w1_pow = 1.0;
        for (int i = 0; i < l + 1; ++i) w1_pow *= w1;
        if (w1_pow != 0.0) {
            std::vector<double>& slot = out.terms[{0, m}];
            if (slot.empty()) slot.assign(out.dim_out, 0.0);
            for (int i = 0; i < out.dim_out; ++i) slot[i] -= scaled[i] * w1_pow;
        }
    }
    out.canonicalize();
    return out;
}

// phi(x1,x2) = sigma2(x1,x2) - integral_{w1}^{x1} d/dx2 sigma1(u, x2) du.
// The driving fields enter the W2-integral representation only through phi.
inline BivariatePolyVec compute_phi(const BivariatePolyVec& sigma1, const BivariatePolyVec& sigma2,
                                    double w1) {
    if (sigma1.dim_out != sigma2.dim_out)
        throw std::invalid_argument("compute_phi: sigma1/sigma2 dimension mismatch");
    BivariatePolyVec out = antiderivative_x1(partial(sigma1, 2), w1);
    for (auto& [lm, coef] : out.terms)
        for (double& c : coef) c = -c;
    for (const auto& [lm, coef] : sigma2.terms) {
        std::vector<double>& slot = out.terms[lm];
        if (slot.empty()) slot.assign(out.dim_out, 0.0);
        for (int i = 0; i < out.dim_out; ++i) slot[i] += coef[i];
    }
    out.canonicalize();
    return out;
}

// Bracket matrix at the base point: column for each (l, m) with
// 1 <= l+1+m <= n holds d1^{l+1} d2^m phi(w1, w2). Columns are sorted by the
// monomial order on (l+1, m); count is n(n+1)/2.
struct SigmaMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<MonomialIndex> col_index;  // (l+1, m) per column
    Eigen::MatrixXd data;
};

inline SigmaMatrix build_sigma_matrix(const BivariatePolyVec& phi, double w1, double w2, int n) {
    if (n < 1) throw std::invalid_argument("build_sigma_matrix: n must be >= 1");
    SigmaMatrix sigma;
    sigma.rows = phi.dim_out;
    for (const MonomialIndex& idx : simplex_indices(n))
        if (idx.a >= 1) sigma.col_index.push_back(idx);
    sigma.cols = static_cast<int>(sigma.col_index.size());
    sigma.data.resize(sigma.rows, sigma.cols);
    for (int j = 0; j < sigma.cols; ++j) {
        const int l = sigma.col_index[j].a - 1;
        const int m = sigma.col_index[j].b;
        const std::vector<double> column = eval(partial(partial(phi, 1, l + 1), 2, m), w1, w2);
        for (int i = 0; i < sigma.rows; ++i) sigma.data(i, j) = column[i];
    }
    return sigma;
}

// Numerical rank: singular values above max(rows, cols) * eps * sigma_max.
inline int numerical_rank(const Eigen::MatrixXd& m) {
    if (m.rows() == 0 || m.cols() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (sv.size() == 0) return 0;
    const double cut = std::max(m.rows(), m.cols()) * std::numeric_limits<double>::epsilon() * sv(0);
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > cut && sv(i) > 0.0) ++rank;
    return rank;
}

struct PhcVerdict {
    bool holds = false;
    int rank = 0;
    int cols = 0;
};

// Full-rank test of the bracket matrix; equivalent to the parabolic Hormander
// condition for the associated degenerate diffusion. Base-point independent.
inline PhcVerdict check_phc(const BivariatePolyVec& sigma1, const BivariatePolyVec& sigma2,
                            double w1, double w2, int n) {
    const BivariatePolyVec phi = compute_phi(sigma1, sigma2, w1);
    const SigmaMatrix sigma = build_sigma_matrix(phi, w1, w2, n);
    PhcVerdict verdict;
    verdict.cols = sigma.cols;
    verdict.rank = numerical_rank(sigma.data);
    verdict.holds = (verdict.rank == sigma.rows);
    return verdict;
}

// Minimum-norm least-squares solve via SVD with the numerical_rank threshold.
inline Eigen::VectorXd min_norm_solve(const Eigen::MatrixXd& m, const Eigen::VectorXd& rhs) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double cut =
        sv.size() == 0
            ? 0.0
            : std::max(m.rows(), m.cols()) * std::numeric_limits<double>::epsilon() * sv(0);
    Eigen::VectorXd inv_sv(sv.size());
    for (int i = 0; i < sv.size(); ++i) inv_sv(i) = (sv(i) > cut && sv(i) > 0.0) ? 1.0 / sv(i) : 0.0;
    return svd.matrixV() * inv_sv.asDiagonal() * (svd.matrixU().transpose() * rhs);
}

struct Reduction {
    BivariatePolyVec phi;
    BivariatePolyVec psi1;                // integral of sigma1 in x1 from w1
    std::vector<MonomialIndex> z_index;   // (l+1, m) coordinates of z3
    std::vector<double> z3;
    std::vector<double> z3_tilde;
};

// Translate a polynomial-field start pair into starting values of the monomial
// integral vector: the minimum-norm solutions of Sigma * z = w3 (and w3_tilde).
// Requires the rank condition; a residual above tolerance means the start is
// not reachable through this Sigma.
inline Reduction reduce_to_monomials(const BivariatePolyVec& sigma1, const BivariatePolyVec& sigma2,
                                     double w1, double w2, int n, const std::vector<double>& w3,
                                     const std::vector<double>& w3_tilde,
                                     double residual_tol = 1e-8) {
    if (static_cast<int>(w3.size()) != sigma1.dim_out ||
        static_cast<int>(w3_tilde.size()) != sigma1.dim_out)
        throw std::invalid_argument("reduce_to_monomials: w3 length != dim_out");
    Reduction red;
    red.phi = compute_phi(sigma1, sigma2, w1);
    red.psi1 = antiderivative_x1(sigma1, w1);
    const SigmaMatrix sigma = build_sigma_matrix(red.phi, w1, w2, n);
    const int rank = numerical_rank(sigma.data);
    if (rank != sigma.rows)
        throw phc_violation("reduce_to_monomials: rank " + std::to_string(rank) + " < " +
                            std::to_string(sigma.rows) + ", rank condition fails");
    red.z_index = sigma.col_index;
    Eigen::VectorXd rhs(sigma.rows), rhs_t(sigma.rows);
    for (int i = 0; i < sigma.rows; ++i) {
        rhs(i) = w3[i];
        rhs_t(i) = w3_tilde[i];
    }
    const Eigen::VectorXd z = min_norm_solve(sigma.data, rhs);
    const Eigen::VectorXd zt = min_norm_solve(sigma.data, rhs_t);
    const double res = (sigma.data * z - rhs).norm();
    const double res_t = (sigma.data * zt - rhs_t).norm();
    const double gate = residual_tol * (1.0 + std::max(rhs.norm(), rhs_t.norm()));
    if (res > gate || res_t > gate)
        throw inconsistent_start("reduce_to_monomials: least-squares residual " +
                                 std::to_string(std::max(res, res_t)) + " exceeds tolerance");
    red.z3.assign(z.data(), z.data() + z.size());
    red.z3_tilde.assign(zt.data(), zt.data() + zt.size());
    return red;
}

}  // namespace polycouple
