#pragma once

#include <algorithm>
#include <vector>

#include "polycouple/polynomial.hpp"

namespace fdtest {

// Interpolation-based finite-difference weights for the `order`-th derivative
// at x0 on arbitrary nodes x. Exact for polynomials of degree < x.size().
inline std::vector<double> fd_weights(int order, const std::vector<double>& x, double x0) {
    const int nn = static_cast<int>(x.size());
    std::vector<std::vector<double>> c(nn, std::vector<double>(order + 1, 0.0));
    double c1 = 1.0;
    double c4 = x[0] - x0;
    c[0][0] = 1.0;
    for (int i = 1; i < nn; ++i) {
        const int mn = std::min(i, order);
        double c2 = 1.0;
        double c5 = c4;
        c4 = x[i] - x0;
        for (int j = 0; j < i; ++j) {
            const double c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k)
                    c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(nn);
    for (int j = 0; j < nn; ++j) w[j] = c[j][order];
    return w;
}

// Mixed partial d^{p1}_x1 d^{p2}_x2 of component `row` of p at (x0, y0) via a
// tensor stencil. points=9 nodes per axis are exact through degree 8, so test
// polynomials must stay at degree <= 8 per variable.
inline double fd_mixed(const polycouple::BivariatePolyVec& p, int row, int p1, int p2, double x0,
                       double y0, int points = 9, double h = 0.3) {
    std::vector<double> xs(points), ys(points);
    for (int i = 0; i < points; ++i) {
        xs[i] = x0 + (i - (points - 1) / 2.0) * h;
        ys[i] = y0 + (i - (points - 1) / 2.0) * h;
    }
    const std::vector<double> wx = fd_weights(p1, xs, x0);
    const std::vector<double> wy = fd_weights(p2, ys, y0);
    double acc = 0.0;
    for (int i = 0; i < points; ++i)
        for (int j = 0; j < points; ++j)
            acc += wx[i] * wy[j] * polycouple::eval(p, xs[i], ys[j])[row];
    return acc;
}

}  // namespace fdtest
