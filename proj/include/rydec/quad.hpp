#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace rydec {

struct QuadRule {
    std::vector<double> x; // nodes
    std::vector<double> w; // weights
};

/// Gauss-Legendre rule on [a, b]. Nodes by Newton iteration on P_n.
inline QuadRule gauss_legendre(int n, double a, double b) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: n < 1");
    QuadRule r;
    r.x.resize(n);
    r.w.resize(n);
    const double xm = 0.5 * (b + a), xl = 0.5 * (b - a);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = 1.0, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
            }
            pp = n * (z * p1 - p2) / (z * z - 1.0);
            double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) < 1e-15) break;
        }
        r.x[i] = xm - xl * z;
        r.x[n - 1 - i] = xm + xl * z;
        r.w[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        r.w[n - 1 - i] = r.w[i];
    }
    return r;
}

/// Cumulative integral on an arbitrary grid (trapezoid), result[i] = int_{x0}^{xi}.
template <typename T>
std::vector<T> cumtrapz(const std::vector<double>& x, const std::vector<T>& y) {
    std::vector<T> out(x.size(), T{});
    for (size_t i = 1; i < x.size(); ++i)
        out[i] = out[i - 1] + 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return out;
}

template <typename T>
T trapz(const std::vector<double>& x, const std::vector<T>& y) {
    T s{};
    for (size_t i = 1; i < x.size(); ++i)
        s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return s;
}

} // namespace rydec
