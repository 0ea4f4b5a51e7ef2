#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>

namespace rydec {

/// Adaptive Dormand-Prince 5(4) on complex vectors. Error control is a
/// mixed absolute/relative max norm; rejected steps shrink h and retry.
struct OdeOptions {
    double rel_tol = 1e-9;
    double abs_tol = 1e-12;
    double h_init = 0.0;   // 0: pick from the first derivative
    double h_max = 0.0;    // 0: no cap
    long max_steps = 50'000'000;
    // applied to y after every accepted step (e.g. re-Hermitization)
    std::function<void(Eigen::VectorXcd&)> post_accept;
};

struct OdeStats {
    long accepted = 0;
    long rejected = 0;
};

/// Integrates dy/dt = f(t, y) from t_grid.front() to t_grid.back(),
/// invoking on_sample(i, y) exactly at every grid point. The right-hand
/// side is assumed smooth; step rejection handles the rest.
inline OdeStats integrate_rk45(
    const std::function<void(double, const Eigen::VectorXcd&, Eigen::VectorXcd&)>& f,
    Eigen::VectorXcd y, const std::vector<double>& t_grid,
    const std::function<void(size_t, double, const Eigen::VectorXcd&)>& on_sample,
    const OdeOptions& opt = {}) {
    // Dormand-Prince coefficients
    static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static const double a21 = 1.0 / 5;
    static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
    static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                        b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

    if (t_grid.size() < 2) throw std::invalid_argument("integrate_rk45: need >= 2 grid points");
    OdeStats stats;
    const size_t n = y.size();
    Eigen::VectorXcd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), yerr(n);

    double t = t_grid.front();
    on_sample(0, t, y);
    f(t, y, k1);

    double h = opt.h_init;
    if (h <= 0.0) {
        double d0 = y.cwiseAbs().maxCoeff() + opt.abs_tol;
        double d1 = k1.cwiseAbs().maxCoeff() + 1e-300;
        h = 0.01 * d0 / d1;
    }
    if (opt.h_max > 0.0) h = std::min(h, opt.h_max);

    size_t next = 1;
    bool k1_fresh = true;
    while (next < t_grid.size()) {
        const double t_target = t_grid[next];
        double h_step = std::min(h, t_target - t);
        bool clipped = h_step < h;

        if (!k1_fresh) f(t, y, k1);
        ytmp = y + h_step * a21 * k1;
        f(t + c2 * h_step, ytmp, k2);
        ytmp = y + h_step * (a31 * k1 + a32 * k2);
        f(t + c3 * h_step, ytmp, k3);
        ytmp = y + h_step * (a41 * k1 + a42 * k2 + a43 * k3);
        f(t + c4 * h_step, ytmp, k4);
        ytmp = y + h_step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        f(t + c5 * h_step, ytmp, k5);
        ytmp = y + h_step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        f(t + h_step, ytmp, k6);
        ynew = y + h_step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        f(t + h_step, ynew, k7);
        yerr = h_step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        double sc = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double tol = opt.abs_tol + opt.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            sc = std::max(sc, std::abs(yerr[i]) / tol);
        }

        if (sc <= 1.0) {
            t += h_step;
            y.swap(ynew);
            if (opt.post_accept) {
                opt.post_accept(y);
                k1_fresh = false;
            } else {
                k1 = k7; // FSAL
                k1_fresh = true;
            }
            ++stats.accepted;
            while (next < t_grid.size() && t >= t_grid[next] - 1e-12 * std::abs(t_grid[next])) {
                on_sample(next, t, y);
                ++next;
            }
        } else {
            ++stats.rejected;
            k1_fresh = true; // k1 still matches (t, y)
        }
        double fac = 0.9 * std::pow(std::max(sc, 1e-10), -0.2);
        fac = std::min(5.0, std::max(0.2, fac));
        double h_new = h_step * fac;
        if (!clipped || sc > 1.0) h = h_new;
        if (opt.h_max > 0.0) h = std::min(h, opt.h_max);
        if (stats.accepted + stats.rejected > opt.max_steps)
            throw std::runtime_error("integrate_rk45: step budget exhausted");
    }
    return stats;
}

} // namespace rydec
