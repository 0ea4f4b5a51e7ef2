#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rydec/fft.hpp"
#include "rydec/qdt.hpp"
#include "rydec/quad.hpp"

namespace rydec {

/// Controls for the return-resummed rate evaluation on the two closed
/// channels of the core-excitation scheme.
struct PathSumConfig {
    int max_returns = 40;          // partial-sum cap when the resolvent is unsafe
    double contour_delta = 0.0;    // 0: min(kappa, Gamma_nbar)/10
    int n_nodes = 1 << 14;         // contour nodes / FFT size
    int pad = 8;                   // zero-pad factor for the fine zero-photon grid
    double t_step = 0.0;           // one-photon grid spacing; 0: automatic
    int tau_nodes = 64;            // emission-kernel quadrature
    int s_nodes = 24;              // return-count integral quadrature
    Eigen::Vector2cd dipole{1.0, 0.0};
    bool use_resolvent = true;
    double spectral_radius_cap = 0.999;
    /// Sample the amplitude arriving at the absorbing core symmetrically
    /// across the traversal, (1+|chi_22|)/2 per amplitude. This pins the
    /// absolute rate to the basis-expansion master equation; without it
    /// the raw resummation overcounts by e^{2 pi b2}/cosh^2(pi b2).
    bool core_flux_norm = true;
};

struct RateDecomposition {
    std::vector<double> t;       // zero-photon grid
    std::vector<double> gamma0;
    std::vector<double> t1_grid; // one-photon grid (coarser)
    std::vector<double> gamma1;
    double period = 0.0;
    std::map<std::string, std::string> metadata;
};

namespace detail_ps {

struct DressedData {
    DressedBasis dressed;
    Eigen::Matrix2cd chi_t;  // O^T chi O
    Eigen::Matrix2cd Lp;     // e^{-i pi/2} O^T L O
    Eigen::RowVector2cd row2; // (0,1) O
    Eigen::Vector2cd Dt;      // O^T dipole
    double beta2 = 0.0;
    double kappa = 0.0;
};

inline DressedData make_dressed(const ChannelModel& m, const Eigen::Vector2cd& dipole) {
    if (m.channels.size() != 2)
        throw std::invalid_argument("path sum: expects the two closed channels");
    DressedData d;
    d.dressed = dress_core(m);
    Eigen::Matrix2cd chi = Eigen::Matrix2cd::Zero();
    chi(0, 0) = std::exp(2.0 * pi * iu * m.channels[0].defect.mu());
    chi(1, 1) = std::exp(2.0 * pi * iu * m.channels[1].defect.mu());
    const Eigen::Matrix2cd O = d.dressed.transform;
    d.chi_t = O.transpose() * chi * O;
    Eigen::Matrix2cd L = Eigen::Matrix2cd::Zero();
    L(0, 1) = std::sqrt(m.core_decay_rate);
    d.Lp = -iu * (O.transpose() * L * O);
    d.row2 = O.row(1);
    d.Dt = O.transpose() * dipole;
    d.beta2 = m.channels[1].defect.beta;
    d.kappa = m.core_decay_rate;
    return d;
}

/// Closed-channel phase vector nu~_j(eps); open entries flagged by 0.
inline Eigen::Vector2cd phase_exponentials(cplx eps, const DressedBasis& d) {
    Eigen::Vector2cd e;
    for (int j = 0; j < 2; ++j) {
        const cplx z = eps - d.dressed_thresholds[j];
        if (theta_re(-z) == 0.0) {
            e[j] = 0.0;
            continue;
        }
        e[j] = std::exp(2.0 * pi * iu * inv_sqrt_neg2(z));
    }
    return e;
}

inline double spectral_radius(const Eigen::Matrix2cd& q) {
    const cplx tr = q(0, 0) + q(1, 1);
    const cplx det = q(0, 0) * q(1, 1) - q(0, 1) * q(1, 0);
    const cplx disc = std::sqrt(tr * tr - 4.0 * det);
    return std::max(std::abs(0.5 * (tr + disc)), std::abs(0.5 * (tr - disc)));
}

inline Eigen::Matrix2cd geometric_sum(const Eigen::Matrix2cd& q, bool resolvent, int cap,
                                      double radius_cap) {
    if (resolvent && spectral_radius(q) < radius_cap)
        return (Eigen::Matrix2cd::Identity() - q).inverse();
    Eigen::Matrix2cd acc = Eigen::Matrix2cd::Identity();
    Eigen::Matrix2cd pw = Eigen::Matrix2cd::Identity();
    for (int m = 1; m <= cap; ++m) {
        pw = pw * q;
        acc += pw;
    }
    if (pw.cwiseAbs().maxCoeff() > 1e-8)
        throw std::runtime_error("path sum: geometric tail above 1e-8 at the return cap");
    return acc;
}

struct ContourSpec {
    int n = 0;
    double h = 0.0, delta = 0.0, eps_start = 0.0, dt = 0.0;
};

inline ContourSpec make_contour(const ChannelModel& m, const FieldSpec& field,
                                double mean_energy, const PathSumConfig& cfg) {
    ContourSpec c;
    c.n = cfg.n_nodes;
    const double ec1 = m.channels[0].threshold;
    const double nubar = 1.0 / std::sqrt(-2.0 * (mean_energy - ec1));
    const double T = kepler_period(nubar);
    const double bw = 4.0 * std::sqrt(0.6931471805599453) / field.pulse_duration;
    double dt = cfg.t_step > 0.0 ? cfg.t_step : T / 32.0;
    // the window 2 pi / dt must cover 24 pulse bandwidths
    if (2.0 * pi / dt < 24.0 * bw) dt = 2.0 * pi / (24.0 * bw);
    c.dt = dt;
    c.h = 2.0 * pi / (c.n * dt);
    c.eps_start = mean_energy - 0.5 * c.n * c.h;
    if (cfg.contour_delta > 0.0) {
        c.delta = cfg.contour_delta;
    } else {
        const double ec2 = m.channels[1].threshold - m.cw_frequency;
        double gam = 0.0;
        if (mean_energy < ec2 && m.channels[1].defect.beta > 0.0)
            gam = 2.0 * m.channels[1].defect.beta * std::pow(-2.0 * (mean_energy - ec2), 1.5);
        double cand = 0.0;
        if (m.core_decay_rate > 0.0) cand = m.core_decay_rate;
        if (gam > 0.0) cand = cand > 0.0 ? std::min(cand, gam) : gam;
        c.delta = cand > 0.0 ? 0.1 * cand : c.h;
    }
    return c;
}

} // namespace detail_ps

/// Photon-emission kernel between return M1 in the lower and M2 in the
/// upper propagation segment, for observation time t: Gauss-Legendre
/// quadrature over the emission instant, node count doubled to 1e-8.
inline Eigen::Matrix2cd s_kernel(int m1, int m2, double t, cplx eps1, cplx eps2,
                                 const detail_ps::DressedData& dd, int tau_nodes = 64) {
    if (m1 < 0 || m2 < 0 || t <= 0.0) throw std::invalid_argument("s_kernel: bad arguments");
    const double T = t / (m1 + m2 + 1);
    const cplx nu1_0 = inv_sqrt_neg2(eps1 - dd.dressed.dressed_thresholds[0]);
    const cplx nu1_1 = inv_sqrt_neg2(eps1 - dd.dressed.dressed_thresholds[1]);
    const cplx nu2_0 = inv_sqrt_neg2(eps2 - dd.dressed.dressed_thresholds[0]);
    const cplx nu2_1 = inv_sqrt_neg2(eps2 - dd.dressed.dressed_thresholds[1]);
    auto eval = [&](int nq) {
        const QuadRule q = gauss_legendre(nq, 0.0, T);
        Eigen::Matrix2cd acc = Eigen::Matrix2cd::Zero();
        for (int k = 0; k < nq; ++k) {
            const double frac = q.x[k] / T;
            Eigen::Matrix2cd e2 = Eigen::Matrix2cd::Zero();
            e2(0, 0) = std::exp(2.0 * pi * iu * nu2_0 * (1.0 - frac));
            e2(1, 1) = std::exp(2.0 * pi * iu * nu2_1 * (1.0 - frac));
            Eigen::Matrix2cd e1 = Eigen::Matrix2cd::Zero();
            e1(0, 0) = std::exp(2.0 * pi * iu * nu1_0 * frac);
            e1(1, 1) = std::exp(2.0 * pi * iu * nu1_1 * frac);
            acc += q.w[k] * (e2 * dd.Lp * e1);
        }
        return acc;
    };
    Eigen::Matrix2cd val = eval(tau_nodes);
    for (int nq = 2 * tau_nodes; nq <= 16 * tau_nodes; nq *= 2) {
        const Eigen::Matrix2cd next = eval(nq);
        const double diff = (next - val).cwiseAbs().maxCoeff();
        val = next;
        if (diff < 1e-8 * std::max(1.0, val.cwiseAbs().maxCoeff() / T) * T) return val;
    }
    throw std::runtime_error("s_kernel: quadrature did not stabilize at 1e-8");
}

inline Eigen::Matrix2cd s_kernel(int m1, int m2, double t, cplx eps1, cplx eps2,
                                 const ChannelModel& m, const Eigen::Vector2cd& dipole,
                                 int tau_nodes = 64) {
    return s_kernel(m1, m2, t, eps1, eps2, detail_ps::make_dressed(m, dipole), tau_nodes);
}

/// Zero- and one-photon autoionization rates of the pulse-excited packet.
/// gamma0 lives on a fine grid up to t_max0, gamma1 on the coarse grid up
/// to t_max1 with the emission-time integral accumulated on that grid.
inline RateDecomposition path_sum_rates(const ChannelModel& m, const FieldSpec& field,
                                        double mean_energy, double t_max0, double t_max1,
                                        const PathSumConfig& cfg = {}) {
    m.validate();
    using namespace detail_ps;
    const DressedData dd = make_dressed(m, cfg.dipole);
    const ContourSpec cs = make_contour(m, field, mean_energy, cfg);
    const int N = cs.n;

    const double flux_norm =
        cfg.core_flux_norm ? std::pow(0.5 * (1.0 + std::exp(-2.0 * pi * dd.beta2)), 2) : 1.0;
    const double pref_loss = 1.0 - std::exp(-4.0 * pi * dd.beta2);
    const double pref0 = pref_loss * flux_norm / (2.0 * pi);
    const double pref1 = pref_loss * flux_norm / std::pow(2.0 * pi, 3);

    // per-node dressed data; nu is kept so partial-orbit phases can be
    // exponentiated directly (pow on e^{2 pi i nu} would wrap the argument)
    std::vector<Eigen::Vector2cd> phases(N), nus(N);
    std::vector<bool> closed0(N), closed1(N);
    std::vector<double> pulse(N);
    std::vector<Eigen::Matrix2cd> qmatA(N), qmatB(N);
    double max_radius = 0.0;
    for (int k = 0; k < N; ++k) {
        const cplx eps(cs.eps_start + k * cs.h, cs.delta);
        Eigen::Vector2cd ph = Eigen::Vector2cd::Zero(), nu = Eigen::Vector2cd::Zero();
        for (int j = 0; j < 2; ++j) {
            const cplx z = eps - dd.dressed.dressed_thresholds[j];
            const bool closed = theta_re(-z) > 0.0;
            (j == 0 ? closed0 : closed1)[k] = closed;
            if (!closed) continue;
            nu[j] = inv_sqrt_neg2(z);
            ph[j] = std::exp(2.0 * pi * iu * nu[j]);
        }
        phases[k] = ph;
        nus[k] = nu;
        pulse[k] = pulse_ft(eps.real() - mean_energy, field);
        qmatA[k] = ph.asDiagonal() * dd.chi_t;  // A = e^{i2pi nu} chi~
        qmatB[k] = dd.chi_t * ph.asDiagonal();  // B = chi~ e^{i2pi nu}
        max_radius = std::max(max_radius, spectral_radius(qmatA[k]));
    }

    RateDecomposition out;
    const double ec1 = m.channels[0].threshold;
    out.period = kepler_period(1.0 / std::sqrt(-2.0 * (mean_energy - ec1)));
    out.metadata["contour_nodes"] = std::to_string(N);
    out.metadata["contour_delta"] = std::to_string(cs.delta);
    out.metadata["spectral_radius_max"] = std::to_string(max_radius);
    out.metadata["flux_norm"] = std::to_string(flux_norm);

    // ---- zero photon: single contour integral, fine grid by zero padding
    {
        std::vector<cplx> f(N);
        for (int k = 0; k < N; ++k) {
            const Eigen::Matrix2cd geo =
                geometric_sum(qmatA[k], cfg.use_resolvent, cfg.max_returns,
                              cfg.spectral_radius_cap);
            const Eigen::Vector2cd vec =
                geo * (phases[k].asDiagonal() * (dd.Dt * pulse[k]));
            f[k] = (dd.row2 * vec)(0, 0);
        }
        const int Npad = N * cfg.pad;
        Fft fft(Npad);
        std::vector<cplx> F;
        fft.forward(f, F);
        const double dt0 = cs.dt / cfg.pad;
        const size_t jmax = std::min<size_t>(Npad - 1, static_cast<size_t>(t_max0 / dt0) + 1);
        out.t.resize(jmax + 1);
        out.gamma0.resize(jmax + 1);
        for (size_t j = 0; j <= jmax; ++j) {
            const double t = j * dt0;
            out.t[j] = t;
            const double amp = cs.h * std::exp(cs.delta * t);
            out.gamma0[j] = pref0 * std::norm(F[j]) * amp * amp;
        }
    }

    // ---- one photon: separated (s, u) node representation
    if (dd.kappa > 0.0 && t_max1 > 0.0) {
        const QuadRule su = gauss_legendre(cfg.s_nodes, 0.0, 1.0);
        const QuadRule uu = gauss_legendre(cfg.tau_nodes, 0.0, 1.0);
        const size_t imax = static_cast<size_t>(t_max1 / cs.dt) + 1;
        out.t1_grid.resize(imax + 1);
        for (size_t i = 0; i <= imax; ++i) out.t1_grid[i] = i * cs.dt;

        const int n_su = cfg.s_nodes * cfg.tau_nodes;
        // P rows (already multiplied by Lp) and Q columns on the time grid
        std::vector<std::vector<Eigen::RowVector2cd>> P(n_su);
        std::vector<std::vector<Eigen::Vector2cd>> Q(n_su);
        Fft fft(N);
        std::vector<cplx> buf(N), F;

        std::vector<Eigen::Matrix2cd> inv_sA(N), inv_sB(N);
        for (int is = 0; is < cfg.s_nodes; ++is) {
            const double s = su.x[is];
            for (int k = 0; k < N; ++k) {
                inv_sA[k] = (Eigen::Matrix2cd::Identity() - s * qmatA[k]).inverse();
                inv_sB[k] = (Eigen::Matrix2cd::Identity() - s * qmatB[k]).inverse();
            }
            for (int iup = 0; iup < cfg.tau_nodes; ++iup) {
                const double u = uu.x[iup];
                const double wgt = su.w[is] * uu.w[iup];
                const int slot = is * cfg.tau_nodes + iup;
                P[slot].assign(imax + 1, Eigen::RowVector2cd::Zero());
                Q[slot].assign(imax + 1, Eigen::Vector2cd::Zero());
                for (int comp = 0; comp < 2; ++comp) {
                    // row side at energy eps2: row2 (I - sA)^-1 E2(u) Lp
                    for (int k = 0; k < N; ++k) {
                        const bool closed = comp == 0 ? closed0[k] : closed1[k];
                        if (!closed) { buf[k] = 0.0; continue; }
                        Eigen::RowVector2cd row = dd.row2 * inv_sA[k];
                        const cplx e2 = std::exp(2.0 * pi * iu * nus[k][comp] * (1.0 - u));
                        buf[k] = row[comp] * e2;
                    }
                    fft.forward(buf, F);
                    for (size_t j = 0; j <= imax; ++j) P[slot][j][comp] = F[j];
                    // column side at energy eps1: E1(u) (I - sB)^-1 Dt pulse
                    for (int k = 0; k < N; ++k) {
                        const bool closed = comp == 0 ? closed0[k] : closed1[k];
                        if (!closed) { buf[k] = 0.0; continue; }
                        const Eigen::Vector2cd col = inv_sB[k] * (dd.Dt * pulse[k]);
                        const cplx e1 = std::exp(2.0 * pi * iu * nus[k][comp] * u);
                        buf[k] = col[comp] * e1;
                    }
                    fft.forward(buf, F);
                    for (size_t j = 0; j <= imax; ++j) Q[slot][j][comp] = F[j];
                }
                for (size_t j = 0; j <= imax; ++j) {
                    P[slot][j] = wgt * (P[slot][j] * dd.Lp);
                }
            }
        }

        out.gamma1.assign(imax + 1, 0.0);
        const double h2 = cs.h * cs.h;
        for (size_t j = 1; j <= imax; ++j) {
            const double t = out.t1_grid[j];
            double integral = 0.0;
            for (size_t i = 0; i <= j; ++i) {
                cplx amp = 0.0;
                const size_t dj = j - i;
                for (int slot = 0; slot < n_su; ++slot)
                    amp += P[slot][dj][0] * Q[slot][i][0] + P[slot][dj][1] * Q[slot][i][1];
                const double val = std::norm(amp);
                integral += (i == 0 || i == j) ? 0.5 * val : val;
            }
            integral *= cs.dt;
            out.gamma1[j] =
                pref1 * t * t * h2 * h2 * std::exp(2.0 * cs.delta * t) * integral;
        }
    } else {
        out.t1_grid = {0.0};
        out.gamma1 = {0.0};
    }
    return out;
}

/// Caption normalization gamma~ = gamma T_orb tau_a / |D Ea0|^2.
inline std::vector<double> scaled_rate(const std::vector<double>& gamma, const FieldSpec& field,
                                       const Eigen::Vector2cd& dipole, double period) {
    const double dnorm = dipole.norm();
    if (dnorm <= 0.0 || field.pulse_peak == 0.0)
        throw std::invalid_argument("scaled_rate: zero dipole or pulse peak");
    const double scale =
        period * field.pulse_duration / (dnorm * dnorm * field.pulse_peak * field.pulse_peak);
    std::vector<double> out(gamma.size());
    for (size_t i = 0; i < gamma.size(); ++i) out[i] = gamma[i] * scale;
    return out;
}

} // namespace rydec
