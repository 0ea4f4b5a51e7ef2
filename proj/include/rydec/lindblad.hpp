#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rydec/ode.hpp"
#include "rydec/pdm.hpp"
#include "rydec/qdt.hpp"
#include "rydec/rng.hpp"
#include "rydec/timeseries.hpp"

namespace rydec {

/// Operators of a truncated-basis open system. Absorbers are rank-one
/// non-Hermitian losses -i/2 |w><w| without refeeding (continuum exits);
/// jumps are trace-preserving Lindblad channels.
struct OperatorBundle {
    Eigen::MatrixXcd H; // Hermitian part, rotating frame
    std::vector<Eigen::MatrixXcd> jumps;
    std::vector<Eigen::VectorXcd> absorbers;
    std::vector<std::string> absorber_labels;

    Eigen::MatrixXcd heff() const {
        Eigen::MatrixXcd he = H;
        for (const auto& L : jumps) he -= 0.5 * iu * (L.adjoint() * L);
        for (const auto& w : absorbers) he -= 0.5 * iu * (w * w.adjoint());
        return he;
    }
    Eigen::Index dim() const { return H.rows(); }
};

/// Per-orbit absorber strength reproducing e^{2 pi i mu} core scattering:
/// Gamma_n = (2/pi) tanh(pi beta) / nu^3. Linear in beta for small beta,
/// saturating at large beta where a single traversal absorbs everything.
inline double absorber_strength_sq(double beta, double nu) {
    return 2.0 / pi * std::tanh(pi * beta) / (nu * nu * nu);
}

// --- basis windows ---------------------------------------------------------

struct BasisSpec {
    int n_min = 0;
    int n_max = 0;
    bool include_ground = false;

    void validate(double max_alpha) const {
        if (!(n_min > max_alpha + 1.0))
            throw std::invalid_argument("BasisSpec: n_min too small for the defects");
        if (n_max <= n_min) throw std::invalid_argument("BasisSpec: n_max <= n_min");
    }
    int count() const { return n_max - n_min + 1; }
};

/// Truncation rule: every n within 8x the largest width of the mean
/// excited energy, plus guard states on both sides.
inline BasisSpec suggest_window(double mean_energy, double width, double alpha,
                                int guard = 10) {
    if (mean_energy >= 0.0) throw std::invalid_argument("suggest_window: mean energy >= 0");
    const double nbar = 1.0 / std::sqrt(-2.0 * mean_energy) + alpha;
    auto n_of = [&](double e) {
        if (e >= -1e-12) return 1e9;
        return 1.0 / std::sqrt(-2.0 * e) + alpha;
    };
    const double lo = n_of(mean_energy - 8.0 * width);
    const double hi = n_of(mean_energy + 8.0 * width);
    BasisSpec b;
    b.n_min = std::max(static_cast<int>(alpha) + 2, static_cast<int>(std::floor(lo)) - guard);
    b.n_max = static_cast<int>(std::ceil(std::min(hi, nbar + 2e3))) + guard;
    return b;
}

/// Throws unless the effectively excited window sits strictly inside the
/// truncated spectrum.
inline void check_window(const BasisSpec& b, double mean_energy, double width, double alpha) {
    const double e_lo = bound_energy(b.n_min, QuantumDefect(alpha, 0.0));
    const double e_hi = bound_energy(b.n_max, QuantumDefect(alpha, 0.0));
    if (!(mean_energy - 3.0 * width > e_lo && mean_energy + 3.0 * width < e_hi))
        throw std::invalid_argument("BasisSpec: excited window not inside the truncated spectrum");
}

// --- ICE three-channel system ----------------------------------------------

/// Two closed channels (core ground / core excited) on a shared n window.
/// The autoionization continuum enters through Im mu_2 as a core-localized
/// absorber instead of a discretized third channel.
struct IceSystem {
    OperatorBundle ops;
    Eigen::VectorXcd psi0;
    double mean_energy = 0.0; // absolute frame zero, a.u.
    double period = 0.0;      // T_orb of the packet channel
    int nn = 0;               // states per channel
    BasisSpec basis;
    std::vector<double> nu1, nu2;

    Eigen::Index index(int channel, int i) const { return channel * nn + i; }
};

/// Assemble H, V_ICE (spectator coupling through the radial identity,
/// expanded over bound-bound overlaps), core-decay Lindblad operator and
/// the autoionization absorber.
inline IceSystem build_ice_system(const ChannelModel& m, const BasisSpec& basis,
                                  const FieldSpec& field, const Eigen::Vector2cd& dipole,
                                  double mean_energy) {
    m.validate();
    if (m.channels.size() != 2)
        throw std::invalid_argument("build_ice_system: expects the two closed channels");
    const double a1 = m.channels[0].defect.alpha;
    const double a2 = m.channels[1].defect.alpha;
    basis.validate(std::max(a1, a2));

    IceSystem sys;
    sys.basis = basis;
    sys.nn = basis.count();
    sys.mean_energy = mean_energy;
    const int nn = sys.nn;
    const Eigen::Index dim = 2 * nn;

    const double ec1 = m.channels[0].threshold;
    const double ec2 = m.channels[1].threshold - m.cw_frequency;

    sys.nu1.resize(nn);
    sys.nu2.resize(nn);
    Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(dim, dim);
    for (int i = 0; i < nn; ++i) {
        const int n = basis.n_min + i;
        sys.nu1[i] = n - a1;
        sys.nu2[i] = n - a2;
        H(sys.index(0, i), sys.index(0, i)) = ec1 - 0.5 / (sys.nu1[i] * sys.nu1[i]) - mean_energy;
        H(sys.index(1, i), sys.index(1, i)) = ec2 - 0.5 / (sys.nu2[i] * sys.nu2[i]) - mean_energy;
    }
    // spectator coupling: -Omega/2 times the radial identity in the two bases
    Eigen::MatrixXd S(nn, nn);
    for (int i = 0; i < nn; ++i)
        for (int j = 0; j < nn; ++j) S(i, j) = bound_overlap(sys.nu1[i], sys.nu2[j]);
    for (int i = 0; i < nn; ++i)
        for (int j = 0; j < nn; ++j) {
            H(sys.index(0, i), sys.index(1, j)) = -0.5 * m.core_rabi * S(i, j);
            H(sys.index(1, j), sys.index(0, i)) = -0.5 * m.core_rabi * S(i, j);
        }
    sys.ops.H = std::move(H);

    if (m.core_decay_rate > 0.0) {
        Eigen::MatrixXcd L = Eigen::MatrixXcd::Zero(dim, dim);
        const double sk = std::sqrt(m.core_decay_rate);
        for (int i = 0; i < nn; ++i)
            for (int j = 0; j < nn; ++j) L(sys.index(0, i), sys.index(1, j)) = sk * S(i, j);
        sys.ops.jumps.push_back(std::move(L));
    }

    for (int c = 0; c < 2; ++c) {
        const double beta = m.channels[c].defect.beta;
        if (beta <= 0.0) continue;
        Eigen::VectorXcd w = Eigen::VectorXcd::Zero(dim);
        const auto& nu = c == 0 ? sys.nu1 : sys.nu2;
        for (int i = 0; i < nn; ++i)
            w(sys.index(c, i)) = std::sqrt(absorber_strength_sq(beta, nu[i]));
        sys.ops.absorbers.push_back(std::move(w));
        sys.ops.absorber_labels.push_back(c == 0 ? "photo_ch1" : "autoionization");
    }

    // first-order packet: amplitudes dipole x pulse spectrum at the detuning
    sys.psi0 = Eigen::VectorXcd::Zero(dim);
    for (int c = 0; c < 2; ++c) {
        if (dipole[c] == cplx(0.0, 0.0)) continue;
        const auto& nu = c == 0 ? sys.nu1 : sys.nu2;
        for (int i = 0; i < nn; ++i) {
            const double detun = sys.ops.H(sys.index(c, i), sys.index(c, i)).real();
            sys.psi0(sys.index(c, i)) =
                dipole[c] * std::pow(nu[i], -1.5) * pulse_ft(detun, field);
        }
    }

    const double nubar = 1.0 / std::sqrt(-2.0 * (mean_energy - ec1));
    sys.period = kepler_period(nubar);
    return sys;
}

// --- PDM single-series system ------------------------------------------------

struct PdmSystemOptions {
    int cap_start = 0;     // absorbing ladder top from this n (0: off)
    double cap_rate = 0.0; // peak absorption rate of the cap, a.u.
    double direct_loss = 0.0; // ground-state loss booked as direct ionization
};

/// Ground state plus one Rydberg series in the rotating frame. The
/// phase-noise Lindblad operator sqrt(2b)|g><g| is attached for master
/// integration; the stochastic solver applies the noise explicitly.
struct PdmSystem {
    OperatorBundle ops;
    Eigen::VectorXcd psi0;
    PdmParams params;
    BasisSpec basis;
    double period = 0.0;
    std::vector<double> nu;      // series effective quantum numbers
    std::vector<double> detuning; // series diagonal, a.u.
    Eigen::VectorXd coupling;    // d_n, a.u.

    Eigen::Index ground() const { return 0; }
    Eigen::Index level(int i) const { return 1 + i; }
    int n_levels() const { return static_cast<int>(nu.size()); }
};

inline PdmSystem build_pdm_system(const PdmParams& p, const BasisSpec& basis,
                                  const PdmSystemOptions& opt = {}) {
    p.validate();
    basis.validate(p.defect.alpha);
    PdmSystem sys;
    sys.params = p;
    sys.basis = basis;
    const int nn = basis.count();
    const Eigen::Index dim = 1 + nn;

    sys.nu.resize(nn);
    sys.detuning.resize(nn);
    sys.coupling.resize(nn);
    Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(dim, dim);
    for (int i = 0; i < nn; ++i) {
        const int n = basis.n_min + i;
        sys.nu[i] = n - p.defect.alpha;
        sys.detuning[i] = -0.5 / (sys.nu[i] * sys.nu[i]) - p.mean_energy;
        sys.coupling[i] = std::sqrt(p.depletion_rate / (2.0 * pi)) * std::pow(sys.nu[i], -1.5);
        H(sys.level(i), sys.level(i)) = sys.detuning[i];
        H(sys.ground(), sys.level(i)) = -sys.coupling[i];
        H(sys.level(i), sys.ground()) = -sys.coupling[i];
    }
    sys.ops.H = std::move(H);

    Eigen::MatrixXcd L = Eigen::MatrixXcd::Zero(dim, dim);
    L(0, 0) = std::sqrt(2.0 * p.bandwidth);
    sys.ops.jumps.push_back(std::move(L));

    if (p.defect.beta > 0.0) {
        Eigen::VectorXcd w = Eigen::VectorXcd::Zero(dim);
        for (int i = 0; i < nn; ++i)
            w(sys.level(i)) = std::sqrt(absorber_strength_sq(p.defect.beta, sys.nu[i]));
        sys.ops.absorbers.push_back(std::move(w));
        sys.ops.absorber_labels.push_back("photoionization");
    }
    if (opt.cap_start > 0 && opt.cap_rate > 0.0) {
        if (opt.cap_start <= basis.n_min || opt.cap_start > basis.n_max)
            throw std::invalid_argument("build_pdm_system: cap outside the basis window");
        Eigen::VectorXcd w = Eigen::VectorXcd::Zero(dim);
        for (int i = 0; i < nn; ++i) {
            const int n = basis.n_min + i;
            if (n < opt.cap_start) continue;
            const double x = static_cast<double>(n - opt.cap_start) /
                             std::max(1, basis.n_max - opt.cap_start);
            w(sys.level(i)) = std::sqrt(opt.cap_rate * x * x);
        }
        sys.ops.absorbers.push_back(std::move(w));
        sys.ops.absorber_labels.push_back("threshold_cap");
    }
    if (opt.direct_loss > 0.0) {
        Eigen::VectorXcd w = Eigen::VectorXcd::Zero(dim);
        w(0) = std::sqrt(opt.direct_loss);
        sys.ops.absorbers.push_back(std::move(w));
        sys.ops.absorber_labels.push_back("direct");
    }

    sys.psi0 = Eigen::VectorXcd::Zero(dim);
    sys.psi0(0) = 1.0;
    const double nbar = 1.0 / std::sqrt(-2.0 * p.mean_energy);
    sys.period = kepler_period(nbar);
    return sys;
}

// --- master equation ----------------------------------------------------------

struct MasterOptions {
    double rel_tol = 1e-9;
    double abs_tol = 1e-13;
    bool hermitize = true;
};

struct MasterTrajectory {
    std::vector<double> t;
    std::vector<Eigen::MatrixXcd> rho;
    OdeStats stats;
};

/// Integrates the optical Bloch equation
///   drho = -i(Heff rho - rho Heff^+) + sum_k L_k rho L_k^+
/// with adaptive RK45 on the vectorized density matrix.
inline void evolve_master_observe(
    const Eigen::MatrixXcd& rho0, const OperatorBundle& ops, const std::vector<double>& t_grid,
    const std::function<void(size_t, double, const Eigen::MatrixXcd&)>& observer,
    const MasterOptions& mo = {}, OdeStats* stats_out = nullptr) {
    const Eigen::Index n = ops.dim();
    if (rho0.rows() != n || rho0.cols() != n)
        throw std::invalid_argument("evolve_master: dimension mismatch");
    const Eigen::MatrixXcd heff = ops.heff();

    auto rhs = [&](double, const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) {
        Eigen::Map<const Eigen::MatrixXcd> rho(y.data(), n, n);
        dy.resize(n * n);
        Eigen::Map<Eigen::MatrixXcd> out(dy.data(), n, n);
        out.noalias() = -iu * (heff * rho);
        out.noalias() += iu * (rho * heff.adjoint());
        for (const auto& L : ops.jumps) out.noalias() += L * rho * L.adjoint();
    };

    OdeOptions opt;
    opt.rel_tol = mo.rel_tol;
    opt.abs_tol = mo.abs_tol;
    if (mo.hermitize)
        opt.post_accept = [n](Eigen::VectorXcd& y) {
            Eigen::Map<Eigen::MatrixXcd> rho(y.data(), n, n);
            rho = 0.5 * (rho + rho.adjoint()).eval();
        };

    Eigen::VectorXcd y0 = Eigen::Map<const Eigen::VectorXcd>(rho0.data(), n * n);
    auto stats = integrate_rk45(
        rhs, y0, t_grid,
        [&](size_t i, double t, const Eigen::VectorXcd& y) {
            Eigen::Map<const Eigen::MatrixXcd> rho(y.data(), n, n);
            observer(i, t, rho);
        },
        opt);
    if (stats_out) *stats_out = stats;
}

inline MasterTrajectory evolve_master(const Eigen::MatrixXcd& rho0, const OperatorBundle& ops,
                                      const std::vector<double>& t_grid,
                                      const MasterOptions& mo = {}) {
    MasterTrajectory tr;
    tr.t = t_grid;
    tr.rho.resize(t_grid.size());
    evolve_master_observe(
        rho0, ops, t_grid,
        [&](size_t i, double, const Eigen::MatrixXcd& rho) { tr.rho[i] = rho; }, mo, &tr.stats);
    return tr;
}

/// Per-absorber loss rates gamma_c(t) = <w_c| rho |w_c> of a stored
/// trajectory, plus their sum.
struct RateAttribution {
    std::vector<double> t;
    std::vector<std::string> labels;
    std::vector<std::vector<double>> gamma; // [channel][time]
    std::vector<double> total;
};

inline RateAttribution ionization_rate(const MasterTrajectory& tr, const OperatorBundle& ops) {
    RateAttribution out;
    out.t = tr.t;
    out.labels = ops.absorber_labels;
    out.gamma.assign(ops.absorbers.size(), std::vector<double>(tr.t.size(), 0.0));
    out.total.assign(tr.t.size(), 0.0);
    for (size_t i = 0; i < tr.t.size(); ++i) {
        for (size_t c = 0; c < ops.absorbers.size(); ++c) {
            const double g = std::max(
                0.0, (ops.absorbers[c].adjoint() * tr.rho[i] * ops.absorbers[c])(0, 0).real());
            out.gamma[c][i] = g;
            out.total[i] += g;
        }
    }
    return out;
}

// --- eigenbasis propagation ---------------------------------------------------

/// Spectral decomposition of the (time-independent) effective Hamiltonian;
/// exact propagation between jumps.
class EffectivePropagator {
public:
    explicit EffectivePropagator(const Eigen::MatrixXcd& heff) {
        Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(heff);
        if (es.info() != Eigen::Success)
            throw std::runtime_error("EffectivePropagator: eigensolver failed");
        V_ = es.eigenvectors();
        lambda_ = es.eigenvalues();
        Vinv_ = V_.inverse();
        gram_ = V_.adjoint() * V_;
    }

    const Eigen::VectorXcd& eigenvalues() const { return lambda_; }

    Eigen::VectorXcd coeffs(const Eigen::VectorXcd& psi) const { return Vinv_ * psi; }
    Eigen::VectorXcd state(const Eigen::VectorXcd& y) const { return V_ * y; }

    void advance(Eigen::VectorXcd& y, double dt) const {
        for (Eigen::Index k = 0; k < y.size(); ++k)
            y[k] *= std::exp(-iu * lambda_[k] * dt);
    }
    double norm2(const Eigen::VectorXcd& y) const {
        return std::max(0.0, (y.adjoint() * (gram_ * y))(0, 0).real());
    }
    Eigen::VectorXcd propagate(const Eigen::VectorXcd& psi, double dt) const {
        Eigen::VectorXcd y = coeffs(psi);
        advance(y, dt);
        return state(y);
    }

private:
    Eigen::MatrixXcd V_, Vinv_, gram_;
    Eigen::VectorXcd lambda_;
};

// --- deterministic unraveling -------------------------------------------------

/// Photon-number resolved density contributions at a single time, built by
/// nested time-ordered quadrature with jump insertions. N <= 2.
struct PhotonResolvedDensity {
    double time = 0.0;
    std::vector<Eigen::MatrixXcd> contributions; // index = photon count
    double quad_error = 0.0; // achieved estimate from grid halving
};

inline PhotonResolvedDensity unravel_deterministic(const Eigen::VectorXcd& psi0,
                                                   const OperatorBundle& ops, double t,
                                                   int n_max, int quad_points = 64) {
    if (n_max < 0 || n_max > 2)
        throw std::invalid_argument("unravel_deterministic: N_max must be 0, 1 or 2");
    if (quad_points % 2 != 0) ++quad_points;
    const EffectivePropagator prop(ops.heff());

    PhotonResolvedDensity out;
    out.time = t;
    Eigen::VectorXcd psi_t = prop.propagate(psi0, t);
    out.contributions.push_back(psi_t * psi_t.adjoint());
    if (n_max == 0 || ops.jumps.empty()) {
        out.contributions.resize(n_max + 1, Eigen::MatrixXcd::Zero(psi0.size(), psi0.size()));
        return out;
    }

    auto rho1_on_grid = [&](int m) {
        // Simpson over the emission time t1 in [0, t]
        Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(psi0.size(), psi0.size());
        const double h = t / m;
        for (int i = 0; i <= m; ++i) {
            const double t1 = h * i;
            Eigen::VectorXcd branch = Eigen::VectorXcd::Zero(psi0.size());
            const Eigen::VectorXcd pre = prop.propagate(psi0, t1);
            Eigen::MatrixXcd term = Eigen::MatrixXcd::Zero(psi0.size(), psi0.size());
            for (const auto& L : ops.jumps) {
                const Eigen::VectorXcd post = prop.propagate(L * pre, t - t1);
                term += post * post.adjoint();
            }
            const double wgt = (i == 0 || i == m) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
            acc += (wgt * h / 3.0) * term;
        }
        return acc;
    };
    Eigen::MatrixXcd rho1 = rho1_on_grid(quad_points);
    const Eigen::MatrixXcd rho1_coarse = rho1_on_grid(quad_points / 2);
    out.quad_error = (rho1 - rho1_coarse).cwiseAbs().maxCoeff();
    out.contributions.push_back(std::move(rho1));

    if (n_max == 2) {
        // double time-ordered trapezoid in both emission times, Richardson
        // extrapolated in the mesh width
        auto rho2_on_grid = [&](int m) {
            Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(psi0.size(), psi0.size());
            const double h = t / m;
            for (int i2 = 0; i2 <= m; ++i2) {
                const double t2 = h * i2;
                const Eigen::VectorXcd at_t2_src = prop.propagate(psi0, t2);
                for (int i1 = 0; i1 <= i2; ++i1) {
                    const double t1 = h * i1;
                    double wgt = 1.0;
                    if (i1 == 0 || i1 == i2) wgt *= 0.5;
                    if (i2 == 0 || i2 == m) wgt *= 0.5;
                    if (i1 == i2) continue; // zero-measure diagonal
                    Eigen::MatrixXcd term = Eigen::MatrixXcd::Zero(psi0.size(), psi0.size());
                    const Eigen::VectorXcd pre = prop.propagate(psi0, t1);
                    for (const auto& L1 : ops.jumps) {
                        const Eigen::VectorXcd mid = prop.propagate(L1 * pre, t2 - t1);
                        for (const auto& L2 : ops.jumps) {
                            const Eigen::VectorXcd post = prop.propagate(L2 * mid, t - t2);
                            term += post * post.adjoint();
                        }
                    }
                    acc += (wgt * h * h) * term;
                }
            }
            return acc;
        };
        const int m = std::max(16, quad_points / 2);
        const Eigen::MatrixXcd fine = rho2_on_grid(m);
        const Eigen::MatrixXcd coarse = rho2_on_grid(m / 2);
        out.contributions.push_back(((4.0 * fine - coarse) / 3.0).eval());
    }
    return out;
}

// --- Monte Carlo unraveling -----------------------------------------------------

struct JumpTrajectory {
    std::uint64_t seed = 0;
    std::vector<double> jump_times;
    int ionized_channel = -1; // absorber index, -1 while bound
    double ionized_time = 0.0;
};

struct McResult {
    std::vector<double> t;
    std::vector<Eigen::MatrixXcd> rho; // ensemble average, trace <= 1
    std::vector<JumpTrajectory> trajectories;
    std::vector<std::vector<double>> p_ion; // [absorber][time]
};

/// Quantum-jump Monte Carlo with exact between-jump propagation. Waiting
/// times by inverse transform on the norm-decay curve (bisection on the
/// exactly propagated norm).
inline McResult unravel_monte_carlo(const Eigen::VectorXcd& psi0, const OperatorBundle& ops,
                                    const std::vector<double>& t_grid, int n_traj,
                                    std::uint64_t seed) {
    if (n_traj < 1) throw std::invalid_argument("unravel_monte_carlo: n_traj < 1");
    const EffectivePropagator prop(ops.heff());
    const Eigen::Index dim = ops.dim();

    McResult res;
    res.t = t_grid;
    res.rho.assign(t_grid.size(), Eigen::MatrixXcd::Zero(dim, dim));
    res.p_ion.assign(ops.absorbers.size(), std::vector<double>(t_grid.size(), 0.0));
    res.trajectories.reserve(n_traj);

    for (int traj = 0; traj < n_traj; ++traj) {
        std::mt19937_64 eng = make_engine(seed, traj);
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        JumpTrajectory rec;
        rec.seed = derive_seed(seed, traj);

        Eigen::VectorXcd psi = psi0 / psi0.norm();
        double t_cur = 0.0;
        double target = uni(eng);
        bool alive = true;
        size_t gi = 0;
        while (gi < t_grid.size() && t_grid[gi] <= t_cur + 1e-300) {
            res.rho[gi] += psi * psi.adjoint();
            ++gi;
        }
        Eigen::VectorXcd y = prop.coeffs(psi);
        double seg_norm = prop.norm2(y);
        while (alive && gi < t_grid.size()) {
            // propagate to the next output point, watching for the jump
            const double t_next = t_grid[gi];
            Eigen::VectorXcd y_next = y;
            prop.advance(y_next, t_next - t_cur);
            const double n_next = prop.norm2(y_next);
            if (n_next >= target * seg_norm) {
                // no jump before t_next
                y = y_next;
                t_cur = t_next;
                const Eigen::VectorXcd st = prop.state(y) / std::sqrt(prop.norm2(y));
                res.rho[gi] += st * st.adjoint();
                ++gi;
                continue;
            }
            // bracketed jump inside (t_cur, t_next): bisection on the norm
            double lo = 0.0, hi = t_next - t_cur;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                Eigen::VectorXcd ym = y;
                prop.advance(ym, mid);
                if (prop.norm2(ym) >= target * seg_norm)
                    lo = mid;
                else
                    hi = mid;
                if (hi - lo < 1e-12 * std::max(1.0, t_next - t_cur)) break;
            }
            const double t_jump = t_cur + 0.5 * (lo + hi);
            Eigen::VectorXcd yj = y;
            prop.advance(yj, t_jump - t_cur);
            Eigen::VectorXcd psij = prop.state(yj);
            // channel selection proportional to the instantaneous rates
            std::vector<double> rates;
            double rate_sum = 0.0;
            for (const auto& L : ops.jumps) {
                rates.push_back((L * psij).squaredNorm());
                rate_sum += rates.back();
            }
            for (const auto& w : ops.absorbers) {
                rates.push_back(std::norm((w.adjoint() * psij)(0, 0)));
                rate_sum += rates.back();
            }
            if (rate_sum <= 0.0) {
                // numerically flat norm, nothing can jump: rearm and move on
                y = yj;
                t_cur = t_jump;
                seg_norm = prop.norm2(y);
                target = uni(eng);
                continue;
            }
            double pick = uni(eng) * rate_sum;
            size_t ch = 0;
            while (ch + 1 < rates.size() && pick > rates[ch]) {
                pick -= rates[ch];
                ++ch;
            }
            t_cur = t_jump;
            if (ch < ops.jumps.size()) {
                rec.jump_times.push_back(t_jump);
                psi = ops.jumps[ch] * psij;
                psi /= psi.norm();
                y = prop.coeffs(psi);
                seg_norm = prop.norm2(y);
                target = uni(eng);
            } else {
                rec.ionized_channel = static_cast<int>(ch - ops.jumps.size());
                rec.ionized_time = t_jump;
                alive = false;
            }
        }
        if (!alive && rec.ionized_channel >= 0) {
            for (size_t g = 0; g < t_grid.size(); ++g)
                if (t_grid[g] >= rec.ionized_time) res.p_ion[rec.ionized_channel][g] += 1.0;
        }
        res.trajectories.push_back(std::move(rec));
    }
    for (auto& r : res.rho) r /= static_cast<double>(n_traj);
    for (auto& ch : res.p_ion)
        for (auto& v : ch) v /= static_cast<double>(n_traj);
    return res;
}

} // namespace rydec
