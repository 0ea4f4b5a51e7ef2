#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rydec/lindblad.hpp"
#include "rydec/rng.hpp"
#include "rydec/timeseries.hpp"

namespace rydec {

/// Ground state + one series driven by a fixed-amplitude field whose phase
/// performs a Wiener walk. Absorbers as in the master-equation bundle.
struct SdeSystem {
    Eigen::VectorXd diag;                  // rotating-frame energies, ground first
    Eigen::VectorXd coupling;              // d_n, level i at index 1 + i
    std::vector<Eigen::VectorXcd> absorbers;
    std::vector<std::string> absorber_labels;
    double bandwidth = 0.0;
    Eigen::VectorXcd psi0;
    double period = 0.0;
    std::vector<double> nu;                // for radial snapshots

    Eigen::Index dim() const { return diag.size(); }
};

inline SdeSystem from_pdm(const PdmSystem& p) {
    SdeSystem s;
    const Eigen::Index dim = p.ops.dim();
    s.diag = p.ops.H.diagonal().real();
    s.coupling = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < p.n_levels(); ++i) s.coupling(p.level(i)) = p.coupling[i];
    s.absorbers = p.ops.absorbers;
    s.absorber_labels = p.ops.absorber_labels;
    s.bandwidth = p.params.bandwidth;
    s.psi0 = p.psi0;
    s.period = p.period;
    s.nu = p.nu;
    return s;
}

struct PhasePath {
    std::uint64_t seed = 0;
    double dt = 0.0;
    std::vector<double> increments; // variance 2 b dt each
};

/// The exact increment stream a trajectory consumes; exposed for the
/// Wiener-statistics checks.
inline PhasePath sample_phase_path(std::uint64_t master_seed, std::uint64_t index, double b,
                                   double dt, int n_steps) {
    PhasePath p;
    p.seed = derive_seed(master_seed, index);
    p.dt = dt;
    p.increments.resize(n_steps);
    std::mt19937_64 eng(p.seed);
    std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 * b * dt));
    for (int i = 0; i < n_steps; ++i) p.increments[i] = gauss(eng);
    return p;
}

struct EnsembleOptions {
    double dt = 0.0;              // required
    std::vector<double> t_grid;   // required, uniform-ish output times
    int n_traj = 100;
    std::uint64_t seed = 1;
    int threads = 0;              // 0: hardware
    int chunk = 32;               // trajectories per deterministic chunk
    std::vector<double> snapshot_times; // accumulate full rho here
    bool record_coherences = false;     // g-row coherences with e^{-i Phi}
};

struct EnsembleResult {
    std::vector<double> t;
    std::vector<double> p_gg, p_gg_err;
    std::vector<double> p_bound;
    std::vector<std::string> ion_labels;
    std::vector<std::vector<double>> p_ion;     // [channel][time]
    std::vector<std::vector<double>> p_ion_err; // [channel][time]
    std::vector<std::vector<double>> pop;       // [time][state] diagonal populations
    std::vector<Eigen::VectorXcd> coh_g;        // [time] M e^{-i Phi} psi psi_g^*
    std::vector<Eigen::VectorXd> coh_g_err;     // [time] jackknife sigma per element
    std::vector<double> snapshot_times;
    std::vector<Eigen::MatrixXcd> snapshot_rho;
    int n_traj = 0;
    double dt = 0.0;
    std::uint64_t seed = 0;

    /// accounting identity p_gg + p_bound + sum_c p_ion_c = 1
    double conservation_residual(size_t it) const {
        double s = p_gg[it] + p_bound[it];
        for (const auto& ch : p_ion) s += ch[it];
        return std::abs(s - 1.0);
    }
};

namespace detail {

struct TrajAccumulator {
    std::vector<double> pgg, pbound;
    std::vector<std::vector<double>> pion;
    std::vector<std::vector<double>> pop;
    std::vector<Eigen::VectorXcd> coh;
    std::vector<Eigen::MatrixXcd> snaps;
    void init(size_t n_t, size_t n_c, Eigen::Index dim, size_t n_snap, bool coherences) {
        pgg.assign(n_t, 0.0);
        pbound.assign(n_t, 0.0);
        pion.assign(n_c, std::vector<double>(n_t, 0.0));
        pop.assign(n_t, std::vector<double>(dim, 0.0));
        if (coherences) coh.assign(n_t, Eigen::VectorXcd::Zero(dim));
        snaps.assign(n_snap, Eigen::MatrixXcd::Zero(dim, dim));
    }
    void add(const TrajAccumulator& o) {
        for (size_t i = 0; i < pgg.size(); ++i) pgg[i] += o.pgg[i];
        for (size_t i = 0; i < pbound.size(); ++i) pbound[i] += o.pbound[i];
        for (size_t c = 0; c < pion.size(); ++c)
            for (size_t i = 0; i < pion[c].size(); ++i) pion[c][i] += o.pion[c][i];
        for (size_t i = 0; i < pop.size(); ++i)
            for (size_t k = 0; k < pop[i].size(); ++k) pop[i][k] += o.pop[i][k];
        for (size_t i = 0; i < coh.size(); ++i) coh[i] += o.coh[i];
        for (size_t i = 0; i < snaps.size(); ++i) snaps[i] += o.snaps[i];
    }
};

/// One split-step trajectory: D/2, W/2, phase-dressed coupling kick, W/2,
/// D/2, all factors exact, one Gaussian increment per step.
inline void run_trajectory(const SdeSystem& sys, const EnsembleOptions& opt,
                           std::uint64_t index, TrajAccumulator& acc,
                           std::vector<double>* ion_budget) {
    const Eigen::Index dim = sys.dim();
    const int n_levels = static_cast<int>(dim) - 1;
    std::mt19937_64 eng = make_engine(opt.seed, index);
    std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 * sys.bandwidth * opt.dt));

    Eigen::VectorXcd psi = sys.psi0;
    std::vector<cplx> half_diag(dim);
    for (Eigen::Index k = 0; k < dim; ++k)
        half_diag[k] = std::exp(-0.5 * iu * sys.diag[k] * opt.dt);

    double dnorm = 0.0;
    for (int i = 0; i < n_levels; ++i) dnorm += sys.coupling[1 + i] * sys.coupling[1 + i];
    dnorm = std::sqrt(dnorm);
    const double cosk = std::cos(dnorm * opt.dt), sink = std::sin(dnorm * opt.dt);

    struct Absorb {
        Eigen::VectorXcd w;
        double w2;
        double decay; // e^{-w2 dt/4} per half application
    };
    std::vector<Absorb> abs_ops;
    for (const auto& w : sys.absorbers) {
        Absorb a;
        a.w = w;
        a.w2 = w.squaredNorm();
        a.decay = std::exp(-0.25 * a.w2 * opt.dt);
        abs_ops.push_back(std::move(a));
    }
    std::vector<double> ion(abs_ops.size(), 0.0);

    double phase = 0.0;
    double t = 0.0;
    size_t gi = 0;
    size_t si = 0;

    auto record = [&](size_t idx) {
        acc.pgg[idx] += std::norm(psi[0]);
        double pb = 0.0;
        for (Eigen::Index k = 1; k < dim; ++k) pb += std::norm(psi[k]);
        acc.pbound[idx] += pb;
        for (size_t c = 0; c < ion.size(); ++c) acc.pion[c][idx] += ion[c];
        for (Eigen::Index k = 0; k < dim; ++k) acc.pop[idx][k] += std::norm(psi[k]);
        if (!acc.coh.empty()) {
            const cplx dress = std::exp(-iu * phase) * std::conj(psi[0]);
            acc.coh[idx] += dress * psi;
        }
    };
    auto snapshot = [&](size_t idx) { acc.snaps[idx] += psi * psi.adjoint(); };

    const double t_end = opt.t_grid.back();
    while (true) {
        while (gi < opt.t_grid.size() && opt.t_grid[gi] <= t + 0.5 * opt.dt) record(gi++);
        while (si < opt.snapshot_times.size() && opt.snapshot_times[si] <= t + 0.5 * opt.dt)
            snapshot(si++);
        if (t >= t_end || gi >= opt.t_grid.size()) break;

        phase += gauss(eng);
        const cplx eph = std::exp(iu * phase);

        for (Eigen::Index k = 0; k < dim; ++k) psi[k] *= half_diag[k];
        for (size_t c = 0; c < abs_ops.size(); ++c) {
            const auto& a = abs_ops[c];
            if (a.w2 <= 0.0) continue;
            const double before = psi.squaredNorm();
            const cplx ov = a.w.dot(psi); // conj(w) . psi
            psi += ((a.decay - 1.0) / a.w2) * ov * a.w;
            ion[c] += before - psi.squaredNorm();
        }
        if (dnorm > 0.0) {
            cplx av = 0.0;
            for (int i = 0; i < n_levels; ++i)
                av += (sys.coupling[1 + i] / dnorm) * std::conj(eph) * psi[1 + i];
            const cplx ag = psi[0];
            psi[0] += (cosk - 1.0) * ag + iu * sink * av;
            const cplx lv = (cosk - 1.0) * av + iu * sink * ag;
            for (int i = 0; i < n_levels; ++i)
                psi[1 + i] += lv * (sys.coupling[1 + i] / dnorm) * eph;
        }
        for (size_t c = 0; c < abs_ops.size(); ++c) {
            const auto& a = abs_ops[c];
            if (a.w2 <= 0.0) continue;
            const double before = psi.squaredNorm();
            const cplx ov = a.w.dot(psi);
            psi += ((a.decay - 1.0) / a.w2) * ov * a.w;
            ion[c] += before - psi.squaredNorm();
        }
        for (Eigen::Index k = 0; k < dim; ++k) psi[k] *= half_diag[k];
        t += opt.dt;
    }
    if (ion_budget)
        for (size_t c = 0; c < ion.size(); ++c) (*ion_budget)[c] += ion[c];
}

} // namespace detail

/// Single trajectory record, mostly for tests; heavy runs go through
/// ensemble().
inline EnsembleResult simulate_trajectory(const SdeSystem& sys, const EnsembleOptions& opt_in,
                                          std::uint64_t index) {
    EnsembleOptions opt = opt_in;
    opt.n_traj = 1;
    detail::TrajAccumulator acc;
    acc.init(opt.t_grid.size(), sys.absorbers.size(), sys.dim(), opt.snapshot_times.size(),
             opt.record_coherences);
    detail::run_trajectory(sys, opt, index, acc, nullptr);
    EnsembleResult r;
    r.t = opt.t_grid;
    r.p_gg = acc.pgg;
    r.p_bound = acc.pbound;
    r.p_ion = acc.pion;
    r.pop = acc.pop;
    r.coh_g = acc.coh;
    r.ion_labels = sys.absorber_labels;
    r.n_traj = 1;
    r.dt = opt.dt;
    r.seed = opt.seed;
    return r;
}

/// Deterministic chunked ensemble: per-trajectory seeds derive from
/// (seed, index); chunks are reduced in index order so the result is
/// bit-identical for a fixed (seed, n_traj, dt) at any thread count.
inline EnsembleResult ensemble(const SdeSystem& sys, const EnsembleOptions& opt) {
    if (opt.dt <= 0.0) throw std::invalid_argument("ensemble: dt required");
    if (opt.t_grid.empty()) throw std::invalid_argument("ensemble: empty t_grid");
    double max_de = 0.0;
    for (Eigen::Index k = 0; k < sys.dim(); ++k) max_de = std::max(max_de, std::abs(sys.diag[k]));
    if (opt.dt * max_de > 0.1 + 1e-12)
        throw std::invalid_argument("ensemble: dt too large for the level spacing (dt*dE > 0.1)");

    const size_t n_t = opt.t_grid.size();
    const size_t n_c = sys.absorbers.size();
    const int n_chunks = (opt.n_traj + opt.chunk - 1) / opt.chunk;

    std::vector<detail::TrajAccumulator> chunk_acc(n_chunks);
    std::vector<std::vector<double>> chunk_pgg(n_chunks);
    std::vector<std::vector<std::vector<double>>> chunk_pion(n_chunks);
    std::vector<std::vector<Eigen::VectorXcd>> chunk_coh(n_chunks);

    int n_threads = opt.threads > 0 ? opt.threads
                                    : static_cast<int>(std::thread::hardware_concurrency());
    if (n_threads < 1) n_threads = 1;

    std::atomic<int> next_chunk{0};
    auto worker = [&]() {
        while (true) {
            const int c = next_chunk.fetch_add(1);
            if (c >= n_chunks) return;
            auto& acc = chunk_acc[c];
            acc.init(n_t, n_c, sys.dim(), opt.snapshot_times.size(), opt.record_coherences);
            const int lo = c * opt.chunk;
            const int hi = std::min(opt.n_traj, lo + opt.chunk);
            for (int idx = lo; idx < hi; ++idx)
                detail::run_trajectory(sys, opt, static_cast<std::uint64_t>(idx), acc, nullptr);
            chunk_pgg[c] = acc.pgg;
            chunk_pion[c] = acc.pion;
            if (opt.record_coherences) chunk_coh[c] = acc.coh;
        }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    detail::TrajAccumulator total;
    total.init(n_t, n_c, sys.dim(), opt.snapshot_times.size(), opt.record_coherences);
    for (int c = 0; c < n_chunks; ++c) total.add(chunk_acc[c]);

    EnsembleResult r;
    r.t = opt.t_grid;
    r.ion_labels = sys.absorber_labels;
    r.n_traj = opt.n_traj;
    r.dt = opt.dt;
    r.seed = opt.seed;
    const double inv = 1.0 / opt.n_traj;
    r.p_gg.resize(n_t);
    r.p_bound.resize(n_t);
    for (size_t i = 0; i < n_t; ++i) {
        r.p_gg[i] = total.pgg[i] * inv;
        r.p_bound[i] = total.pbound[i] * inv;
    }
    r.p_ion.assign(n_c, std::vector<double>(n_t, 0.0));
    for (size_t c = 0; c < n_c; ++c)
        for (size_t i = 0; i < n_t; ++i) r.p_ion[c][i] = total.pion[c][i] * inv;
    r.pop.assign(n_t, std::vector<double>(sys.dim(), 0.0));
    for (size_t i = 0; i < n_t; ++i)
        for (Eigen::Index k = 0; k < sys.dim(); ++k) r.pop[i][k] = total.pop[i][k] * inv;
    if (opt.record_coherences) {
        r.coh_g.resize(n_t);
        for (size_t i = 0; i < n_t; ++i) r.coh_g[i] = total.coh[i] * inv;
        r.coh_g_err.assign(n_t, Eigen::VectorXd::Zero(sys.dim()));
        if (n_chunks > 2) {
            const double nck = n_chunks;
            for (size_t i = 0; i < n_t; ++i)
                for (Eigen::Index k = 0; k < sys.dim(); ++k) {
                    cplx mean = 0.0;
                    std::vector<cplx> per(n_chunks);
                    for (int c = 0; c < n_chunks; ++c) {
                        const int lo = c * opt.chunk;
                        const int hi = std::min(opt.n_traj, lo + opt.chunk);
                        per[c] = chunk_coh[c][i][k] / static_cast<double>(hi - lo);
                        mean += per[c];
                    }
                    mean /= nck;
                    double var = 0.0;
                    for (int c = 0; c < n_chunks; ++c) var += std::norm(per[c] - mean);
                    r.coh_g_err[i][k] = std::sqrt(var / (nck * (nck - 1.0)));
                }
        }
    }
    r.snapshot_times = opt.snapshot_times;
    for (auto& s : total.snaps) r.snapshot_rho.push_back(s * inv);

    // jackknife over chunks
    r.p_gg_err.assign(n_t, 0.0);
    r.p_ion_err.assign(n_c, std::vector<double>(n_t, 0.0));
    if (n_chunks > 2) {
        const double nck = n_chunks;
        for (size_t i = 0; i < n_t; ++i) {
            double mean = 0.0;
            std::vector<double> per(n_chunks);
            for (int c = 0; c < n_chunks; ++c) {
                const int lo = c * opt.chunk;
                const int hi = std::min(opt.n_traj, lo + opt.chunk);
                per[c] = chunk_pgg[c][i] / (hi - lo);
                mean += per[c];
            }
            mean /= nck;
            double var = 0.0;
            for (int c = 0; c < n_chunks; ++c) var += (per[c] - mean) * (per[c] - mean);
            r.p_gg_err[i] = std::sqrt(var / (nck * (nck - 1.0)));
        }
        for (size_t ch = 0; ch < n_c; ++ch)
            for (size_t i = 0; i < n_t; ++i) {
                double mean = 0.0;
                std::vector<double> per(n_chunks);
                for (int c = 0; c < n_chunks; ++c) {
                    const int lo = c * opt.chunk;
                    const int hi = std::min(opt.n_traj, lo + opt.chunk);
                    per[c] = chunk_pion[c][ch][i] / (hi - lo);
                    mean += per[c];
                }
                mean /= nck;
                double var = 0.0;
                for (int c = 0; c < n_chunks; ++c) var += (per[c] - mean) * (per[c] - mean);
                r.p_ion_err[ch][i] = std::sqrt(var / (nck * (nck - 1.0)));
            }
    }
    return r;
}

/// Two-channel competition run: one autoionizing series excited through a
/// broadband fluctuating field. Channel-one ionization collects the direct
/// above-threshold share and the ladder-top arrivals, channel two the
/// autoionization flux.
struct CompetitionSetup {
    PdmParams params;       // defect carries alpha_1 and beta = tau/pi
    BasisSpec basis;
    int cap_start = 0;      // absorbing ramp start
    double cap_rate = 0.0;
    double direct_share = 0.0; // Lorentzian weight of the window above threshold
};

inline CompetitionSetup make_competition_setup(const PdmParams& p, int n_lo, int n_hi) {
    CompetitionSetup c;
    c.params = p;
    c.basis.n_min = n_lo;
    c.basis.n_max = n_hi;
    c.cap_start = n_hi - std::max(3, (n_hi - n_lo) / 6);
    // absorb within a fraction of the local orbit once amplitude reaches the top
    const double nu_top = n_hi - p.defect.alpha;
    c.cap_rate = 4.0 / kepler_period(nu_top);
    c.direct_share = 0.5 + std::atan(p.mean_energy / p.bandwidth) / pi;
    return c;
}

inline EnsembleResult competition_scenario(const CompetitionSetup& setup,
                                           const EnsembleOptions& opt) {
    PdmSystemOptions po;
    po.cap_start = setup.cap_start;
    po.cap_rate = setup.cap_rate;
    // the bound-ladder couplings already deplete the ground state by the
    // below-threshold share of gamma; the direct loss adds the rest
    po.direct_loss = setup.params.depletion_rate * setup.direct_share;
    PdmSystem sys = build_pdm_system(setup.params, setup.basis, po);
    SdeSystem s = from_pdm(sys);
    return ensemble(s, opt);
}

} // namespace rydec
