#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rydec/branch.hpp"
#include "rydec/quad.hpp"

namespace rydec {

/// mu = alpha + i beta. alpha sets the spectrum, beta the per-orbit
/// absorption into high continua; beta >= 0 (absorption only).
struct QuantumDefect {
    double alpha = 0.0;
    double beta = 0.0;

    QuantumDefect() = default;
    QuantumDefect(double a, double b) : alpha(a), beta(b) {
        if (beta < 0.0) throw std::invalid_argument("QuantumDefect: beta < 0");
    }
    cplx mu() const { return {alpha, beta}; }
};

struct Channel {
    double threshold = 0.0;      // a.u.; real here, complex shifts live in DressedBasis
    QuantumDefect defect;
    bool parity_even = true;     // open/closed at a given energy is derived, never stored
    std::string label;
};

/// The atom: channel list, inter-channel scattering elements, core decay
/// and core Rabi coupling of the cw field.
struct ChannelModel {
    std::vector<Channel> channels;
    Eigen::MatrixXcd couplings;   // off-diagonal chi_ij, same dimension as channels
    double core_decay_rate = 0.0; // kappa >= 0
    double core_rabi = 0.0;       // Omega >= 0
    double cw_frequency = 0.0;    // omega > 0 whenever Omega > 0

    void validate() const {
        const auto n = static_cast<Eigen::Index>(channels.size());
        if (couplings.rows() != n || couplings.cols() != n)
            throw std::invalid_argument("ChannelModel: couplings dimension mismatch");
        if (core_decay_rate < 0.0 || core_rabi < 0.0)
            throw std::invalid_argument("ChannelModel: negative rate");
        for (const auto& c : channels)
            if (!std::isfinite(c.threshold))
                throw std::invalid_argument("ChannelModel: non-finite threshold");
    }
};

/// cw field plus the short Gaussian excitation pulse.
struct FieldSpec {
    double cw_amplitude = 0.0;   // |E0|, a.u.
    double cw_frequency = 0.0;   // omega, a.u.
    double bandwidth = 0.0;      // b >= 0, a.u.
    double pulse_peak = 0.0;     // Ea0, a.u.
    double pulse_center = 0.0;   // ta, a.u.
    double pulse_duration = 1.0; // tau_a > 0, intensity FWHM, a.u.
};

struct DressedBasis {
    Eigen::MatrixXcd transform;            // complex orthogonal O, O^T O = 1
    Eigen::VectorXcd dressed_thresholds;   // complex-shifted thresholds
};

/// Fourier transform of the Gaussian pulse envelope at detuning delta_eps,
/// tau_a being the intensity FWHM: Ea0 tau_a sqrt(pi/(4 ln2)) exp(-tau^2 de^2 / (16 ln2)).
inline double pulse_ft(double delta_eps, const FieldSpec& f) {
    const double ln2 = 0.6931471805599453;
    const double arg = f.pulse_duration * f.pulse_duration * delta_eps * delta_eps / (16.0 * ln2);
    return f.pulse_peak * f.pulse_duration * std::sqrt(pi / (4.0 * ln2)) * std::exp(-arg);
}

inline double bound_energy(double n, const QuantumDefect& d) {
    const double nu = n - d.alpha;
    if (nu <= 0.0) throw std::domain_error("bound_energy: n <= alpha");
    return -1.0 / (2.0 * nu * nu);
}

inline double kepler_period(double n_eff) {
    if (n_eff <= 0.0) throw std::domain_error("kepler_period: n_eff <= 0");
    return 2.0 * pi * n_eff * n_eff * n_eff;
}

/// Gamma_n = 2 Im(mu) / (n - Re(mu))^3
inline double autoionization_rate(double n, const QuantumDefect& d) {
    const double nu = n - d.alpha;
    if (nu <= 0.0) throw std::domain_error("autoionization_rate: n <= Re(mu)");
    return 2.0 * d.beta / (nu * nu * nu);
}

/// Zero-energy dipole element for linear polarization, correspondence-
/// principle form: prefactor * omega^(-5/3) * |E0|.
inline double bohr_dipole(double omega, double amplitude) {
    if (omega <= 0.0) throw std::domain_error("bohr_dipole: omega <= 0");
    const double pref =
        std::pow(6.0, 2.0 / 3.0) * std::tgamma(2.0 / 3.0) / (2.0 * pi * std::sqrt(3.0));
    return pref * std::pow(omega, -5.0 / 3.0) * std::abs(amplitude);
}

inline double beta_from_dipole(double dipole_element) {
    return pi * dipole_element * dipole_element;
}

struct FieldRegimeReport {
    double alpha_osc = 0.0;          // |E0| / omega^2
    double ponderomotive_shift = 0.0; // |E0|^2 / omega^2
    double high_frequency_ratio = 0.0; // omega * T_n
    bool moderate_intensity_flag = false; // raised when alpha_osc >= 0.1
    bool low_frequency_flag = false;      // raised when omega * T_n <= 10
};

inline FieldRegimeReport field_regime_report(const FieldSpec& f, double n_eff) {
    if (f.cw_frequency <= 0.0) throw std::domain_error("field_regime_report: omega <= 0");
    FieldRegimeReport r;
    r.alpha_osc = f.cw_amplitude / (f.cw_frequency * f.cw_frequency);
    r.ponderomotive_shift = f.cw_amplitude * f.cw_amplitude / (f.cw_frequency * f.cw_frequency);
    r.high_frequency_ratio = f.cw_frequency * kepler_period(n_eff);
    r.moderate_intensity_flag = r.alpha_osc >= 0.1;
    r.low_frequency_flag = r.high_frequency_ratio <= 10.0;
    return r;
}

/// Bare scattering matrix: e^{2 pi i mu_j} on the diagonal plus the
/// configured inter-channel elements. Rejects non-physical gain.
inline Eigen::MatrixXcd build_scattering_matrix(const ChannelModel& m) {
    m.validate();
    const auto n = static_cast<Eigen::Index>(m.channels.size());
    Eigen::MatrixXcd chi = m.couplings;
    for (Eigen::Index j = 0; j < n; ++j)
        chi(j, j) = std::exp(2.0 * pi * iu * m.channels[j].defect.mu());
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(chi);
    if (svd.singularValues().maxCoeff() > 1.0 + 1e-9)
        throw std::invalid_argument("build_scattering_matrix: singular value > 1 (gain)");
    return chi;
}

namespace detail {
/// Rotating-wave channel thresholds: the cw photon is absorbed with the
/// core excitation, so every channel above the first is shifted by -omega.
inline Eigen::VectorXd rwa_thresholds(const ChannelModel& m) {
    const auto n = static_cast<Eigen::Index>(m.channels.size());
    Eigen::VectorXd eps(n);
    for (Eigen::Index j = 0; j < n; ++j)
        eps[j] = m.channels[j].threshold - (j > 0 ? m.cw_frequency : 0.0);
    return eps;
}
} // namespace detail

/// Diagonalize the laser-driven core, O^T C O = diag(dressed thresholds),
/// C = diag(rwa thresholds) - i kappa/2 |2><2| - Omega/2 (|1><2| + |2><1|).
/// C is complex symmetric, so O is complex orthogonal rather than unitary.
inline DressedBasis dress_core(const ChannelModel& m) {
    m.validate();
    const auto n = static_cast<Eigen::Index>(m.channels.size());
    Eigen::MatrixXcd core = Eigen::MatrixXcd::Zero(n, n);
    core.diagonal() = detail::rwa_thresholds(m).cast<cplx>();
    if (n >= 2) {
        core(1, 1) -= 0.5 * iu * m.core_decay_rate;
        core(0, 1) -= 0.5 * m.core_rabi;
        core(1, 0) -= 0.5 * m.core_rabi;
    }

    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(core);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("dress_core: eigensolver failed");

    DressedBasis d;
    d.transform.resize(n, n);
    d.dressed_thresholds = es.eigenvalues();
    Eigen::MatrixXcd V = es.eigenvectors();
    for (Eigen::Index k = 0; k < n; ++k) {
        cplx bil = (V.col(k).transpose() * V.col(k))(0, 0);
        if (std::abs(bil) < 1e-12)
            throw std::runtime_error("dress_core: defective core matrix (quasi-null vector)");
        V.col(k) /= std::sqrt(bil);
    }
    // order dressed channels by their dominant bare component, sign fixed
    std::vector<int> perm(n, -1);
    std::vector<bool> used(n, false);
    for (Eigen::Index k = 0; k < n; ++k) {
        int best = -1;
        double best_w = -1.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (used[j]) continue;
            double w = std::abs(V(j, k));
            if (w > best_w) { best_w = w; best = static_cast<int>(j); }
        }
        perm[best] = static_cast<int>(k);
        used[best] = true;
    }
    Eigen::VectorXcd vals(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::VectorXcd col = V.col(perm[j]);
        if (col(j).real() < 0.0) col = -col;
        d.transform.col(j) = col;
        vals[j] = d.dressed_thresholds[perm[j]];
    }
    d.dressed_thresholds = vals;

    const double ortho = (d.transform.transpose() * d.transform -
                          Eigen::MatrixXcd::Identity(n, n)).cwiseAbs().maxCoeff();
    if (ortho > 1e-10)
        throw std::runtime_error("dress_core: O^T O deviates from identity");
    Eigen::MatrixXcd recon =
        d.transform * d.dressed_thresholds.asDiagonal() * d.transform.transpose();
    double scale = std::max(1e-30, core.cwiseAbs().maxCoeff());
    if ((recon - core).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, scale))
        throw std::runtime_error("dress_core: congruence check failed");
    return d;
}

/// Diagonal matrix e^{i 2 pi nu~}, entry j = exp(2 pi i [2(eps~_cj - eps)]^{-1/2})
/// for closed channels and 0 for open ones.
inline Eigen::MatrixXcd phase_matrix(cplx energy, const DressedBasis& d) {
    const auto n = d.dressed_thresholds.size();
    Eigen::MatrixXcd ph = Eigen::MatrixXcd::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const cplx z = energy - d.dressed_thresholds[j]; // closed when Re z < 0
        const double closed = theta_re(-z);
        if (closed == 0.0) continue;
        ph(j, j) = closed * std::exp(2.0 * pi * iu * inv_sqrt_neg2(z));
    }
    return ph;
}

/// Bound-bound radial overlap of two Rydberg series that share the radial
/// Hamiltonian outside the core, as a function of the effective quantum
/// numbers. Orthonormal within one series, sinc across series.
inline double bound_overlap(double nu1, double nu2) {
    const double d = pi * (nu1 - nu2);
    if (std::abs(d) < 1e-9) return 1.0 - d * d / 6.0;
    return std::sin(d) / d;
}

// --- semiclassical radial functions -------------------------------------

/// WKB bound radial function with Langer-corrected centrifugal term,
/// evaluated between the classical turning points, zero outside.
class WkbRadial {
public:
    WkbRadial(double nu, int l) : nu_(nu), l_(l) {
        if (nu <= 0.0) throw std::domain_error("WkbRadial: nu <= 0");
        const double lam = (l + 0.5) * (l + 0.5);
        const double disc = nu * nu - lam;
        if (disc <= 0.0) throw std::domain_error("WkbRadial: l too large for nu");
        r1_ = nu * nu - nu * std::sqrt(disc);
        r2_ = nu * nu + nu * std::sqrt(disc);
        // phase integral on a theta grid, r = r1 + (r2-r1) sin^2(theta):
        // k dr stays bounded at both turning points.
        const int nth = 4000;
        phase_.resize(nth + 1);
        theta_.resize(nth + 1);
        double acc = 0.0;
        double prev = 0.0;
        for (int i = 0; i <= nth; ++i) {
            const double th = 0.5 * pi * i / nth;
            theta_[i] = th;
            const double val = kdr_dtheta(th);
            if (i > 0) acc += 0.5 * (val + prev) * (0.5 * pi / nth);
            prev = val;
            phase_[i] = acc;
        }
        // numeric norm: the sharp turning-point cutoff biases the naive
        // 1/2-average of sin^2, so the amplitude is rescaled to unit norm
        double nrm = 0.0, prev_n = 0.0;
        for (int i = 0; i <= nth; ++i) {
            const double th = theta_[i];
            const double s = std::sin(th), c = std::cos(th);
            const double r = r1_ + (r2_ - r1_) * s * s;
            const double k = momentum(r);
            const double dr = 2.0 * (r2_ - r1_) * s * c;
            double val = 0.0;
            if (k > 0.0 && i > 0 && i < nth) {
                const double amp2 = 2.0 / (pi * nu_ * nu_ * nu_ * k);
                const double sn = std::sin(phase_[i] + 0.25 * pi);
                val = amp2 * sn * sn * dr;
            }
            if (i > 0) nrm += 0.5 * (val + prev_n) * (0.5 * pi / nth);
            prev_n = val;
        }
        scale_ = nrm > 0.0 ? 1.0 / std::sqrt(nrm) : 1.0;
    }

    double r_inner() const { return r1_; }
    double r_outer() const { return r2_; }
    double nu() const { return nu_; }

    double momentum(double r) const {
        const double lam = (l_ + 0.5) * (l_ + 0.5);
        const double k2 = 2.0 / r - 1.0 / (nu_ * nu_) - lam / (r * r);
        return k2 > 0.0 ? std::sqrt(k2) : 0.0;
    }

    double operator()(double r) const {
        if (r <= r1_ || r >= r2_) return 0.0;
        const double k = momentum(r);
        if (k <= 0.0) return 0.0;
        const double th = std::asin(std::min(1.0, std::sqrt((r - r1_) / (r2_ - r1_))));
        const double S = interp_phase(th);
        const double amp = std::sqrt(2.0 / (pi * nu_ * nu_ * nu_ * k));
        return scale_ * amp * std::sin(S + 0.25 * pi);
    }

private:
    double kdr_dtheta(double th) const {
        const double s = std::sin(th), c = std::cos(th);
        const double r = r1_ + (r2_ - r1_) * s * s;
        // k(r) = sqrt(max(k2,0)); dr/dtheta = 2 (r2-r1) s c
        const double k = momentum(r);
        return k * 2.0 * (r2_ - r1_) * s * c;
    }
    double interp_phase(double th) const {
        const double x = th / (0.5 * pi) * (theta_.size() - 1);
        const auto i = std::min(static_cast<size_t>(std::max(0.0, x)), theta_.size() - 2);
        const double f = x - static_cast<double>(i);
        return phase_[i] * (1.0 - f) + phase_[i + 1] * f;
    }

    double nu_;
    int l_;
    double r1_, r2_;
    double scale_ = 1.0;
    std::vector<double> theta_, phase_;
};

/// |sum_n c_n u_n(r)|^2 on the grid for a single-channel amplitude map.
inline std::vector<double> radial_density(const std::map<int, cplx>& amplitudes,
                                          const QuantumDefect& defect, int l,
                                          const std::vector<double>& r_grid) {
    if (r_grid.empty()) throw std::invalid_argument("radial_density: empty grid");
    std::vector<WkbRadial> basis;
    std::vector<cplx> coef;
    basis.reserve(amplitudes.size());
    for (const auto& [n, c] : amplitudes) {
        basis.emplace_back(n - defect.alpha, l);
        coef.push_back(c);
    }
    std::vector<double> out(r_grid.size(), 0.0);
    for (size_t i = 0; i < r_grid.size(); ++i) {
        cplx psi = 0.0;
        for (size_t k = 0; k < basis.size(); ++k) psi += coef[k] * basis[k](r_grid[i]);
        out[i] = std::norm(psi);
    }
    return out;
}

/// Density of a mixed state: rho given in the same ordered basis as
/// `states` (pairs of n and channel amplitude weight handled by caller).
inline std::vector<double> radial_density_mixed(const Eigen::MatrixXcd& rho,
                                                const std::vector<double>& nu_values, int l,
                                                const std::vector<double>& r_grid) {
    if (r_grid.empty()) throw std::invalid_argument("radial_density_mixed: empty grid");
    const auto n = static_cast<Eigen::Index>(nu_values.size());
    if (rho.rows() != n || rho.cols() != n)
        throw std::invalid_argument("radial_density_mixed: dimension mismatch");
    std::vector<WkbRadial> basis;
    basis.reserve(nu_values.size());
    for (double nu : nu_values) basis.emplace_back(nu, l);
    std::vector<double> out(r_grid.size(), 0.0);
    Eigen::VectorXd u(n);
    for (size_t i = 0; i < r_grid.size(); ++i) {
        for (Eigen::Index k = 0; k < n; ++k) u[k] = basis[k](r_grid[i]);
        out[i] = std::max(0.0, (u.transpose() * (rho.real() * u))(0));
    }
    return out;
}

/// Local-minimum count of a sampled density; used for the "nodes
/// disappear" diagnostics on radial snapshots.
inline int node_count(const std::vector<double>& density, double depth_fraction = 0.05) {
    double dmax = 0.0;
    for (double v : density) dmax = std::max(dmax, v);
    if (dmax <= 0.0) return 0;
    int count = 0;
    for (size_t i = 1; i + 1 < density.size(); ++i) {
        if (density[i] < density[i - 1] && density[i] <= density[i + 1]) {
            double neigh = std::max(density[i - 1], density[i + 1]);
            if (neigh - density[i] > depth_fraction * dmax) ++count;
        }
    }
    return count;
}

} // namespace rydec
