#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <vector>

#include "rydec/branch.hpp"
#include "rydec/qdt.hpp"
#include "rydec/timeseries.hpp"

namespace rydec {

/// Parameters of the phase-diffusion excitation problem. mean_energy is
/// threshold-relative and already includes the quadratic Stark and
/// ponderomotive shifts of the scenario.
struct PdmParams {
    double mean_energy = -1e-4;   // eps_bar < 0, a.u.
    double bandwidth = 0.0;       // b > 0, a.u.
    double depletion_rate = 0.0;  // gamma > 0, a.u.
    QuantumDefect defect;

    /// Angle of -eps_bar + i(b + gamma/2) = R e^{i phi}, phi in (0, pi).
    double phi() const {
        return std::atan2(bandwidth + 0.5 * depletion_rate, -mean_energy);
    }
    void validate() const {
        if (!(bandwidth > 0.0) || !(depletion_rate > 0.0))
            throw std::invalid_argument("PdmParams: b and gamma must be positive");
    }
};

/// Resonant self-energy of the initial state. Two realizations share one
/// interface: the threshold series in closed geometric form, and an
/// explicit discrete level list for toy models and oracle tests.
class SelfEnergy {
public:
    static SelfEnergy qdt_series(double gamma, QuantumDefect defect) {
        SelfEnergy s;
        s.gamma_ = gamma;
        s.defect_ = defect;
        s.series_ = true;
        return s;
    }
    static SelfEnergy discrete(std::vector<double> energies, std::vector<double> couplings_sq) {
        if (energies.size() != couplings_sq.size())
            throw std::invalid_argument("SelfEnergy::discrete: size mismatch");
        SelfEnergy s;
        s.series_ = false;
        s.energies_ = std::move(energies);
        s.couplings_sq_ = std::move(couplings_sq);
        return s;
    }

    bool is_series() const { return series_; }
    double gamma() const { return gamma_; }
    const QuantumDefect& defect() const { return defect_; }
    const std::vector<double>& level_energies() const { return energies_; }
    const std::vector<double>& level_couplings_sq() const { return couplings_sq_; }

    /// q = e^{2 pi i nu(z)} chi with chi = e^{2 pi i mu}.
    cplx q(cplx z) const {
        return std::exp(2.0 * pi * iu * (inv_sqrt_neg2(z) + defect_.mu()));
    }

    cplx operator()(cplx z) const {
        if (series_) {
            const cplx qq = q(z);
            if (z.imag() == 0.0 && std::abs(qq) >= 1.0)
                throw std::domain_error("self_energy: |q| >= 1 on the real axis, offset the contour");
            return -0.5 * iu * gamma_ - iu * gamma_ * qq / (1.0 - qq);
        }
        cplx s = 0.0;
        for (size_t i = 0; i < energies_.size(); ++i) s += couplings_sq_[i] / (z - energies_[i]);
        return s;
    }

    /// Analytic derivative; the pole weights are too sensitive for finite
    /// differences.
    cplx derivative(cplx z) const {
        if (series_) {
            const cplx nu = inv_sqrt_neg2(z);
            const cplx qq = q(z);
            const cplx dq = qq * 2.0 * pi * iu * nu * nu * nu; // d nu/dz = nu^3
            const cplx om = 1.0 - qq;
            return -iu * gamma_ * dq / (om * om);
        }
        cplx s = 0.0;
        for (size_t i = 0; i < energies_.size(); ++i) {
            const cplx d = z - energies_[i];
            s -= couplings_sq_[i] / (d * d);
        }
        return s;
    }

    /// Explicit partial sum of the return series; oracle for the closed form.
    cplx partial_sum(cplx z, int m_terms) const {
        if (!series_) throw std::logic_error("partial_sum: series mode only");
        const cplx qq = q(z);
        cplx acc = 0.0, pw = 1.0;
        for (int m = 1; m <= m_terms; ++m) {
            pw *= qq;
            acc += pw;
        }
        return -0.5 * iu * gamma_ - iu * gamma_ * acc;
    }

private:
    bool series_ = true;
    double gamma_ = 0.0;
    QuantumDefect defect_;
    std::vector<double> energies_;
    std::vector<double> couplings_sq_;
};

/// D(z) = z - eps_bar + i b - Sigma(z); its roots are the dressed states of
/// the non-Hermitian effective Hamiltonian.
inline cplx pole_function(cplx z, const PdmParams& p, const SelfEnergy& sigma) {
    return z - p.mean_energy + iu * p.bandwidth - sigma(z);
}

inline cplx pole_function_derivative(cplx z, const PdmParams& p, const SelfEnergy& sigma) {
    (void)p;
    return 1.0 - sigma.derivative(z);
}

namespace detail {

inline bool newton_polish(cplx& z, const PdmParams& p, const SelfEnergy& sigma,
                          double step_cap, int max_iter = 100) {
    for (int it = 0; it < max_iter; ++it) {
        const cplx f = pole_function(z, p, sigma);
        const cplx fp = pole_function_derivative(z, p, sigma);
        if (std::abs(fp) == 0.0) return false;
        cplx dz = -f / fp;
        if (std::abs(dz) > step_cap) dz *= step_cap / std::abs(dz);
        z += dz;
        // quadratic convergence: once the step is negligible the root is
        // located to that precision, whatever the residual scale
        if (std::abs(dz) < std::max(1e-14 * std::abs(z), 1e-12 * step_cap)) return true;
    }
    return false;
}

} // namespace detail

/// One dressed pole per series level n in [n_lo, n_hi], found by damped
/// Newton seeded at the bare complex energy plus its first-order shift.
/// Throws when any root fails to converge.
inline std::vector<cplx> dressed_poles(const PdmParams& p, const SelfEnergy& sigma,
                                       int n_lo, int n_hi) {
    p.validate();
    std::vector<cplx> roots;
    roots.reserve(n_hi - n_lo + 1);
    for (int n = n_lo; n <= n_hi; ++n) {
        cplx z0;
        double spacing;
        if (sigma.is_series()) {
            const cplx nu = static_cast<double>(n) - sigma.defect().mu();
            z0 = -0.5 / (nu * nu);
            const double nur = n - sigma.defect().alpha;
            spacing = 1.0 / (nur * nur * nur);
            const double dn2 = sigma.gamma() / (2.0 * pi * nur * nur * nur);
            z0 += dn2 / (z0 - p.mean_energy + iu * p.bandwidth);
        } else {
            const auto& en = sigma.level_energies();
            const size_t idx = static_cast<size_t>(n - n_lo);
            if (idx >= en.size()) throw std::out_of_range("dressed_poles: n_range vs level list");
            z0 = en[idx];
            spacing = 0.0;
            for (size_t j = 0; j < en.size(); ++j)
                if (j != idx) spacing = spacing == 0.0 ? std::abs(en[j] - en[idx])
                                                       : std::min(spacing, std::abs(en[j] - en[idx]));
            if (spacing == 0.0) spacing = std::abs(en[idx]) + p.bandwidth;
            z0 += sigma.level_couplings_sq()[idx] / (z0 - p.mean_energy + iu * p.bandwidth);
        }
        cplx z = z0;
        bool ok = detail::newton_polish(z, p, sigma, 0.45 * spacing);
        if (!ok) {
            // fallback: ring of perturbed seeds around the bare position
            for (int k = 0; k < 8 && !ok; ++k) {
                z = z0 + 0.2 * spacing * std::exp(iu * (0.25 * pi * k)) - iu * 0.05 * spacing;
                ok = detail::newton_polish(z, p, sigma, 0.45 * spacing);
            }
        }
        if (!ok) throw std::runtime_error("dressed_poles: Newton failed for n=" + std::to_string(n));
        if (z.imag() > 1e-12 * (std::abs(z.real()) + p.bandwidth))
            throw std::runtime_error("dressed_poles: root with gain (Im > 0) at n=" + std::to_string(n));
        roots.push_back(z);
    }
    return roots;
}

/// The initial-state-like root of D, seeded at eps_bar - i(b + gamma/2).
inline cplx initial_state_pole(const PdmParams& p, const SelfEnergy& sigma) {
    cplx z = p.mean_energy - iu * (p.bandwidth + 0.5 * p.depletion_rate);
    // a few fixed-point sweeps tame the seed before Newton
    for (int it = 0; it < 5; ++it) {
        cplx rhs = p.mean_energy - iu * p.bandwidth + sigma(z);
        z = 0.5 * (z + rhs);
    }
    const double cap = std::abs(p.mean_energy) + p.bandwidth + p.depletion_rate;
    if (!detail::newton_polish(z, p, sigma, cap))
        throw std::runtime_error("initial_state_pole: Newton failed");
    return z;
}

/// Winding-number count of zeros of D inside a rectangle, with the known
/// simple poles of Sigma inside the box supplied by the caller. Node count
/// doubles until no boundary step turns the argument by more than ~2.5 rad.
inline int count_roots_in_box(const PdmParams& p, const SelfEnergy& sigma,
                              cplx lo, cplx hi, int poles_inside, int n_per_side = 320) {
    for (int attempt = 0; attempt < 5; ++attempt, n_per_side *= 2) {
        bool coarse = false;
        auto walk = [&](cplx a, cplx b, double& acc, cplx& prev) {
            for (int i = 1; i <= n_per_side; ++i) {
                const cplx z = a + (b - a) * (static_cast<double>(i) / n_per_side);
                const cplx f = pole_function(z, p, sigma);
                const double d = std::arg(f / prev);
                if (std::abs(d) > 2.5) coarse = true;
                acc += d;
                prev = f;
            }
        };
        const cplx c1 = lo, c2 = cplx(hi.real(), lo.imag()), c3 = hi,
                   c4 = cplx(lo.real(), hi.imag());
        cplx prev = pole_function(c1, p, sigma);
        double acc = 0.0;
        walk(c1, c2, acc, prev);
        walk(c2, c3, acc, prev);
        walk(c3, c4, acc, prev);
        walk(c4, c1, acc, prev);
        if (coarse) continue;
        return static_cast<int>(std::lround(acc / (2.0 * pi))) + poles_inside;
    }
    throw std::runtime_error("count_roots_in_box: boundary walk failed to resolve the argument");
}

namespace detail {

inline void dedupe_roots(std::vector<cplx>& roots, double tol) {
    std::vector<cplx> out;
    for (const cplx& z : roots) {
        bool seen = false;
        for (const cplx& w : out)
            if (std::abs(z - w) < tol) seen = true;
        if (!seen) out.push_back(z);
    }
    roots = std::move(out);
}

} // namespace detail

/// Every root of D over the window, argument-principle verified box by box.
/// Resonant doublets (series root + initial-state root sharing one box) are
/// recovered from a seed grid when plain Newton collapses them.
inline std::vector<cplx> verified_poles(const PdmParams& p, const SelfEnergy& sigma,
                                        int n_lo, int n_hi) {
    std::vector<cplx> roots = dressed_poles(p, sigma, n_lo, n_hi);
    try {
        roots.push_back(initial_state_pole(p, sigma));
    } catch (const std::runtime_error&) {
        // recovered by the box sweep when it exists inside the window
    }

    std::vector<double> level_e;
    if (sigma.is_series()) {
        for (int n = n_lo; n <= n_hi; ++n) {
            const cplx nu = static_cast<double>(n) - sigma.defect().mu();
            level_e.push_back((-0.5 / (nu * nu)).real());
        }
    } else {
        level_e = sigma.level_energies();
    }
    const int n_lev = static_cast<int>(level_e.size());
    if (n_lev == 0) return roots;
    double min_gap = std::abs(level_e[0]) + p.bandwidth;
    for (int i = 1; i < n_lev; ++i) min_gap = std::min(min_gap, level_e[i] - level_e[i - 1]);
    detail::dedupe_roots(roots, 1e-7 * min_gap);

    const double depth = 6.0 * (p.bandwidth + p.depletion_rate) + 0.75 * min_gap;
    for (int i = 0; i < n_lev; ++i) {
        const double left =
            i == 0 ? level_e[0] - 0.5 * (level_e[1] - level_e[0])
                   : 0.5 * (level_e[i - 1] + level_e[i]);
        const double right =
            i == n_lev - 1 ? level_e[i] + 0.5 * (level_e[i] - level_e[i - 1])
                           : 0.5 * (level_e[i] + level_e[i + 1]);
        const double gap = right - left;
        const cplx lo(left, -depth), hi(right, 0.2 * gap);
        const int expected = count_roots_in_box(p, sigma, lo, hi, 1);
        auto in_box = [&](const cplx& z) {
            return z.real() > left && z.real() <= right && z.imag() > -depth;
        };
        int found = 0;
        for (const cplx& z : roots) found += in_box(z) ? 1 : 0;
        if (found == expected) continue;
        if (found > expected)
            throw std::runtime_error("verified_poles: more roots than the winding count at n-box " +
                                     std::to_string(i));
        // seed grid inside the box
        for (int gy = 0; gy < 7 && found < expected; ++gy)
            for (int gx = 0; gx < 7 && found < expected; ++gx) {
                cplx z(left + gap * (gx + 0.5) / 7.0, -depth * (gy + 0.5) / 7.0);
                if (!detail::newton_polish(z, p, sigma, 0.4 * gap)) continue;
                if (!in_box(z) || z.imag() > 1e-12 * (std::abs(z.real()) + p.bandwidth)) continue;
                bool seen = false;
                for (const cplx& w : roots)
                    if (std::abs(z - w) < 1e-7 * min_gap) seen = true;
                if (seen) continue;
                roots.push_back(z);
                ++found;
            }
        if (found != expected)
            throw std::runtime_error("verified_poles: root recovery failed at n-box " +
                                     std::to_string(i));
    }
    return roots;
}

/// Evaluator for the characteristic kernel A(z) = U(z) + U*(-z) built from
/// the dressed pole set, the threshold logarithms, and the self-energy.
class SpectralKernel {
public:
    SpectralKernel(PdmParams params, SelfEnergy sigma, std::vector<cplx> poles,
                   bool threshold_terms)
        : params_(params), sigma_(std::move(sigma)), poles_(std::move(poles)),
          threshold_terms_(threshold_terms) {
        weights_.reserve(poles_.size());
        for (const cplx& zp : poles_) {
            const cplx dp = pole_function_derivative(zp, params_, sigma_);
            if (std::abs(dp) < 1e-300)
                throw std::runtime_error("SpectralKernel: degenerate pole weight");
            weights_.push_back(1.0 / std::conj(dp));
        }
    }

    const PdmParams& params() const { return params_; }
    const std::vector<cplx>& poles() const { return poles_; }
    const SelfEnergy& sigma() const { return sigma_; }

    /// U(z); only meaningful with the step factor, kept exactly as the
    /// reflection partner of U*(-z).
    cplx U(cplx z) const {
        const double th = theta_re(z);
        if (th == 0.0) return 0.0;
        cplx sum = 0.0;
        for (size_t k = 0; k < poles_.size(); ++k) {
            const cplx z1 = z + std::conj(poles_[k]);
            sum += weights_[k] / pole_function(z1, params_, sigma_);
        }
        cplx val = iu * sum;
        if (threshold_terms_) val += -C1(z) + C2(z);
        return th * val;
    }

    cplx A(cplx z) const { return U(z) + std::conj(U(std::conj(-z))); }

    /// Threshold branch terms; principal logs. The contour Im z > 0 keeps
    /// the log argument in the upper half plane, so no unwrapping occurs
    /// there; arg continuity is still monitored by the inversion driver.
    cplx C1(cplx z) const {
        const double b = params_.bandwidth, g = params_.depletion_rate, e = params_.mean_energy;
        const cplx num = z - e + iu * (b + 0.5 * g);
        const cplx den = cplx(-e, 0.5 * g - b);
        return std::log(num / den) / (2.0 * pi * (z + 2.0 * iu * b));
    }
    cplx C2(cplx z) const {
        const double b = params_.bandwidth, g = params_.depletion_rate, e = params_.mean_energy;
        const cplx num = z - e + iu * (b + 0.5 * g);
        const cplx den = cplx(-e, 0.5 * g + b);
        return std::log(num / den) / (2.0 * pi * (z + iu * (g + 2.0 * b)));
    }

    /// arg of the C-log numerator, used by the contour driver to detect
    /// branch crossings between adjacent nodes.
    double log_arg(cplx z) const {
        const double b = params_.bandwidth, g = params_.depletion_rate, e = params_.mean_energy;
        return std::arg(z - e + iu * (b + 0.5 * g));
    }

private:
    PdmParams params_;
    SelfEnergy sigma_;
    std::vector<cplx> poles_;
    std::vector<cplx> weights_;
    bool threshold_terms_;
};

/// Series kernel: dressed poles over [n_lo, n_hi] plus the initial-state
/// root, with the threshold terms on.
inline SpectralKernel make_kernel(const PdmParams& p, int n_lo, int n_hi) {
    SelfEnergy sig = SelfEnergy::qdt_series(p.depletion_rate, p.defect);
    std::vector<cplx> poles = verified_poles(p, sig, n_lo, n_hi);
    std::erase_if(poles, [](const cplx& zp) { return zp.real() >= 0.0; });
    return SpectralKernel(p, std::move(sig), std::move(poles), true);
}

/// Discrete kernel for toy models: every root of D (levels + initial
/// state), no threshold terms.
inline SpectralKernel make_kernel_discrete(const PdmParams& p, std::vector<double> energies,
                                           std::vector<double> couplings_sq) {
    SelfEnergy sig = SelfEnergy::discrete(std::move(energies), std::move(couplings_sq));
    const int n = static_cast<int>(sig.level_energies().size());
    std::vector<cplx> poles = verified_poles(p, sig, 0, n - 1);
    return SpectralKernel(p, std::move(sig), std::move(poles), false);
}

// --- contour inversion ----------------------------------------------------

struct ContourOptions {
    double t_max = 0.0;        // sets the offset delta; required
    double window = 0.0;       // half-width X; 0: automatic
    double refine_tol = 2e-4;  // relative interpolation tolerance on F
    int max_nodes = 400000;
    int photon_truncation = -1; // -1: closed geometric form, else sum N <= value
};

namespace detail {

/// int_alpha^beta u^k e^{-i u t} du for k = 0, 1, 2; series fallback when
/// the phase across the panel is small.
inline void filon_moments(double alpha, double beta, double t, cplx out[3]) {
    const double span = std::max(std::abs(alpha), std::abs(beta));
    if (std::abs(t) * span < 0.3) {
        for (int k = 0; k < 3; ++k) {
            cplx acc = 0.0;
            cplx fac = 1.0; // (-i t)^m / m!
            for (int m = 0; m < 26; ++m) {
                const double p = k + m + 1;
                const cplx term = fac * (std::pow(beta, p) - std::pow(alpha, p)) / p;
                acc += term;
                fac *= -iu * t / static_cast<double>(m + 1);
                if (std::abs(term) < 1e-18 * (1.0 + std::abs(acc)) && m > 3) break;
            }
            out[k] = acc;
        }
        return;
    }
    const cplx ea = std::exp(-iu * t * alpha), eb = std::exp(-iu * t * beta);
    const cplx it = iu / t;
    out[0] = (ea - eb) / (iu * t);
    out[1] = eb * (it * beta + 1.0 / (t * t)) - ea * (it * alpha + 1.0 / (t * t));
    out[2] = eb * (it * beta * beta + 2.0 * beta / (t * t) - 2.0 * iu / (t * t * t)) -
             ea * (it * alpha * alpha + 2.0 * alpha / (t * t) - 2.0 * iu / (t * t * t));
}

} // namespace detail

/// Adaptive contour for e^{-izt} inversion: log-clustered nodes around the
/// threshold point z = 0 plus uniform coverage of the pole-difference
/// region, refined until a quadratic interpolant of F is consistent.
class ContourInversion {
public:
    ContourInversion(const SpectralKernel& kernel, const ContourOptions& opt)
        : kernel_(kernel), opt_(opt) {
        const auto& p = kernel.params();
        if (opt_.t_max <= 0.0) throw std::invalid_argument("ContourInversion: t_max required");
        delta_ = 0.25 * std::min(1.0 / opt_.t_max, p.bandwidth);
        double X = opt_.window;
        if (X <= 0.0) {
            double spread = std::abs(p.mean_energy);
            for (const cplx& zp : kernel.poles())
                spread = std::max(spread, std::abs(zp.real() - p.mean_energy));
            X = 2.5 * (spread + std::abs(p.mean_energy)) +
                20.0 * (p.bandwidth + p.depletion_rate);
        }
        build_nodes(X);
    }

    double delta() const { return delta_; }
    size_t node_count() const { return x_.size(); }

    /// Winding number of 1 - 2bA along the contour; nonzero means the
    /// closed geometric form is invalid for these parameters.
    int geometric_winding() const {
        double acc = 0.0;
        cplx prev = 1.0 - 2.0 * kernel_.params().bandwidth * a_[0];
        for (size_t i = 1; i < a_.size(); ++i) {
            const cplx cur = 1.0 - 2.0 * kernel_.params().bandwidth * a_[i];
            acc += std::arg(cur / prev);
            prev = cur;
        }
        return static_cast<int>(std::lround(acc / (2.0 * pi)));
    }

    /// rho_gg(t) for each requested time; Im part is returned as a
    /// diagnostic through max_imag.
    std::vector<double> invert(const std::vector<double>& t_grid, double* max_imag = nullptr) const {
        if (opt_.photon_truncation < 0 && geometric_winding() != 0)
            throw std::runtime_error("ContourInversion: 1 - 2bA winds around zero on the contour");
        std::vector<cplx> f(x_.size());
        const double b = kernel_.params().bandwidth;
        for (size_t i = 0; i < x_.size(); ++i) {
            const cplx A = a_[i];
            if (opt_.photon_truncation < 0) {
                f[i] = A / (1.0 - 2.0 * b * A);
            } else {
                cplx acc = 0.0, pw = 1.0;
                for (int N = 0; N <= opt_.photon_truncation; ++N) {
                    acc += A * pw;
                    pw *= 2.0 * b * A;
                }
                f[i] = acc;
            }
        }
        std::vector<double> out(t_grid.size());
        double mi = 0.0;
        for (size_t it = 0; it < t_grid.size(); ++it) {
            const double t = t_grid[it];
            cplx acc = 0.0;
            cplx mom[3];
            for (size_t k = 0; k + 2 < x_.size(); k += 2) {
                const double x0 = x_[k], x1 = x_[k + 1], x2 = x_[k + 2];
                const cplx f0 = f[k], f1 = f[k + 1], f2 = f[k + 2];
                // quadratic through (x0,f0),(x1,f1),(x2,f2) in u = x - x1
                const double u0 = x0 - x1, u2 = x2 - x1;
                const cplx c0 = f1;
                const cplx c2 = ((f2 - f1) / u2 - (f1 - f0) / (-u0)) / (u2 - u0);
                const cplx c1 = (f2 - f1) / u2 - c2 * u2;
                detail::filon_moments(u0, u2, t, mom);
                acc += std::exp(-iu * t * x1) * (c0 * mom[0] + c1 * mom[1] + c2 * mom[2]);
            }
            const cplx val = acc * std::exp(delta_ * t) / (2.0 * pi);
            out[it] = val.real();
            mi = std::max(mi, std::abs(val.imag()));
        }
        if (max_imag) *max_imag = mi;
        return out;
    }

private:
    void build_nodes(double X) {
        std::vector<double> xs;
        // log clusters into the threshold point from both sides
        const double x_min = 0.25 * delta_;
        const int per_decade = 10;
        const int decades = static_cast<int>(std::ceil(std::log10(X / x_min)));
        for (int d = 0; d <= decades * per_decade; ++d) {
            const double v = x_min * std::pow(10.0, static_cast<double>(d) / per_decade);
            if (v > X) break;
            xs.push_back(v);
            xs.push_back(-v);
        }
        xs.push_back(0.5 * x_min);
        xs.push_back(-0.5 * x_min);
        // uniform backbone across the pole-difference region
        const int n_uni = 1601;
        for (int i = 0; i < n_uni; ++i) xs.push_back(-X + 2.0 * X * i / (n_uni - 1.0));
        std::sort(xs.begin(), xs.end());
        xs.erase(std::unique(xs.begin(), xs.end(),
                             [&](double a, double b) { return std::abs(a - b) < 1e-6 * x_min; }),
                 xs.end());

        // midpoint-error driven bisection, values carried along
        std::vector<std::pair<double, cplx>> nodes;
        nodes.reserve(xs.size() * 2);
        for (double x : xs) nodes.emplace_back(x, eval_A(x));
        bool changed = true;
        int guard = 0;
        while (changed && ++guard < 48 && static_cast<int>(nodes.size()) < opt_.max_nodes) {
            changed = false;
            double scale = 0.0;
            for (const auto& nv : nodes) scale = std::max(scale, std::abs(nv.second));
            std::vector<std::pair<double, cplx>> add;
            for (size_t i = 0; i + 1 < nodes.size(); ++i) {
                const double xm = 0.5 * (nodes[i].first + nodes[i + 1].first);
                const cplx fm = eval_A(xm);
                const cplx lin = 0.5 * (nodes[i].second + nodes[i + 1].second);
                const double err = std::abs(fm - lin);
                const double loc = std::max(
                    {std::abs(nodes[i].second), std::abs(nodes[i + 1].second), std::abs(fm)});
                const double da = std::abs(kernel_.log_arg(cplx(nodes[i + 1].first, delta_)) -
                                           kernel_.log_arg(cplx(nodes[i].first, delta_)));
                if (err > opt_.refine_tol * (0.03 * scale + loc) || da > pi) {
                    add.emplace_back(xm, fm);
                    changed = true;
                }
            }
            nodes.insert(nodes.end(), add.begin(), add.end());
            std::sort(nodes.begin(), nodes.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
        }
        if (nodes.size() % 2 == 0) {
            const double tail =
                nodes.back().first + (nodes.back().first - nodes[nodes.size() - 2].first);
            nodes.emplace_back(tail, eval_A(tail));
        }
        x_.resize(nodes.size());
        a_.resize(nodes.size());
        for (size_t i = 0; i < nodes.size(); ++i) {
            x_[i] = nodes[i].first;
            a_[i] = nodes[i].second;
        }
    }

    cplx eval_A(double x) const { return kernel_.A(cplx(x, delta_)); }

    const SpectralKernel& kernel_;
    ContourOptions opt_;
    double delta_ = 0.0;
    std::vector<double> x_;
    std::vector<cplx> a_;
};

/// rho_gg(t) over t_grid by contour inversion of A (1 - 2bA)^{-1}, or of the
/// photon-number partial sum when n_max >= 0.
inline TimeSeries rho_gg(const std::vector<double>& t_grid, const SpectralKernel& kernel,
                         int n_max = -1, ContourOptions opt = {}) {
    if (t_grid.empty()) throw std::invalid_argument("rho_gg: empty grid");
    for (double t : t_grid)
        if (t <= 0.0) throw std::invalid_argument("rho_gg: t must be positive");
    if (opt.t_max <= 0.0) opt.t_max = *std::max_element(t_grid.begin(), t_grid.end());
    opt.photon_truncation = n_max;
    ContourInversion inv(kernel, opt);
    TimeSeries ts;
    ts.t = t_grid;
    double mi = 0.0;
    ts.value = inv.invert(t_grid, &mi);
    ts.meta["max_imag"] = std::to_string(mi);
    ts.meta["contour_nodes"] = std::to_string(inv.node_count());
    ts.meta["contour_delta"] = std::to_string(inv.delta());
    return ts;
}

// --- critical times and asymptotic laws ------------------------------------

struct CriticalTimes {
    double t1 = 0.0; // onset of threshold-ward diffusion
    double tc = 0.0; // stochastic-ionization crossover
};

/// t1 = 8 / (pi b gamma T), tc with the bracketed mean-energy expression;
/// T is the mean classical orbit time 2 pi nbar^3.
inline CriticalTimes critical_times(const PdmParams& p) {
    p.validate();
    const double nbar_3 = std::pow(-2.0 * p.mean_energy, -1.5);
    const double T = 2.0 * pi * nbar_3;
    const double b = p.bandwidth, g = p.depletion_rate, e = p.mean_energy;
    CriticalTimes ct;
    ct.t1 = 8.0 / (pi * b * g * T);
    const double e2 = e * e;
    const double brig = std::pow(e2 + 0.75 * (b * b + 0.25 * g * g), 1.5) /
                        (e2 + b * b + 0.25 * g * g);
    ct.tc = 4.0 * pi / (std::sqrt(27.0) * g * b) * std::sqrt(brig);
    return ct;
}

/// Decay branch selector for the closed-form P_gg asymptotes.
enum class PggBranch { diffusive_half, threshold_five_thirds };

inline double asymptote_pgg(double t, const PdmParams& p, PggBranch branch) {
    p.validate();
    const double b = p.bandwidth, g = p.depletion_rate, e = p.mean_energy;
    if (branch == PggBranch::diffusive_half) {
        const double nbar_3 = std::pow(-2.0 * e, -1.5);
        const double T = 2.0 * pi * nbar_3;
        return 2.0 / std::sqrt(pi) * std::pow(2.0 * b * g * T, -0.5) * std::pow(t, -0.5);
    }
    const double phi = p.phi();
    const double pref = std::pow(g + 2.0 * b, 2) / std::pow(2.0 * b * g * phi / pi, 2) *
                        std::cbrt(g * b * std::pow(std::tgamma(5.0 / 3.0), 3) /
                                  (27.0 * pi * (e * e + b * b + 0.25 * g * g)));
    return pref * std::pow(t, -5.0 / 3.0);
}

inline double asymptote_pion(double t, const PdmParams& p) {
    p.validate();
    const double b = p.bandwidth, g = p.depletion_rate, e = p.mean_energy;
    const double phi = p.phi();
    const double c = pi * std::tgamma(2.0 / 3.0) * (g + 2.0 * b) / (6.0 * b * g * phi) *
                     std::cbrt(g * b / (pi * (e * e + b * b + 0.25 * g * g)));
    return 1.0 - c * std::pow(t, -2.0 / 3.0);
}

// --- log-log fitting --------------------------------------------------------

struct PowerLawFit {
    double exponent = 0.0;
    double log_prefactor = 0.0; // ln(value) at ln(t) = 0
    double stderr_exponent = 0.0;
    size_t points = 0;
};

/// Least squares in (ln t, ln y) over the window [t_lo, t_hi].
inline PowerLawFit fit_power_law(const TimeSeries& ts, double t_lo, double t_hi) {
    std::vector<double> lx, ly;
    for (size_t i = 0; i < ts.size(); ++i) {
        if (ts.t[i] < t_lo || ts.t[i] > t_hi) continue;
        if (!(ts.value[i] > 0.0))
            throw std::invalid_argument("fit_power_law: nonpositive value in window");
        lx.push_back(std::log(ts.t[i]));
        ly.push_back(std::log(ts.value[i]));
    }
    if (lx.size() < 10) throw std::invalid_argument("fit_power_law: fewer than 10 points in window");
    const size_t m = lx.size();
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < m; ++i) { mx += lx[i]; my += ly[i]; }
    mx /= m; my /= m;
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < m; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    PowerLawFit fit;
    fit.exponent = sxy / sxx;
    fit.log_prefactor = my - fit.exponent * mx;
    double ss = 0.0;
    for (size_t i = 0; i < m; ++i) {
        const double r = ly[i] - (fit.log_prefactor + fit.exponent * lx[i]);
        ss += r * r;
    }
    fit.stderr_exponent = std::sqrt(ss / (m - 2) / sxx);
    fit.points = m;
    return fit;
}

/// Local log-log slope by a short window fit centered (geometrically) on t0.
inline double local_log_slope(const TimeSeries& ts, double t0, double half_decades = 0.25) {
    const double f = std::pow(10.0, half_decades);
    return fit_power_law(ts, t0 / f, t0 * f).exponent;
}

} // namespace rydec
