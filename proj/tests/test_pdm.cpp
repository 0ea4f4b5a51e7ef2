#include <catch2/catch_amalgamated.hpp>

#include "rydec/pdm.hpp"

using namespace rydec;
using Catch::Approx;

namespace {
PdmParams desk_params(double nbar, double bT, double gT, double alpha = 0.0, double beta = 0.0) {
    PdmParams p;
    p.mean_energy = -0.5 / (nbar * nbar);
    const double T = kepler_period(nbar);
    p.bandwidth = bT / T;
    p.depletion_rate = gT / T;
    p.defect = QuantumDefect(alpha, beta);
    return p;
}
} // namespace

TEST_CASE("self energy closed form") {
    const double T = kepler_period(30);
    SelfEnergy sig = SelfEnergy::qdt_series(1.0 / T, QuantumDefect(0.3, 0.0));

    SECTION("matches long partial sums where |q| < 0.99") {
        for (double re : {-9e-4, -6.2e-4, -4.4e-4}) {
            const cplx z(re, 2e-6);
            if (std::abs(sig.q(z)) >= 0.99) continue;
            CHECK(std::abs(sig(z) - sig.partial_sum(z, 1000)) <=
                  1e-10 * (std::abs(sig(z)) + 1e-12));
        }
    }
    SECTION("deep below threshold the smooth half dominates") {
        // strong absorption: the return contribution is e^{-2 pi beta} small
        SelfEnergy sb = SelfEnergy::qdt_series(1.0 / T, QuantumDefect(0.3, 0.75));
        const cplx z(-50.0, 0.0);
        CHECK(std::abs(sb(z) - cplx(0.0, -0.5 / T)) < 0.02 / T);
    }
    SECTION("gamma = 0 vanishes identically") {
        SelfEnergy s0 = SelfEnergy::qdt_series(0.0, QuantumDefect(0.3, 0.0));
        CHECK(std::abs(s0(cplx(-5e-4, 1e-7))) == 0.0);
    }
    SECTION("refuses |q| >= 1 on the real axis") {
        // exactly at a bound energy the return series diverges
        const double eb = bound_energy(30, QuantumDefect(0.3, 0.0));
        CHECK_THROWS_AS(sig(cplx(eb, 0.0)), std::domain_error);
    }
    SECTION("poles sit at the bound energies") {
        // zero of 1 - q by Newton, compared against the closed-form energy
        for (int n : {20, 30, 45}) {
            const QuantumDefect d(0.3, 0.0);
            double z = bound_energy(n, d) * (1.0 + 3e-6);
            for (int it = 0; it < 60; ++it) {
                const cplx nu = inv_sqrt_neg2(cplx(z, 0.0));
                const double f = nu.real() + d.alpha - n;
                z -= f / std::pow(-2.0 * z, -1.5);
            }
            CHECK(std::abs(z - bound_energy(n, d)) <= 1e-12 * std::abs(z));
        }
    }
    SECTION("residue at a pole equals gamma / (2 pi nu^3)") {
        const int n = 30;
        const double zp = bound_energy(n, QuantumDefect(0.3, 0.0));
        const double r = 2e-7; // small circle
        cplx acc = 0.0;
        const int m = 512;
        for (int k = 0; k < m; ++k) {
            const double th = 2.0 * pi * (k + 0.3) / m;
            const cplx z = zp + r * std::exp(iu * th);
            acc += sig(z) * r * std::exp(iu * th) * iu * (2.0 * pi / m);
        }
        acc /= 2.0 * pi * iu;
        const double nu = n - 0.3;
        const double expected = (1.0 / T) / (2.0 * pi * nu * nu * nu);
        CHECK(std::abs(acc - expected) < 2e-4 * expected);
    }
    SECTION("analytic derivative against central differences") {
        const cplx z(-6.3e-4, 5e-6);
        const cplx h(1e-10, 0.0);
        const cplx fd = (sig(z + h) - sig(z - h)) / (2.0 * h);
        CHECK(std::abs(sig.derivative(z) - fd) < 1e-4 * std::abs(fd));
    }
}

TEST_CASE("dressed poles") {
    SECTION("bare limit as the couplings vanish") {
        PdmParams p = desk_params(30, 1e-8, 1e-8, 0.2, 0.0);
        SelfEnergy sig = SelfEnergy::qdt_series(p.depletion_rate, p.defect);
        auto poles = dressed_poles(p, sig, 25, 35);
        for (int i = 0; i < 11; ++i) {
            const double bare = bound_energy(25 + i, p.defect);
            CHECK(std::abs(poles[i] - bare) <= 1e-10 * std::abs(bare));
        }
    }
    SECTION("perturbative shift for weak coupling") {
        PdmParams p = desk_params(30, 0.05, 0.05, 0.0, 0.0);
        SelfEnergy sig = SelfEnergy::qdt_series(p.depletion_rate, p.defect);
        auto poles = dressed_poles(p, sig, 26, 34);
        for (int i = 0; i < 9; ++i) {
            const int n = 26 + i;
            if (std::abs(bound_energy(n, p.defect) - p.mean_energy) < 1e-9) continue;
            const double nu = n;
            const double d2 = p.depletion_rate / (2.0 * pi * nu * nu * nu);
            const cplx first =
                bound_energy(n, p.defect) +
                d2 / (bound_energy(n, p.defect) - p.mean_energy + iu * p.bandwidth);
            const double shift = std::abs(poles[i] - bound_energy(n, p.defect));
            if (shift > 0)
                CHECK(std::abs(poles[i] - first) < 0.1 * shift + 1e-16);
        }
    }
    SECTION("no gain for any bandwidth") {
        for (double bT : {0.1, 1.0, 30.0, 300.0}) {
            PdmParams p = desk_params(40, bT, 1.0, 0.1, 0.0);
            SelfEnergy sig = SelfEnergy::qdt_series(p.depletion_rate, p.defect);
            auto poles = dressed_poles(p, sig, 30, 60);
            for (const auto& zp : poles) CHECK(zp.imag() <= 1e-15);
        }
    }
    SECTION("argument-principle count per annulus") {
        PdmParams p = desk_params(30, 0.5, 0.5); // resonant at n = 30
        SelfEnergy sig = SelfEnergy::qdt_series(p.depletion_rate, p.defect);
        auto poles = verified_poles(p, sig, 28, 32);
        CHECK(poles.size() == 6); // one per level plus the initial-state root
        for (int i = 0; i < 5; ++i) {
            const int n = 28 + i;
            const double e = bound_energy(n, p.defect);
            const double half = 0.45 * (bound_energy(n + 1, p.defect) - e);
            const cplx lo(e - half, -40.0 * half), hi(e + half, +0.1 * half);
            const int count = count_roots_in_box(p, sig, lo, hi, 1, 600);
            int found = 0;
            for (const auto& zp : poles)
                if (zp.real() > lo.real() && zp.real() < hi.real() && zp.imag() > lo.imag())
                    ++found;
            CHECK(count == found);
            CHECK(count == (n == 30 ? 2 : 1)); // resonant box holds the doublet
        }
    }
}

TEST_CASE("critical times") {
    SECTION("reference parameter set") {
        PdmParams p = desk_params(80, 0.01, 0.1);
        const double T = kepler_period(80);
        auto ct = critical_times(p);
        CHECK(ct.t1 / T == Approx(2546.5).epsilon(1e-3));
        CHECK(ct.tc / T == Approx(6.9e7).epsilon(0.02));
        CHECK(ct.t1 < ct.tc);
    }
    SECTION("scaling in b and gamma") {
        PdmParams p = desk_params(60, 0.2, 0.3);
        auto ct = critical_times(p);
        PdmParams p2 = p;
        p2.bandwidth *= 2.0;
        p2.depletion_rate *= 2.0;
        auto ct2 = critical_times(p2);
        CHECK(ct2.t1 == Approx(0.25 * ct.t1).epsilon(1e-12));
    }
}

TEST_CASE("asymptotic laws") {
    PdmParams p = desk_params(80, 0.01, 0.1);
    SECTION("exact exponents by construction") {
        const double t1 = 1e9, t2 = 8e9;
        const double s_half = std::log(asymptote_pgg(t2, p, PggBranch::diffusive_half) /
                                       asymptote_pgg(t1, p, PggBranch::diffusive_half)) /
                              std::log(t2 / t1);
        CHECK(s_half == Approx(-0.5).epsilon(1e-12));
        const double s_53 = std::log(asymptote_pgg(t2, p, PggBranch::threshold_five_thirds) /
                                     asymptote_pgg(t1, p, PggBranch::threshold_five_thirds)) /
                            std::log(t2 / t1);
        CHECK(s_53 == Approx(-5.0 / 3.0).epsilon(1e-12));
    }
    SECTION("branch intersection near the crossover time") {
        auto ct = critical_times(p);
        // solve C1 t^-1/2 = C2 t^-5/3
        const double c1 = asymptote_pgg(1.0, p, PggBranch::diffusive_half);
        const double c2 = asymptote_pgg(1.0, p, PggBranch::threshold_five_thirds);
        const double tx = std::pow(c2 / c1, 6.0 / 7.0);
        CHECK(tx / ct.tc > 1.0 / 3.0);
        CHECK(tx / ct.tc < 3.0);
    }
    SECTION("ionization approach exponent") {
        const double t1 = 3e11, t2 = 9e11;
        const double y1 = 1.0 - asymptote_pion(t1, p), y2 = 1.0 - asymptote_pion(t2, p);
        CHECK(std::log(y2 / y1) / std::log(t2 / t1) == Approx(-2.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("power-law fitting") {
    TimeSeries ts;
    for (int i = 0; i < 60; ++i) {
        const double t = 10.0 * std::pow(10.0, i / 20.0);
        ts.t.push_back(t);
        ts.value.push_back(3.7 * std::pow(t, -0.5));
    }
    auto fit = fit_power_law(ts, ts.t.front(), ts.t.back());
    CHECK(fit.exponent == Approx(-0.5).margin(1e-12));
    CHECK(fit.stderr_exponent < 1e-12);

    TimeSeries bad;
    for (int i = 0; i < 60; ++i) {
        const double t = 1.0 + i;
        bad.t.push_back(t);
        bad.value.push_back(std::exp(-0.3 * t));
    }
    auto fe = fit_power_law(bad, 1.0, 60.0);
    CHECK(fe.stderr_exponent > 0.01); // model mismatch shows up in the error

    TimeSeries neg = ts;
    neg.value[5] = -1.0;
    CHECK_THROWS_AS(fit_power_law(neg, ts.t.front(), ts.t.back()), std::invalid_argument);
    CHECK_THROWS_AS(fit_power_law(ts, 1e9, 2e9), std::invalid_argument);
}

TEST_CASE("kernel and inversion") {
    SECTION("two-level saturation at one half") {
        PdmParams p = desk_params(80, 0.01, 0.01); // resonant at n = 80
        SpectralKernel kernel = make_kernel(p, 60, 110);
        const double T = kepler_period(80);
        std::vector<double> tg;
        // well past the Rabi ring-down (1/b = 100 T), well before t1
        for (int i = 0; i < 12; ++i) tg.push_back(700.0 * T * std::pow(1.12, i));
        auto ts = rho_gg(tg, kernel);
        double mean = 0.0;
        for (double v : ts.value) mean += v;
        mean /= ts.value.size();
        CHECK(mean == Approx(0.5).margin(0.02));
        CHECK(std::stod(ts.meta.at("max_imag")) < 1e-9);
    }
    SECTION("early-time normalization") {
        PdmParams p = desk_params(30, 0.5, 0.5);
        SpectralKernel kernel = make_kernel(p, 10, 90);
        const double T = kepler_period(30);
        ContourOptions opt;
        opt.t_max = T;
        opt.window = 0.05; // wide window so the 1/z tail is captured at t to 0
        auto ts = rho_gg({1e-3 * T}, kernel, -1, opt);
        CHECK(ts.value[0] == Approx(1.0).margin(0.03));
    }
    SECTION("photon-resolved partial sums approach the closed form") {
        PdmParams p = desk_params(30, 0.5, 0.5);
        SpectralKernel kernel = make_kernel(p, 15, 60);
        const double T = kepler_period(30);
        std::vector<double> tg{3.0 * T, 10.0 * T};
        auto closed = rho_gg(tg, kernel);
        double prev_dev = 1e9;
        for (int nmax : {2, 6, 14, 30}) {
            auto part = rho_gg(tg, kernel, nmax);
            double dev = 0.0;
            for (size_t i = 0; i < tg.size(); ++i)
                dev = std::max(dev, std::abs(part.value[i] - closed.value[i]));
            CHECK(dev < prev_dev + 1e-12);
            prev_dev = dev;
        }
        CHECK(prev_dev < 5e-3);
    }
    SECTION("coherent limit reduces to the resonant Rabi flop") {
        // negligible noise: kernel rho_gg should track cos^2(d t)
        PdmParams p = desk_params(20, 1e-4, 1e-4);
        SpectralKernel kernel = make_kernel(p, 8, 60);
        const double nu = 20.0;
        const double d = std::sqrt(p.depletion_rate / (2.0 * pi)) * std::pow(nu, -1.5);
        std::vector<double> tg;
        const double t_rabi = pi / d; // full population return
        for (int i = 1; i <= 8; ++i) tg.push_back(i * t_rabi / 8.0);
        auto ts = rho_gg(tg, kernel);
        for (size_t i = 0; i < tg.size(); ++i) {
            const double expect = std::pow(std::cos(d * tg[i]), 2);
            CHECK(ts.value[i] == Approx(expect).margin(0.02));
        }
    }
}
