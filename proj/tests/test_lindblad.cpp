#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "rydec/lindblad.hpp"
#include "rydec/sde.hpp"

using namespace rydec;
using Catch::Approx;

namespace {

/// two-level system with decay kappa and drive Omega on resonance
OperatorBundle two_level(double kappa, double omega_rabi) {
    OperatorBundle ops;
    ops.H = Eigen::MatrixXcd::Zero(2, 2);
    ops.H(0, 1) = 0.5 * omega_rabi;
    ops.H(1, 0) = 0.5 * omega_rabi;
    if (kappa > 0.0) {
        Eigen::MatrixXcd L = Eigen::MatrixXcd::Zero(2, 2);
        L(0, 1) = std::sqrt(kappa);
        ops.jumps.push_back(L);
    }
    return ops;
}

Eigen::MatrixXcd excited_density() {
    Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(2, 2);
    rho(1, 1) = 1.0;
    return rho;
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = a + (b - a) * i / (n - 1.0);
    return v;
}

/// random few-level open system used by the consistency sweeps
OperatorBundle random_model(std::mt19937_64& eng, int dim) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    OperatorBundle ops;
    Eigen::MatrixXcd H(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) H(i, j) = cplx(u(eng), u(eng));
    ops.H = 0.5 * (H + H.adjoint());
    Eigen::MatrixXcd L(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) L(i, j) = 0.3 * cplx(u(eng), u(eng));
    ops.jumps.push_back(L);
    if (u(eng) > 0.0) {
        Eigen::VectorXcd w(dim);
        for (int i = 0; i < dim; ++i) w(i) = 0.2 * cplx(u(eng), u(eng));
        ops.absorbers.push_back(w);
        ops.absorber_labels.push_back("loss");
    }
    return ops;
}

} // namespace

TEST_CASE("master equation on two-level oracles") {
    SECTION("undriven decay") {
        const double kappa = 0.37;
        auto ops = two_level(kappa, 0.0);
        auto tr = evolve_master(excited_density(), ops, linspace(0.0, 8.0, 33));
        for (size_t i = 0; i < tr.t.size(); ++i)
            CHECK(tr.rho[i](1, 1).real() == Approx(std::exp(-kappa * tr.t[i])).margin(1e-6));
    }
    SECTION("Rabi period") {
        const double omega = 0.83;
        auto ops = two_level(0.0, omega);
        // population returns to the excited state after 2 pi / Omega
        auto tg = linspace(0.0, 2.0 * pi / omega, 65);
        auto tr = evolve_master(excited_density(), ops, tg);
        CHECK(tr.rho.back()(1, 1).real() == Approx(1.0).margin(1e-6));
        CHECK(tr.rho[32](1, 1).real() == Approx(0.0).margin(1e-6)); // half period
        // quarter scan locates the period to 0.1%
        double min_val = 2.0;
        size_t imin = 0;
        for (size_t i = 0; i < tg.size(); ++i)
            if (tr.rho[i](1, 1).real() < min_val) {
                min_val = tr.rho[i](1, 1).real();
                imin = i;
            }
        CHECK(tg[imin] * 2.0 == Approx(2.0 * pi / omega).epsilon(1e-3));
    }
    SECTION("trace conservation without decay") {
        auto ops = two_level(0.0, 0.4);
        auto tr = evolve_master(excited_density(), ops, linspace(0.0, 2000.0 * pi, 9));
        for (const auto& rho : tr.rho)
            CHECK(std::abs(rho.trace().real() - 1.0) < 1e-8);
    }
}

TEST_CASE("pdm master saturates at one half") {
    PdmParams p;
    const double nbar = 80.0, T = kepler_period(nbar);
    p.mean_energy = -0.5 / (nbar * nbar);
    p.bandwidth = 0.02 / T;
    p.depletion_rate = 0.02 / T;
    BasisSpec basis{70, 90, true};
    auto sys = build_pdm_system(p, basis);
    Eigen::MatrixXcd rho0 = sys.psi0 * sys.psi0.adjoint();
    // averaged well past the ring-down (1/b = 50 T) and well before t1
    std::vector<double> tg{0.0};
    for (int i = 0; i < 8; ++i) tg.push_back((400.0 + 120.0 * i) * T);
    auto tr = evolve_master(rho0, sys.ops, tg);
    double mg = 0.0, mn = 0.0;
    const int i80 = 1 + (80 - basis.n_min);
    for (size_t i = 1; i < tr.t.size(); ++i) {
        mg += tr.rho[i](0, 0).real();
        mn += tr.rho[i](i80, i80).real();
    }
    CHECK(mg / (tg.size() - 1) == Approx(0.5).margin(0.02));
    CHECK(mn / (tg.size() - 1) == Approx(0.5).margin(0.02));
}

TEST_CASE("operator structure of the builders") {
    SECTION("diagonal when nothing drives") {
        ChannelModel m;
        m.channels = {Channel{0.0, QuantumDefect(0.0, 0.0), true, ""},
                      Channel{0.2, QuantumDefect(0.0, 0.0), false, ""}};
        m.couplings = Eigen::MatrixXcd::Zero(2, 2);
        m.cw_frequency = 0.2;
        FieldSpec f;
        f.pulse_peak = 1e-8;
        f.pulse_duration = 1e6;
        BasisSpec basis{70, 90, false};
        auto sys = build_ice_system(m, basis, f, {1.0, 0.0}, bound_energy(80, m.channels[0].defect));
        for (int i = 0; i < sys.nn; ++i) {
            const double e = sys.ops.H(sys.index(0, i), sys.index(0, i)).real();
            CHECK(e + sys.mean_energy ==
                  Approx(bound_energy(basis.n_min + i, m.channels[0].defect)).epsilon(1e-12));
        }
        CHECK(sys.ops.H.cwiseAbs().sum() ==
              Approx(sys.ops.H.diagonal().cwiseAbs().sum()).epsilon(1e-12));
        CHECK(sys.ops.jumps.empty());
    }
    SECTION("equal defects couple equal n only") {
        ChannelModel m;
        m.channels = {Channel{0.0, QuantumDefect(0.3, 0.0), true, ""},
                      Channel{0.2, QuantumDefect(0.3, 0.0), false, ""}};
        m.couplings = Eigen::MatrixXcd::Zero(2, 2);
        m.cw_frequency = 0.2;
        m.core_rabi = 1e-6;
        FieldSpec f;
        f.pulse_peak = 1e-8;
        f.pulse_duration = 1e6;
        BasisSpec basis{70, 90, false};
        auto sys = build_ice_system(m, basis, f, {1.0, 0.0}, bound_energy(80, m.channels[0].defect));
        for (int i = 0; i < sys.nn; ++i)
            for (int j = 0; j < sys.nn; ++j) {
                const cplx v = sys.ops.H(sys.index(0, i), sys.index(1, j));
                if (i == j)
                    CHECK(std::abs(v - cplx(-0.5e-6, 0.0)) < 1e-18);
                else
                    CHECK(std::abs(v) < 1e-12 * 0.5e-6);
            }
    }
    SECTION("pdm mode carries the dephasing jump") {
        PdmParams p;
        p.mean_energy = -0.5 / 400.0;
        p.bandwidth = 1e-7;
        p.depletion_rate = 1e-7;
        auto sys = build_pdm_system(p, BasisSpec{15, 25, true});
        REQUIRE(sys.ops.jumps.size() == 1);
        const auto& L = sys.ops.jumps[0];
        CHECK(std::abs(L(0, 0) - cplx(std::sqrt(2.0 * p.bandwidth), 0.0)) < 1e-15);
        CHECK(L.cwiseAbs().sum() == Approx(std::abs(L(0, 0))).epsilon(1e-12));
    }
    SECTION("window validation") {
        CHECK_THROWS_AS(BasisSpec(90, 70, false).validate(0.0), std::invalid_argument);
        CHECK_THROWS_AS(check_window(BasisSpec{78, 82, false}, -0.5 / 6400.0, 1e-5, 0.0),
                        std::invalid_argument);
    }
}

TEST_CASE("deterministic unraveling") {
    SECTION("two-level photon partition is exact") {
        const double kappa = 0.21;
        auto ops = two_level(kappa, 0.0);
        Eigen::VectorXcd psi0(2);
        psi0 << 0.0, 1.0;
        for (double t : {0.5, 2.0, 6.0}) {
            auto pr = unravel_deterministic(psi0, ops, t, 1, 128);
            CHECK(pr.contributions[0](1, 1).real() == Approx(std::exp(-kappa * t)).margin(1e-9));
            CHECK(pr.contributions[1](0, 0).real() ==
                  Approx(1.0 - std::exp(-kappa * t)).margin(1e-6));
        }
    }
    SECTION("no decay: the zero-photon piece is everything") {
        auto ops = two_level(0.0, 0.7);
        Eigen::VectorXcd psi0(2);
        psi0 << 0.0, 1.0;
        auto pr = unravel_deterministic(psi0, ops, 3.0, 2, 32);
        CHECK(pr.contributions[0].trace().real() == Approx(1.0).margin(1e-10));
        CHECK(pr.contributions[1].cwiseAbs().maxCoeff() < 1e-12);
        CHECK(pr.contributions[2].cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("truncated sum matches the master solution at low photon count") {
        // driven + weakly decaying: expected photons < 0.3
        const double kappa = 0.05, omega = 0.6, t = 4.0;
        auto ops = two_level(kappa, omega);
        Eigen::VectorXcd psi0(2);
        psi0 << 0.0, 1.0;
        auto pr = unravel_deterministic(psi0, ops, t, 2, 256);
        Eigen::MatrixXcd sum = pr.contributions[0] + pr.contributions[1] + pr.contributions[2];
        auto tr = evolve_master(excited_density(), ops, {0.0, t});
        CHECK((sum - tr.rho.back()).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(pr.quad_error < 1e-6);
    }
}

TEST_CASE("monte-carlo unraveling") {
    SECTION("waiting times of pure decay") {
        const double kappa = 0.4;
        auto ops = two_level(kappa, 0.0);
        Eigen::VectorXcd psi0(2);
        psi0 << 0.0, 1.0;
        auto mc = unravel_monte_carlo(psi0, ops, linspace(0.0, 20.0, 21), 4000, 1234);
        std::vector<double> waits;
        for (const auto& tr : mc.trajectories)
            if (!tr.jump_times.empty()) waits.push_back(tr.jump_times.front());
        REQUIRE(waits.size() > 3800); // nearly all decayed by t = 20/0.4
        std::sort(waits.begin(), waits.end());
        const double median = waits[waits.size() / 2];
        // median of kappa e^{-kappa tau} is ln2/kappa; 3 sigma via order statistics
        const double expect = std::log(2.0) / kappa;
        const double sigma = 1.0 / (kappa * std::sqrt(static_cast<double>(waits.size())));
        CHECK(std::abs(median - expect) < 3.0 * sigma);
    }
    SECTION("no jump operators, no jumps") {
        auto ops = two_level(0.0, 0.9);
        Eigen::VectorXcd psi0(2);
        psi0 << 1.0, 0.0;
        auto mc = unravel_monte_carlo(psi0, ops, linspace(0.0, 30.0, 11), 50, 77);
        for (const auto& tr : mc.trajectories) CHECK(tr.jump_times.empty());
    }
    SECTION("ensemble mean tracks the master equation over random models") {
        std::mt19937_64 eng(2024);
        int checked = 0;
        for (int trial = 0; trial < 20; ++trial) {
            const int dim = 2 + trial % 3;
            auto ops = random_model(eng, dim);
            Eigen::VectorXcd psi0 = Eigen::VectorXcd::Zero(dim);
            psi0(0) = 1.0;
            auto tg = linspace(0.0, 3.0, 4);
            const int n_traj = 600;
            auto mc = unravel_monte_carlo(psi0, ops, tg, n_traj, 100 + trial);
            auto ref = evolve_master(psi0 * psi0.adjoint(), ops, tg);
            for (size_t i = 1; i < tg.size(); ++i)
                for (int k = 0; k < dim; ++k) {
                    const double p = ref.rho[i](k, k).real();
                    const double sig = std::sqrt(std::max(p * (1.0 - p), 1e-4) / n_traj);
                    CHECK(std::abs(mc.rho[i](k, k).real() - p) < 3.5 * sig + 5e-3);
                    ++checked;
                }
        }
        CHECK(checked > 100);
    }
}

TEST_CASE("rate attribution") {
    SECTION("no absorption means zero rate") {
        auto ops = two_level(0.3, 0.5);
        auto tr = evolve_master(excited_density(), ops, linspace(0.0, 5.0, 6));
        auto rates = ionization_rate(tr, ops);
        for (double g : rates.total) CHECK(g == 0.0);
    }
    SECTION("single decaying resonance") {
        OperatorBundle ops;
        ops.H = Eigen::MatrixXcd::Zero(1, 1);
        const double gam = 0.12;
        Eigen::VectorXcd w(1);
        w(0) = std::sqrt(gam);
        ops.absorbers.push_back(w);
        ops.absorber_labels.push_back("autoionization");
        Eigen::MatrixXcd rho0 = Eigen::MatrixXcd::Identity(1, 1);
        auto tg = linspace(0.0, 20.0, 21);
        auto tr = evolve_master(rho0, ops, tg);
        auto rates = ionization_rate(tr, ops);
        for (size_t i = 0; i < tg.size(); ++i)
            CHECK(rates.total[i] == Approx(gam * std::exp(-gam * tg[i])).margin(1e-8));
    }
}

TEST_CASE("master invariants over random sweeps") {
    std::mt19937_64 eng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const int dim = 2 + trial % 4;
        auto ops = random_model(eng, dim);
        Eigen::VectorXcd psi0 = Eigen::VectorXcd::Zero(dim);
        psi0(dim - 1) = 1.0;
        auto tg = linspace(0.0, 4.0, 17);
        auto tr = evolve_master(psi0 * psi0.adjoint(), ops, tg);
        double prev_trace = 1.0 + 1e-12;
        for (const auto& rho : tr.rho) {
            const double trc = rho.trace().real();
            if (!ops.absorbers.empty())
                CHECK(trc <= prev_trace + 1e-9);
            prev_trace = trc;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho);
            CHECK(es.eigenvalues().minCoeff() >= -1e-8);
            CHECK((rho - rho.adjoint()).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
}
