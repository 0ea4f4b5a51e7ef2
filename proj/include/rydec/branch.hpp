#pragma once

#include <complex>

namespace rydec {

using cplx = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr cplx iu{0.0, 1.0};

/// (-2z)^(-1/2) on the principal branch, cut along the positive real z axis.
/// Every module that needs a Coulomb phase goes through this one helper so
/// the branch choice cannot drift between solvers.
///
/// On the cut (z real > 0) the value is the limit from above, +i/sqrt(2z),
/// which makes e^{2 pi i nu(z)} decay for open channels.
inline cplx inv_sqrt_neg2(cplx z) {
    cplx w = -2.0 * z;
    if (z.imag() == 0.0)
        w = cplx(w.real(), -0.0); // approach the cut from Im z > 0
    return 1.0 / std::sqrt(w);
}

/// Step function on the real part; 1/2 exactly on the imaginary axis.
inline double theta_re(cplx z) {
    if (z.real() > 0.0) return 1.0;
    if (z.real() < 0.0) return 0.0;
    return 0.5;
}

} // namespace rydec
