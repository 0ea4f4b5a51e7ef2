#pragma once

namespace rydec::units {

// Hartree atomic units throughout; conversions only at the I/O boundary.
inline constexpr double second_per_au = 2.4188843265857e-17;
inline constexpr double ps_per_au = second_per_au * 1e12;
inline constexpr double ns_per_au = second_per_au * 1e9;

inline double au_from_ps(double t_ps) { return t_ps / ps_per_au; }
inline double au_from_ns(double t_ns) { return t_ns / ns_per_au; }
inline double ps_from_au(double t_au) { return t_au * ps_per_au; }
inline double ns_from_au(double t_au) { return t_au * ns_per_au; }

} // namespace rydec::units
