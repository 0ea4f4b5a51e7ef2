#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rydec {

/// Plain observable trace. Columns are fixed by the CSV writers:
/// (t_au, t_over_T, value[, stderr]).
struct TimeSeries {
    std::vector<double> t;     // a.u.
    std::vector<double> value;
    std::vector<double> err;   // empty when no statistical error applies
    double period = 0.0;       // reference period T for the t/T column
    std::map<std::string, std::string> meta;

    size_t size() const { return t.size(); }
    bool has_err() const { return !err.empty(); }
};

/// Radial probability density snapshots: rows (t_au, r_au, density).
struct RadialGrid {
    std::vector<double> t;                     // snapshot times
    std::vector<double> r;                     // shared radial grid
    std::vector<std::vector<double>> density;  // [snapshot][radius]
};

namespace detail {
inline std::uint64_t fnv1a_update(std::uint64_t h, const char* s, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(s[i]);
        h *= 1099511628211ULL;
    }
    return h;
}
} // namespace detail

/// FNV-1a 64 over a file's bytes; used for the run manifest.
inline std::string file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checksum: cannot open " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = detail::fnv1a_update(h, buf, static_cast<size_t>(in.gcount()));
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

inline void write_csv(const std::string& path, const TimeSeries& ts,
                      const std::string& header_comment = "",
                      bool timestamp = false) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << std::setprecision(15);
    if (timestamp) {
        std::time_t now = std::time(nullptr);
        char buf[64];
        std::strftime(buf, sizeof(buf), "%F %T", std::gmtime(&now));
        out << "# written " << buf << " UTC\n";
    }
    if (!header_comment.empty()) out << "# " << header_comment << "\n";
    out << (ts.has_err() ? "t_au,t_over_T,value,stderr\n" : "t_au,t_over_T,value\n");
    const double T = ts.period > 0 ? ts.period : 1.0;
    for (size_t i = 0; i < ts.size(); ++i) {
        out << ts.t[i] << ',' << ts.t[i] / T << ',' << ts.value[i];
        if (ts.has_err()) out << ',' << ts.err[i];
        out << '\n';
    }
}

inline void write_radial_csv(const std::string& path, const RadialGrid& g,
                             bool timestamp = false) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << std::setprecision(10);
    if (timestamp) {
        std::time_t now = std::time(nullptr);
        char buf[64];
        std::strftime(buf, sizeof(buf), "%F %T", std::gmtime(&now));
        out << "# written " << buf << " UTC\n";
    }
    out << "t_au,r_au,density\n";
    for (size_t s = 0; s < g.t.size(); ++s)
        for (size_t i = 0; i < g.r.size(); ++i)
            out << g.t[s] << ',' << g.r[i] << ',' << g.density[s][i] << '\n';
}

} // namespace rydec
