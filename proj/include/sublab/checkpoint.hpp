#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sublab/dns.hpp"

namespace sublab {

namespace detail {
/// Standard istream extraction cannot parse hexfloat; strtod can.
inline double read_double(std::istream& in) {
    std::string tok;
    in >> tok;
    return std::strtod(tok.c_str(), nullptr);
}
} // namespace detail

// Self-describing structured-text snapshot of a FlowState: a version tag,
// the grid header, then the complex arrays in hexfloat (bit-exact round
// trips).

inline void save_checkpoint(const std::string& path, const Grid& g, const FlowState& s) {
    std::ofstream out(path);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out << "sublab-checkpoint v1\n";
    out << std::hexfloat;
    out << "grid " << g.n_y() << " " << g.map_length() << " " << g.n_x() << " "
        << g.period() << "\n";
    out << "time " << s.time << "\n";
    out << "nu_eff " << s.nu_eff << "\n";
    out << "bc " << (s.bc == WallBc::NoSlip ? "NoSlip" : "NavierSlip") << "\n";
    out << "ubar";
    for (int i = 0; i < g.n_y(); ++i) out << " " << s.ubar[i];
    out << "\n";
    for (int k = 1; k < g.n_x(); ++k) {
        out << "omega " << k;
        for (int i = 0; i < g.n_y(); ++i)
            out << " " << s.vorticity.a(i, k).real() << " " << s.vorticity.a(i, k).imag();
        out << "\n";
    }
    out << "end\n";
}

struct Checkpoint {
    Grid grid;
    FlowState state;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line != "sublab-checkpoint v1")
        throw IoError("load_checkpoint: unknown version tag: " + line);

    Checkpoint cp;
    int n_y = 0, n_x = 0;
    double map_length = 0, period = 0;
    FlowState s;
    VectorXd ubar;
    MatrixXcd omega;
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::string key;
        row >> key;
        if (key == "grid") {
            row >> n_y;
            map_length = detail::read_double(row);
            row >> n_x;
            period = detail::read_double(row);
            cp.grid = build_halfline_grid(n_y, map_length, n_x, period);
            ubar = VectorXd::Zero(n_y);
            omega = MatrixXcd::Zero(n_y, n_x);
        } else if (key == "time") {
            s.time = detail::read_double(row);
        } else if (key == "nu_eff") {
            s.nu_eff = detail::read_double(row);
        } else if (key == "bc") {
            std::string b;
            row >> b;
            s.bc = (b == "NoSlip") ? WallBc::NoSlip : WallBc::NavierSlip;
        } else if (key == "ubar") {
            for (int i = 0; i < n_y; ++i) ubar[i] = detail::read_double(row);
        } else if (key == "omega") {
            int k;
            row >> k;
            for (int i = 0; i < n_y; ++i) {
                double re = detail::read_double(row);
                double im = detail::read_double(row);
                omega(i, k) = Complex(re, im);
            }
        } else if (key == "end") {
            break;
        } else {
            throw IoError("load_checkpoint: unknown record: " + key);
        }
    }
    if (!cp.grid.valid()) throw IoError("load_checkpoint: missing grid header");
    s.ubar = ubar;
    s.vorticity = Field(cp.grid, omega);
    s.vorticity.a.col(0) = -(cp.grid.d1() * ubar);
    ModePoisson poisson(cp.grid);
    s.stream = poisson.solve(s.vorticity);
    s.stream.a.col(0) = ubar.cast<Complex>();
    cp.state = std::move(s);
    return cp;
}

} // namespace sublab
