#pragma once

#include <fftw3.h>

#include <cstring>
#include <map>
#include <mutex>
#include <tuple>

#include "sublab/grid.hpp"

namespace sublab {

/// One scalar unknown in horizontal-Fourier representation. Column k of
/// `a` holds the coefficient profile of wavenumber k alpha0. A real
/// physical field keeps only k >= 0; the k < 0 coefficients are the
/// implied conjugates, so realness amounts to Im a_0 = 0.
struct Field {
    Grid grid;
    MatrixXcd a; // n_y x n_x

    Field() = default;
    explicit Field(const Grid& g) : grid(g), a(MatrixXcd::Zero(g.n_y(), g.n_x())) {}
    Field(const Grid& g, MatrixXcd coeffs) : grid(g), a(std::move(coeffs)) {
        if (a.rows() != grid.n_y() || a.cols() != grid.n_x())
            throw GridMismatch("Field: coefficient shape does not match grid");
    }

    int n_modes() const { return grid.n_x(); }

    Field& operator+=(const Field& o) {
        require_same_grid(o);
        a += o.a;
        return *this;
    }
    Field& operator-=(const Field& o) {
        require_same_grid(o);
        a -= o.a;
        return *this;
    }
    Field& operator*=(Complex c) {
        a *= c;
        return *this;
    }
    friend Field operator+(Field f, const Field& g) { return f += g; }
    friend Field operator-(Field f, const Field& g) { return f -= g; }
    friend Field operator*(Complex c, Field f) { return f *= c; }

    void require_same_grid(const Field& o) const {
        if (!(grid == o.grid)) throw GridMismatch("Field: grids differ");
    }

    /// Deviation from conjugate symmetry of a real-valued physical field.
    double realness_defect() const { return a.col(0).imag().cwiseAbs().maxCoeff(); }
};

inline Field dx(const Field& f) {
    Field r(f.grid);
    for (int k = 0; k < f.n_modes(); ++k)
        r.a.col(k) = Complex(0.0, f.grid.beta(k)) * f.a.col(k);
    return r;
}

inline Field dy(const Field& f) { return Field(f.grid, f.grid.d1() * f.a); }

inline Field dyy(const Field& f) { return Field(f.grid, f.grid.d2() * f.a); }

/// (d_y^2 - beta_k^2) per mode.
inline Field laplacian(const Field& f) {
    Field r(f.grid, f.grid.d2() * f.a);
    for (int k = 0; k < f.n_modes(); ++k) {
        double b = f.grid.beta(k);
        r.a.col(k) -= (b * b) * f.a.col(k);
    }
    return r;
}

struct VelocityField {
    Field ux, uy;

    VelocityField() = default;
    explicit VelocityField(const Grid& g) : ux(g), uy(g) {}
    VelocityField(Field x, Field y) : ux(std::move(x)), uy(std::move(y)) {}

    const Grid& grid() const { return ux.grid; }

    VelocityField& operator+=(const VelocityField& o) {
        ux += o.ux;
        uy += o.uy;
        return *this;
    }
    VelocityField& operator-=(const VelocityField& o) {
        ux -= o.ux;
        uy -= o.uy;
        return *this;
    }
    VelocityField& operator*=(Complex c) {
        ux *= c;
        uy *= c;
        return *this;
    }
    friend VelocityField operator+(VelocityField a, const VelocityField& b) { return a += b; }
    friend VelocityField operator-(VelocityField a, const VelocityField& b) { return a -= b; }
    friend VelocityField operator*(Complex c, VelocityField f) { return f *= c; }
};

/// u = (-d_y psi, d_x psi); discretely divergence-free by construction.
inline VelocityField velocity_from_stream(const Field& psi) {
    return {Complex(-1.0, 0.0) * dy(psi), dx(psi)};
}

inline Field curl(const VelocityField& v) { return dx(v.uy) - dy(v.ux); }

inline Field divergence(const VelocityField& v) { return dx(v.ux) + dy(v.uy); }

namespace detail {

inline int next_fast_size(int n) {
    for (;; ++n) {
        int m = n;
        while (m % 2 == 0) m /= 2;
        while (m % 3 == 0) m /= 3;
        while (m % 5 == 0) m /= 5;
        if (m == 1 && n % 2 == 0) return n;
    }
}

/// FFTW buffers and plans for row-wise transforms of an (n_y x modes)
/// coefficient matrix to an (n_y x n_p) physical matrix. The planner is
/// serialized; execution is on thread-local workspaces.
struct FftWorkspace {
    int n_y = 0, n_p = 0;
    fftw_complex* cbuf = nullptr;
    double* rbuf = nullptr;
    fftw_plan c2r = nullptr, r2c = nullptr;

    FftWorkspace(int ny, int np) : n_y(ny), n_p(np) {
        static std::mutex planner;
        std::lock_guard<std::mutex> lock(planner);
        cbuf = fftw_alloc_complex(static_cast<size_t>(ny) * (np / 2 + 1));
        rbuf = fftw_alloc_real(static_cast<size_t>(ny) * np);
        int n[] = {np};
        c2r = fftw_plan_many_dft_c2r(1, n, ny, cbuf, nullptr, ny, 1, rbuf, nullptr, ny, 1,
                                     FFTW_ESTIMATE);
        r2c = fftw_plan_many_dft_r2c(1, n, ny, rbuf, nullptr, ny, 1, cbuf, nullptr, ny, 1,
                                     FFTW_ESTIMATE);
    }
    FftWorkspace(const FftWorkspace&) = delete;
    FftWorkspace& operator=(const FftWorkspace&) = delete;
    ~FftWorkspace() {
        if (c2r) fftw_destroy_plan(c2r);
        if (r2c) fftw_destroy_plan(r2c);
        fftw_free(cbuf);
        fftw_free(rbuf);
    }
};

inline FftWorkspace& fft_workspace(int n_y, int n_p) {
    thread_local std::map<std::pair<int, int>, std::unique_ptr<FftWorkspace>> cache;
    auto& slot = cache[{n_y, n_p}];
    if (!slot) slot = std::make_unique<FftWorkspace>(n_y, n_p);
    return *slot;
}

} // namespace detail

/// Physical samples of a real-symmetric field at x_j = period j / n_p.
/// Returns an n_y x n_p matrix.
inline MatrixXd to_physical(const Field& f, int n_p) {
    const int ny = f.grid.n_y();
    const int K = f.n_modes() - 1;
    auto& ws = detail::fft_workspace(ny, n_p);
    const int nc = n_p / 2 + 1;
    std::memset(ws.cbuf, 0, sizeof(fftw_complex) * static_cast<size_t>(ny) * nc);
    for (int k = 0; k <= std::min(K, n_p / 2); ++k)
        for (int i = 0; i < ny; ++i) {
            ws.cbuf[static_cast<size_t>(k) * ny + i][0] = f.a(i, k).real();
            ws.cbuf[static_cast<size_t>(k) * ny + i][1] = f.a(i, k).imag();
        }
    fftw_execute(ws.c2r);
    MatrixXd out(ny, n_p);
    for (int j = 0; j < n_p; ++j)
        for (int i = 0; i < ny; ++i) out(i, j) = ws.rbuf[static_cast<size_t>(j) * ny + i];
    return out;
}

/// Truncated spectral coefficients of physical samples (inverse of to_physical).
inline Field from_physical(const Grid& g, const MatrixXd& vals) {
    const int ny = g.n_y();
    const int n_p = static_cast<int>(vals.cols());
    auto& ws = detail::fft_workspace(ny, n_p);
    for (int j = 0; j < n_p; ++j)
        for (int i = 0; i < ny; ++i) ws.rbuf[static_cast<size_t>(j) * ny + i] = vals(i, j);
    fftw_execute(ws.r2c);
    Field f(g);
    const int K = std::min(g.n_x() - 1, n_p / 2);
    for (int k = 0; k <= K; ++k)
        for (int i = 0; i < ny; ++i)
            f.a(i, k) = Complex(ws.cbuf[static_cast<size_t>(k) * ny + i][0],
                                ws.cbuf[static_cast<size_t>(k) * ny + i][1]) /
                        double(n_p);
    return f;
}

/// Dealiased pointwise product of two real-symmetric fields
/// (3/2-style padding: quadratic products are alias-free).
inline Field multiply(const Field& f, const Field& g) {
    f.require_same_grid(g);
    const int K = f.n_modes() - 1;
    const int n_p = detail::next_fast_size(3 * K + 1 < 8 ? 8 : 3 * K + 1);
    MatrixXd pf = to_physical(f, n_p);
    MatrixXd pg = to_physical(g, n_p);
    pf.array() *= pg.array();
    return from_physical(f.grid, pf);
}

/// (a . grad) w for a scalar w.
inline Field advect_scalar(const VelocityField& a, const Field& w) {
    return multiply(a.ux, dx(w)) + multiply(a.uy, dy(w));
}

/// (a . grad) b.
inline VelocityField advect(const VelocityField& a, const VelocityField& b) {
    return {advect_scalar(a, b.ux), advect_scalar(a, b.uy)};
}

/// Zero-extend a field to a grid with the same y-structure but more modes.
inline Field extended(const Field& f, const Grid& g) {
    if (!f.grid.same_y(g) || f.grid.period() != g.period())
        throw GridMismatch("extended: target grid has different y-structure or period");
    if (g.n_x() < f.n_modes()) throw GridMismatch("extended: target grid has fewer modes");
    Field r(g);
    r.a.leftCols(f.n_modes()) = f.a;
    return r;
}

inline VelocityField extended(const VelocityField& v, const Grid& g) {
    return {extended(v.ux, g), extended(v.uy, g)};
}

} // namespace sublab
