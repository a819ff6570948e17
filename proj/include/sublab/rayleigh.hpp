#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <optional>

#include "sublab/baseflow.hpp"

namespace sublab {

/// One eigen-solution of the Rayleigh problem
///   (U - c)(d_y^2 - alpha^2) psi = U'' psi,  psi(0) = psi(inf) = 0.
/// psi is stored in mode column 1 of a two-mode field whose period is
/// 2 pi / alpha, normalized to unit discrete L2 norm with d_y psi(0) real
/// and positive.
struct EigenMode {
    double alpha = 0.0;
    Complex c{0.0, 0.0};
    Complex lambda{0.0, 0.0}; // -i alpha c
    Field psi;
    double residual = 0.0;

    // L^p shape constants of the rendered unit-amplitude mode
    // Re(grad^perp(psi e^{i alpha x})): m_1, m_2, m_inf, and their envelope
    // c0 = min, c1 = max (the two-sided growth constants).
    double m1 = 0.0, m2 = 0.0, m_inf = 0.0;
    double c0 = 0.0, c1 = 0.0;

    double growth_rate() const { return lambda.real(); }

    /// Spectral coefficients of the unit-amplitude velocity mode
    /// u_e = grad^perp(psi e^{i alpha x}) as a half-spectrum field:
    /// physical value Re(u_hat e^{i alpha x}) e^{lambda t} at amplitude 1.
    VelocityField unit_velocity(double t = 0.0) const {
        VelocityField v = velocity_from_stream(psi);
        v *= 0.5 * std::exp(lambda * t);
        return v;
    }
};

namespace detail {

struct RayleighPencil {
    MatrixXd a, b; // interior collocation of (U - c) B psi = U'' psi as A psi = c B psi
};

inline RayleighPencil rayleigh_pencil(const ShearProfile& U, double alpha, const Grid& g) {
    const int n = g.n_y();
    const int m = n - 2;
    MatrixXd helm = g.d2() - alpha * alpha * MatrixXd::Identity(n, n);
    VectorXd upp = g.d2() * U.values;
    RayleighPencil p;
    p.a.resize(m, m);
    p.b.resize(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            p.a(i, j) = U.values[i + 1] * helm(i + 1, j + 1) -
                        (i == j ? upp[i + 1] : 0.0);
            p.b(i, j) = helm(i + 1, j + 1);
        }
    return p;
}

inline std::vector<Complex> rayleigh_eigenvalues(const ShearProfile& U, double alpha,
                                                 const Grid& g) {
    RayleighPencil p = rayleigh_pencil(U, alpha, g);
    Eigen::PartialPivLU<MatrixXd> blu(p.b);
    MatrixXd c = blu.solve(p.a);
    Eigen::EigenSolver<MatrixXd> es(c, /*computeEigenvectors=*/false);
    std::vector<Complex> evs(es.eigenvalues().data(),
                             es.eigenvalues().data() + es.eigenvalues().size());
    return evs;
}

} // namespace detail

struct SpectrumOptions {
    double match_tol = 1e-6;    // |c(n) - c(2n)| refinement filter
    double decay_tol = 1e-6;    // eigenfunction magnitude near the last node
    double residual_tol = 1e-6; // discrete L2 residual of the Rayleigh equation
};

/// All converged discrete eigenpairs at wavenumber alpha. Spurious modes
/// (non-convergent under grid doubling, or not decaying) are filtered out.
/// Returns an empty list when nothing converges; that is not an error.
inline std::vector<EigenMode> rayleigh_spectrum(const ShearProfile& U_in, double alpha,
                                                const Grid& grid,
                                                SpectrumOptions opts = {}) {
    if (alpha <= 0.0) throw InvalidWavenumber("rayleigh_spectrum: alpha must be positive");

    const double period = 2.0 * std::numbers::pi / alpha;
    Grid g = build_halfline_grid(grid.n_y(), grid.map_length(), 2, period);
    Grid g2 = build_halfline_grid(2 * grid.n_y(), grid.map_length(), 2, period);
    ShearProfile U = U_in.on_grid(g);

    detail::RayleighPencil pen = detail::rayleigh_pencil(U, alpha, g);
    Eigen::PartialPivLU<MatrixXd> blu(pen.b);
    MatrixXd cmat = blu.solve(pen.a);
    Eigen::EigenSolver<MatrixXd> es(cmat, /*computeEigenvectors=*/true);

    std::vector<Complex> fine = detail::rayleigh_eigenvalues(U_in.on_grid(g2), alpha, g2);

    const int n = g.n_y();
    const VectorXd upp = g.d2() * U.values;
    const MatrixXd helm = g.d2() - alpha * alpha * MatrixXd::Identity(n, n);

    std::vector<EigenMode> modes;
    for (int idx = 0; idx < es.eigenvalues().size(); ++idx) {
        Complex c = es.eigenvalues()[idx];
        if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) continue;

        double best = std::numeric_limits<double>::infinity();
        for (const Complex& cf : fine) best = std::min(best, std::abs(c - cf));
        if (best >= opts.match_tol) continue;

        VectorXcd interior = es.eigenvectors().col(idx);
        VectorXcd psi = VectorXcd::Zero(n);
        psi.segment(1, n - 2) = interior;

        EigenMode m;
        m.alpha = alpha;
        m.c = c;
        m.lambda = Complex(0.0, -alpha) * c;
        m.psi = Field(g);
        m.psi.a.col(1) = psi;
        double nrm = norm_l2(m.psi);
        m.psi.a /= nrm;
        Complex slope = (g.d1().row(0) * m.psi.a.col(1))(0);
        if (std::abs(slope) > 0.0) m.psi.a *= std::conj(slope) / std::abs(slope);

        // decay check on the normalized eigenfunction near the truncation
        if (std::abs(m.psi.a(n - 2, 1)) > opts.decay_tol) continue;

        // residual of the collocated equation at interior nodes
        VectorXcd r = VectorXcd::Zero(n);
        VectorXcd hpsi = helm * m.psi.a.col(1);
        for (int i = 1; i < n - 1; ++i)
            r[i] = (U.values[i] - c) * hpsi[i] - upp[i] * m.psi.a(i, 1);
        double res = 0.0;
        for (int i = 1; i < n - 1; ++i)
            res += g.quad_weights()[i] * std::norm(r[i]);
        m.residual = std::sqrt(g.period() * res);
        if (m.residual > opts.residual_tol) continue;

        VelocityField u = m.unit_velocity();
        m.m1 = real_l1(u);
        m.m2 = real_l2(u);
        m.m_inf = real_linf(u);
        m.c0 = std::min({m.m1, m.m2, m.m_inf});
        m.c1 = std::max({m.m1, m.m2, m.m_inf});
        modes.push_back(std::move(m));
    }
    std::sort(modes.begin(), modes.end(),
              [](const EigenMode& a, const EigenMode& b) { return a.c.imag() > b.c.imag(); });
    return modes;
}

/// Scan alpha_grid and return the mode maximizing Re lambda = alpha Im c;
/// ties break toward smaller alpha.
inline EigenMode max_growth_mode(const ShearProfile& U, const std::vector<double>& alpha_grid,
                                 const Grid& grid, SpectrumOptions opts = {}) {
    if (alpha_grid.empty())
        throw InvalidArgument("max_growth_mode: alpha grid must be nonempty");
    std::optional<EigenMode> best;
    for (double alpha : alpha_grid) {
        for (const EigenMode& m : rayleigh_spectrum(U, alpha, grid, opts)) {
            if (m.c.imag() <= 1e-7) continue;
            if (!best || m.growth_rate() > best->growth_rate() + 1e-12) best = m;
        }
    }
    if (!best)
        throw NoUnstableMode(
            "max_growth_mode: no unstable Rayleigh mode on the scanned wavenumbers; "
            "the profile does not meet the spectral-instability assumption");
    return *best;
}

/// The seeded growing solution nu^N Re(grad^perp(psi_e e^{i alpha x}) e^{lambda t}).
inline VelocityField growing_mode_field(const EigenMode& m, int N, double nu, double t) {
    if (m.growth_rate() <= 0.0)
        throw InvalidArgument("growing_mode_field: mode is not growing");
    double envelope = std::pow(nu, N) * std::exp(m.growth_rate() * t);
    if (envelope > 1.0)
        throw AmplitudeOverflow("growing_mode_field: nu^N e^{Re lambda t} exceeds 1");
    VelocityField v = m.unit_velocity(t);
    v *= std::pow(nu, N);
    return v;
}

/// State of the linearized Euler equations around a shear flow, advanced in
/// vorticity form per x-wavenumber.
struct LinEulerState {
    double time = 0.0;
    Field omega;
    Field psi; // (d_y^2 - beta_k^2) psi = omega, psi = 0 at both ends
};

/// Stepper for d_t omega + i beta U omega - i beta U'' psi = source, one
/// wavenumber column per harmonic of the grid's fundamental beta.
class LinEulerStepper {
public:
    LinEulerStepper(const ShearProfile& U, const Grid& g)
        : grid_(g), poisson_(g), mode0_(g) {
        ShearProfile Ug = U.grid.same_y(g) ? U : U.on_grid(g);
        u_ = Ug.values;
        upp_ = g.d2() * u_;
        max_u_ = u_.cwiseAbs().maxCoeff();
    }

    const Grid& grid() const { return grid_; }
    double max_base_speed() const { return max_u_; }

    /// Right-hand side of the vorticity equation; psi must be consistent.
    Field rhs(const Field& omega, const Field& psi, const Field& source) const {
        Field out = source;
        for (int k = 1; k < grid_.n_x(); ++k) {
            Complex ib(0.0, grid_.beta(k));
            out.a.col(k) -= ib * u_.cwiseProduct(omega.a.col(k));
            out.a.col(k) += ib * upp_.cwiseProduct(psi.a.col(k));
        }
        return out;
    }

    /// Classic four-stage step with the source frozen over the step.
    LinEulerState step(const LinEulerState& s, const Field& source, double dt) const {
        check_dt(dt);
        auto f = [&](const Field& w) {
            Field psi = poisson_.solve(w);
            return rhs(w, psi, source);
        };
        Field k1 = f(s.omega);
        Field k2 = f(s.omega + (0.5 * dt) * k1);
        Field k3 = f(s.omega + (0.5 * dt) * k2);
        Field k4 = f(s.omega + Complex(dt) * k3);
        LinEulerState out;
        out.time = s.time + dt;
        out.omega = s.omega + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.psi = poisson_.solve(out.omega);
        return out;
    }

    /// Velocity reconstruction; the zero mode uses the decaying top gauge.
    VelocityField velocity(const Field& omega) const {
        Field psi = poisson_.solve(omega);
        VelocityField v = velocity_from_stream(psi);
        v.ux.a.col(0) = mode0_.from_vorticity(omega.a.col(0));
        v.uy.a.col(0).setZero();
        return v;
    }

    const ModePoisson& poisson() const { return poisson_; }

    void check_dt(double dt) const {
        if (dt <= 0.0) throw InvalidArgument("LinEulerStepper: dt must be positive");
        double beta_max = grid_.beta(grid_.n_x() - 1);
        if (dt * beta_max * max_u_ > 1.0)
            throw CflViolation("LinEulerStepper: dt beta max|U| exceeds 1");
    }

private:
    Grid grid_;
    ModePoisson poisson_;
    Mode0Velocity mode0_;
    VectorXd u_, upp_;
    double max_u_ = 0.0;
};

/// One step of the linearized Euler equations at fundamental wavenumber
/// beta (mode k of the state advects with k beta).
inline LinEulerState step_linearized_euler(const LinEulerState& state, const ShearProfile& U,
                                           double beta, const Field& source, double dt) {
    const Grid& g = state.omega.grid;
    if (std::abs(g.alpha0() - beta) > 1e-12 * std::max(1.0, beta))
        throw GridMismatch("step_linearized_euler: state grid fundamental differs from beta");
    LinEulerStepper stepper(U, g);
    return stepper.step(state, source, dt);
}

} // namespace sublab
