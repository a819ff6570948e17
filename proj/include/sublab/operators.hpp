#pragma once

#include <Eigen/LU>

#include "sublab/field.hpp"

namespace sublab {

/// y-differentiation as a reusable linear operator on Fields.
struct DiffOp {
    Grid grid;
    int order = 1;

    Field apply(const Field& f) const {
        if (!(f.grid == grid)) throw GridMismatch("DiffOp: field grid differs");
        return Field(grid, matrix() * f.a);
    }
    const MatrixXd& matrix() const { return order == 1 ? grid.d1() : grid.d2(); }
};

inline DiffOp diff_op(const Grid& g, int order) {
    if (order != 1 && order != 2)
        throw InvalidArgument("diff_op: order must be 1 or 2");
    return DiffOp{g, order};
}

enum class PoissonBc {
    DirichletBoth,           // psi(0) = wall value, psi(y_max) = top value
    WallDirichletTopNeumann, // psi(0) = wall value, psi'(y_max) = top value
    DirichletDecay           // decay realized as homogeneous Dirichlet; alpha > 0 required
};

namespace detail {

/// Real-factorization solve of a complex right-hand side with one step of
/// iterative refinement.
struct RefinedLu {
    MatrixXd sys;
    Eigen::PartialPivLU<MatrixXd> lu;

    RefinedLu() = default;
    explicit RefinedLu(MatrixXd m) : sys(std::move(m)), lu(sys) {}

    VectorXd solve(const VectorXd& b) const {
        VectorXd x = lu.solve(b);
        x += lu.solve(b - sys * x);
        return x;
    }
    VectorXcd solve(const VectorXcd& b) const {
        VectorXcd x(b.size());
        x.real() = solve(VectorXd(b.real()));
        x.imag() = solve(VectorXd(b.imag()));
        return x;
    }
};

} // namespace detail

/// Dense solver for (d_y^2 - alpha^2) psi = rhs with boundary rows replacing
/// the first and last collocation equations.
class HelmholtzSolver {
public:
    HelmholtzSolver() = default;
    HelmholtzSolver(const Grid& g, double alpha, PoissonBc bc)
        : grid_(g), alpha_(alpha), bc_(bc) {
        if (alpha < 0.0) throw InvalidArgument("HelmholtzSolver: alpha must be >= 0");
        if (bc == PoissonBc::DirichletDecay && alpha == 0.0)
            throw IllPosed("HelmholtzSolver: alpha = 0 has no decaying solution on the half-line");
        const int n = g.n_y();
        op_ = g.d2() - alpha * alpha * MatrixXd::Identity(n, n);
        MatrixXd sys = op_;
        sys.row(0) = VectorXd::Unit(n, 0).transpose();
        if (bc == PoissonBc::WallDirichletTopNeumann)
            sys.row(n - 1) = g.d1().row(n - 1);
        else
            sys.row(n - 1) = VectorXd::Unit(n, n - 1).transpose();
        lu_ = detail::RefinedLu(std::move(sys));
    }

    VectorXcd solve(const VectorXcd& rhs, Complex wall = 0.0, Complex top = 0.0) const {
        VectorXcd b = rhs;
        b[0] = wall;
        b[b.size() - 1] = top;
        return lu_.solve(b);
    }
    VectorXd solve(const VectorXd& rhs, double wall = 0.0, double top = 0.0) const {
        VectorXd b = rhs;
        b[0] = wall;
        b[b.size() - 1] = top;
        return lu_.solve(b);
    }

    double alpha() const { return alpha_; }
    PoissonBc bc() const { return bc_; }
    const MatrixXd& helmholtz_matrix() const { return op_; }

private:
    Grid grid_;
    double alpha_ = 0.0;
    PoissonBc bc_ = PoissonBc::DirichletBoth;
    MatrixXd op_;
    detail::RefinedLu lu_;
};

/// Solve (d_y^2 - alpha^2) psi = rhs for every mode column with one alpha.
inline Field poisson_solve(const Grid& g, double alpha, const Field& rhs, PoissonBc bc,
                           Complex wall = 0.0, Complex top = 0.0) {
    HelmholtzSolver solver(g, alpha, bc);
    Field psi(rhs.grid);
    for (int k = 0; k < rhs.n_modes(); ++k)
        psi.a.col(k) = solver.solve(VectorXcd(rhs.a.col(k)), wall, top);
    return psi;
}

/// Per-mode stream-function solves (alpha = beta_k), homogeneous Dirichlet.
class ModePoisson {
public:
    ModePoisson() = default;
    explicit ModePoisson(const Grid& g) : grid_(g) {
        solvers_.reserve(g.n_x());
        for (int k = 0; k < g.n_x(); ++k)
            solvers_.emplace_back(g, g.beta(k), PoissonBc::DirichletBoth);
    }
    Field solve(const Field& rhs) const {
        Field psi(rhs.grid);
        for (int k = 0; k < rhs.n_modes(); ++k)
            psi.a.col(k) = solvers_[k].solve(VectorXcd(rhs.a.col(k)));
        return psi;
    }
    const HelmholtzSolver& mode(int k) const { return solvers_[k]; }

private:
    Grid grid_;
    std::vector<HelmholtzSolver> solvers_;
};

// ---------------------------------------------------------------------------
// Discrete norms.
//
// discrete_norm treats the field as the complex function
//   f(x,y) = sum_{k=0}^{K} a_k(y) e^{i k alpha0 x}
// over one period (no implied conjugate modes). Quantities tied to the
// physical real-valued field (classifier thresholds, sup norms of DNS
// states) use the real_* helpers below, which reconstruct
//   a_0 + 2 Re sum_{k>=1} a_k e^{i k alpha0 x}.
// ---------------------------------------------------------------------------

struct NormKind {
    enum Type { Lp, Hs, Linf } type = Lp;
    double p = 2.0;
    int s = 0;

    static NormKind lp(double p) { return {Lp, p, 0}; }
    static NormKind hs(int s) { return {Hs, 2.0, s}; }
    static NormKind linf() { return {Linf, 0.0, 0}; }
};

namespace detail {

inline int norm_samples(int n_modes) { return std::max(16, 4 * n_modes); }

template <typename F>
void for_each_x_sample(const Field& f, int n_s, F&& fn) {
    const int K = f.n_modes() - 1;
    VectorXcd vals(f.grid.n_y());
    for (int j = 0; j < n_s; ++j) {
        double theta = 2.0 * std::numbers::pi * j / n_s;
        Complex e = std::polar(1.0, theta);
        vals = f.a.col(K);
        for (int k = K - 1; k >= 0; --k) vals = (vals * e + f.a.col(k)).eval();
        fn(vals);
    }
}

} // namespace detail

inline double norm_l2(const Field& f) {
    const auto& w = f.grid.quad_weights();
    double s = 0.0;
    for (int k = 0; k < f.n_modes(); ++k)
        s += w.dot(f.a.col(k).cwiseAbs2().eval());
    return std::sqrt(f.grid.period() * s);
}

inline double norm_linf(const Field& f) {
    double m = 0.0;
    detail::for_each_x_sample(f, detail::norm_samples(f.n_modes()),
                              [&](const VectorXcd& v) { m = std::max(m, v.cwiseAbs().maxCoeff()); });
    return m;
}

inline double norm_l1(const Field& f) {
    const int n_s = detail::norm_samples(f.n_modes());
    const auto& w = f.grid.quad_weights();
    double s = 0.0;
    detail::for_each_x_sample(f, n_s, [&](const VectorXcd& v) { s += w.dot(v.cwiseAbs().eval()); });
    return s * f.grid.period() / n_s;
}

inline double norm_lp(const Field& f, double p) {
    if (p == 1.0) return norm_l1(f);
    if (p == 2.0) return norm_l2(f);
    if (std::isinf(p)) return norm_linf(f);
    throw InvalidArgument("discrete_norm: p must be 1, 2 or infinity");
}

inline double norm_hs(const Field& f, int s) {
    if (s < 0 || s > 2) throw InvalidArgument("discrete_norm: Hs needs s in {0,1,2}");
    double total = std::pow(norm_l2(f), 2);
    if (s >= 1) {
        total += std::pow(norm_l2(dx(f)), 2);
        total += std::pow(norm_l2(dy(f)), 2);
    }
    if (s >= 2) {
        total += std::pow(norm_l2(dx(dx(f))), 2);
        total += std::pow(norm_l2(dy(dx(f))), 2);
        total += std::pow(norm_l2(dyy(f)), 2);
    }
    return std::sqrt(total);
}

inline double discrete_norm(const Field& f, NormKind kind) {
    switch (kind.type) {
        case NormKind::Lp: return norm_lp(f, kind.p);
        case NormKind::Hs: return norm_hs(f, kind.s);
        case NormKind::Linf: return norm_linf(f);
    }
    throw InvalidArgument("discrete_norm: bad kind");
}

inline double norm_l2(const VelocityField& v) {
    return std::hypot(norm_l2(v.ux), norm_l2(v.uy));
}
inline double norm_hs(const VelocityField& v, int s) {
    return std::hypot(norm_hs(v.ux, s), norm_hs(v.uy, s));
}
inline double norm_linf(const VelocityField& v) {
    return std::max(norm_linf(v.ux), norm_linf(v.uy));
}

/// Sup norm of the reconstructed real field.
inline double real_linf(const Field& f) {
    const int n_p = detail::next_fast_size(std::max(16, 4 * f.n_modes()));
    return to_physical(f, n_p).cwiseAbs().maxCoeff();
}

/// Pointwise Euclidean sup norm of a real vector field.
inline double real_linf(const VelocityField& v) {
    const int n_p = detail::next_fast_size(std::max(16, 4 * v.ux.n_modes()));
    MatrixXd px = to_physical(v.ux, n_p), py = to_physical(v.uy, n_p);
    return (px.array().square() + py.array().square()).sqrt().maxCoeff();
}

/// L2 norm of the reconstructed real field.
inline double real_l2(const Field& f) {
    const auto& w = f.grid.quad_weights();
    double s = w.dot(f.a.col(0).real().cwiseAbs2().eval());
    for (int k = 1; k < f.n_modes(); ++k)
        s += 2.0 * w.dot(f.a.col(k).cwiseAbs2().eval());
    return std::sqrt(f.grid.period() * s);
}

inline double real_l2(const VelocityField& v) {
    return std::hypot(real_l2(v.ux), real_l2(v.uy));
}

/// L1 norm of the reconstructed real field.
inline double real_l1(const Field& f) {
    const int n_p = detail::next_fast_size(std::max(16, 4 * f.n_modes()));
    MatrixXd p = to_physical(f, n_p);
    double s = 0.0;
    for (int j = 0; j < n_p; ++j) s += f.grid.quad_weights().dot(p.col(j).cwiseAbs().eval());
    return s * f.grid.period() / n_p;
}

/// Pointwise-Euclidean L1 norm of a real vector field.
inline double real_l1(const VelocityField& v) {
    const int n_p = detail::next_fast_size(std::max(16, 4 * v.ux.n_modes()));
    MatrixXd px = to_physical(v.ux, n_p), py = to_physical(v.uy, n_p);
    MatrixXd mag = (px.array().square() + py.array().square()).sqrt();
    double s = 0.0;
    for (int j = 0; j < n_p; ++j) s += v.grid().quad_weights().dot(mag.col(j).eval());
    return s * v.grid().period() / n_p;
}

/// Replace the extreme rows at both ends by polynomial extrapolation from
/// the adjacent interior nodes. Repeated differentiation on the clustered
/// grid amplifies coefficient-tail noise by ~1/h^2 in the endpoint rows;
/// smooth fields lose nothing to the extrapolation (the clamped nodes sit
/// far inside one resolution length).
class EndpointRegularizer {
public:
    EndpointRegularizer() = default;
    explicit EndpointRegularizer(const Grid& g, int n_fix = 3, int n_use = 7)
        : n_fix_(n_fix) {
        const auto& u = g.data().u;
        const int n = g.n_y();
        auto weights = [&](int target, int first) {
            VectorXd w(n_use);
            for (int a = 0; a < n_use; ++a) {
                double prod = 1.0;
                for (int b = 0; b < n_use; ++b)
                    if (a != b)
                        prod *= (u[target] - u[first + b]) / (u[first + a] - u[first + b]);
                w[a] = prod;
            }
            return w;
        };
        lo_.resize(n_fix, n_use);
        hi_.resize(n_fix, n_use);
        for (int i = 0; i < n_fix; ++i) {
            lo_.row(i) = weights(i, n_fix).transpose();
            hi_.row(i) = weights(n - 1 - i, n - n_fix - n_use).transpose();
        }
        n_use_ = n_use;
    }

    void apply_in_place(Field& f) const {
        const int n = f.grid.n_y();
        f.a.topRows(n_fix_) = lo_ * f.a.middleRows(n_fix_, n_use_);
        MatrixXcd hi = hi_ * f.a.middleRows(n - n_fix_ - n_use_, n_use_);
        for (int i = 0; i < n_fix_; ++i) f.a.row(n - 1 - i) = hi.row(i);
    }
    void apply_in_place(VelocityField& v) const {
        apply_in_place(v.ux);
        apply_in_place(v.uy);
    }

private:
    int n_fix_ = 3, n_use_ = 7;
    MatrixXd lo_, hi_;
};

/// Exponential filter in Chebyshev coefficient space: crushes the top of the
/// coefficient tail (roundoff noise amplified by repeated differentiation on
/// the clustered grid) while leaving resolved content untouched to ~1e-7.
class ChebFilter {
public:
    ChebFilter() = default;
    explicit ChebFilter(const Grid& g, int order = 16) {
        const int n = g.n_y();
        const int N = n - 1;
        MatrixXd synth(n, n), anal(n, n);
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                synth(j, k) = std::cos(k * j * std::numbers::pi / N);
        for (int k = 0; k < n; ++k) {
            double ck = (k == 0 || k == N) ? 2.0 : 1.0;
            for (int j = 0; j < n; ++j) {
                double cj = (j == 0 || j == N) ? 2.0 : 1.0;
                anal(k, j) = 2.0 / (N * ck * cj) * std::cos(k * j * std::numbers::pi / N);
            }
        }
        VectorXd sigma(n);
        const double amp = 36.0; // -log(eps)
        for (int k = 0; k < n; ++k)
            sigma[k] = std::exp(-amp * std::pow(double(k) / N, 2.0 * order));
        f_ = synth * sigma.asDiagonal() * anal;
    }

    void apply_in_place(Field& f, int first_col = 0) const {
        int nc = f.n_modes() - first_col;
        f.a.rightCols(nc) = f_ * f.a.rightCols(nc);
    }
    const MatrixXd& matrix() const { return f_; }

private:
    MatrixXd f_;
};

/// Horizontal mode-0 velocity from mode-0 vorticity in the decaying gauge:
/// solves d_y u = -omega with u(y_max) = 0, so u(y) = int_y^ymax omega.
class Mode0Velocity {
public:
    Mode0Velocity() = default;
    explicit Mode0Velocity(const Grid& g) : n_(g.n_y()) {
        MatrixXd sys = g.d1();
        sys.row(n_ - 1) = VectorXd::Unit(n_, n_ - 1).transpose();
        lu_ = detail::RefinedLu(std::move(sys));
    }
    VectorXcd from_vorticity(const VectorXcd& omega0) const {
        VectorXcd b = -omega0;
        b[n_ - 1] = 0.0;
        return lu_.solve(b);
    }

private:
    int n_ = 0;
    detail::RefinedLu lu_;
};

/// Remove the gradient part of a momentum residual: per mode solve
/// (d_y^2 - beta^2) p = div r with Neumann data matching the normal
/// component, then subtract grad p. The zero mode keeps only its
/// horizontal component.
class LerayProjector {
public:
    explicit LerayProjector(const Grid& g) : grid_(g) {
        const int n = g.n_y();
        for (int k = 1; k < g.n_x(); ++k) {
            double b = g.beta(k);
            MatrixXd sys = g.d2() - b * b * MatrixXd::Identity(n, n);
            sys.row(0) = g.d1().row(0);
            sys.row(n - 1) = g.d1().row(n - 1);
            lus_.emplace_back(std::move(sys));
        }
    }

    VelocityField project(const VelocityField& r) const {
        if (!(r.grid() == grid_)) throw GridMismatch("LerayProjector: grid differs");
        VelocityField out = r;
        out.uy.a.col(0).setZero();
        Field div = divergence(r);
        const int n = grid_.n_y();
        for (int k = 1; k < grid_.n_x(); ++k) {
            VectorXcd b = div.a.col(k);
            b[0] = r.uy.a(0, k);
            b[n - 1] = r.uy.a(n - 1, k);
            VectorXcd p = lus_[k - 1].solve(b);
            out.ux.a.col(k) -= Complex(0.0, grid_.beta(k)) * p;
            out.uy.a.col(k) -= grid_.d1() * p;
        }
        return out;
    }

private:
    Grid grid_;
    std::vector<detail::RefinedLu> lus_;
};

} // namespace sublab
