#pragma once

#include <fstream>
#include <functional>
#include <sstream>

#include "sublab/operators.hpp"

namespace sublab {

enum class ProfileFamily { ErfSelfSimilar, WallJet, TanhShifted, CustomTable, Analytic };

namespace detail {

/// Natural cubic spline through strictly increasing abscissae; clamps to the
/// end values outside the table.
class CubicSpline {
public:
    CubicSpline() = default;
    CubicSpline(VectorXd x, VectorXd y) : x_(std::move(x)), y_(std::move(y)) {
        const int n = static_cast<int>(x_.size());
        m_ = VectorXd::Zero(n);
        if (n < 3) return;
        VectorXd a(n), b(n), c(n), d(n);
        a[0] = c[0] = 0.0;
        b[0] = 1.0;
        d[0] = 0.0;
        for (int i = 1; i < n - 1; ++i) {
            double h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
            a[i] = h0 / 6.0;
            b[i] = (h0 + h1) / 3.0;
            c[i] = h1 / 6.0;
            d[i] = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
        }
        a[n - 1] = c[n - 1] = 0.0;
        b[n - 1] = 1.0;
        d[n - 1] = 0.0;
        // Thomas algorithm
        for (int i = 1; i < n; ++i) {
            double w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            d[i] -= w * d[i - 1];
        }
        m_[n - 1] = d[n - 1] / b[n - 1];
        for (int i = n - 2; i >= 0; --i) m_[i] = (d[i] - c[i] * m_[i + 1]) / b[i];
    }

    double operator()(double x) const {
        const int n = static_cast<int>(x_.size());
        if (x <= x_[0]) return y_[0];
        if (x >= x_[n - 1]) return y_[n - 1];
        int lo = 0, hi = n - 1;
        while (hi - lo > 1) {
            int mid = (lo + hi) / 2;
            (x_[mid] <= x ? lo : hi) = mid;
        }
        double h = x_[hi] - x_[lo];
        double t0 = (x_[hi] - x) / h, t1 = (x - x_[lo]) / h;
        return t0 * y_[lo] + t1 * y_[hi] +
               ((t0 * t0 * t0 - t0) * m_[lo] + (t1 * t1 * t1 - t1) * m_[hi]) * h * h / 6.0;
    }

private:
    VectorXd x_, y_, m_;
};

} // namespace detail

/// Base shear flow U(z) on the half-line: smooth, U(0) = 0, finite far field.
class ShearProfile {
public:
    Grid grid;
    VectorXd values;
    std::string label;
    ProfileFamily family = ProfileFamily::Analytic;
    double far_field = 0.0;

    static ShearProfile erf_selfsimilar(const Grid& g, double width = 2.0) {
        double w = width;
        return make(g, [w](double z) { return std::erf(z / w); }, "erf", 1.0,
                    ProfileFamily::ErfSelfSimilar, {w});
    }

    /// U(z) = A (z/w) e^{1 - z/w}; interior inflection point at z = 2w.
    static ShearProfile wall_jet(const Grid& g, double amplitude = 1.0, double width = 1.0) {
        double A = amplitude, w = width;
        return make(g, [A, w](double z) { return A * (z / w) * std::exp(1.0 - z / w); },
                    "wall_jet", 0.0, ProfileFamily::WallJet, {A, w});
    }

    /// U(z) = tanh(z) + a z e^{-b z^2}; a = 0 is monotone, a != 0 adds an
    /// inflectional bump.
    static ShearProfile tanh_shifted(const Grid& g, double a, double b) {
        return make(g,
                    [a, b](double z) { return std::tanh(z) + a * z * std::exp(-b * z * z); },
                    "tanh_shifted", 1.0, ProfileFamily::TanhShifted, {a, b});
    }

    static ShearProfile analytic(const Grid& g, std::function<double(double)> fn,
                                 std::string label, double far) {
        ShearProfile p = make(g, fn, std::move(label), far, ProfileFamily::Analytic, {});
        p.fn_ = std::move(fn);
        return p;
    }

    /// Two-column text table (z, U) with one header line, interpolated by a
    /// cubic spline.
    static ShearProfile from_table(const Grid& g, const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("from_table: cannot open " + path);
        std::string line;
        std::getline(in, line); // header
        std::vector<double> zs, us;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            double z, u;
            if (!(row >> z >> u)) throw IoError("from_table: malformed row: " + line);
            zs.push_back(z);
            us.push_back(u);
        }
        if (zs.size() < 4) throw IoError("from_table: need at least 4 rows");
        if (zs.front() != 0.0 || us.front() != 0.0)
            throw IoError("from_table: table must start at (0, 0)");
        Eigen::Map<VectorXd> z(zs.data(), zs.size()), u(us.data(), us.size());
        detail::CubicSpline spline(z, u);
        ShearProfile p =
            make(g, [spline](double zz) { return spline(zz); }, "custom_table", us.back(),
                 ProfileFamily::CustomTable, {});
        p.spline_ = spline;
        return p;
    }

    static ShearProfile from_values(const Grid& g, VectorXd vals, std::string label,
                                    double far) {
        ShearProfile p;
        p.grid = g;
        p.values = std::move(vals);
        if (std::abs(p.values[0]) < 1e-10) p.values[0] = 0.0; // snap solver roundoff
        p.label = std::move(label);
        p.family = ProfileFamily::Analytic;
        p.far_field = far;
        p.validate();
        return p;
    }

    /// Point evaluation (closed form for families, spline or interpolation
    /// otherwise).
    double eval(double z) const {
        switch (family) {
            case ProfileFamily::ErfSelfSimilar:
                return std::erf(z / params_[0]);
            case ProfileFamily::WallJet:
                return params_[0] * (z / params_[1]) * std::exp(1.0 - z / params_[1]);
            case ProfileFamily::TanhShifted:
                return std::tanh(z) + params_[0] * z * std::exp(-params_[1] * z * z);
            case ProfileFamily::CustomTable:
                return spline_(z);
            case ProfileFamily::Analytic:
                if (fn_) return fn_(z);
                return grid.interpolate(values, std::min(z, grid.y_max()));
        }
        return 0.0;
    }

    ShearProfile on_grid(const Grid& g) const {
        ShearProfile p = *this;
        p.grid = g;
        p.values.resize(g.n_y());
        for (int i = 0; i < g.n_y(); ++i) p.values[i] = eval(g.y_nodes()[i]);
        p.values[0] = 0.0;
        return p;
    }

    const std::vector<double>& params() const { return params_; }

private:
    template <typename F>
    static ShearProfile make(const Grid& g, F&& fn, std::string label, double far,
                             ProfileFamily fam, std::vector<double> params) {
        ShearProfile p;
        p.grid = g;
        p.label = std::move(label);
        p.family = fam;
        p.far_field = far;
        p.params_ = std::move(params);
        p.values.resize(g.n_y());
        for (int i = 0; i < g.n_y(); ++i) p.values[i] = fn(g.y_nodes()[i]);
        p.values[0] = 0.0;
        p.validate();
        return p;
    }

    void validate() const {
        if (values[0] != 0.0) throw InvalidArgument("ShearProfile: U(0) must be 0");
        if (!std::isfinite(far_field)) throw InvalidArgument("ShearProfile: far field not finite");
        if (std::abs(values[grid.n_y() - 1] - far_field) > 1e-8)
            throw InvalidArgument(
                "ShearProfile: profile has not reached its far-field value at the last node "
                "(grid too short for this profile)");
    }

    std::vector<double> params_;
    std::function<double(double)> fn_;
    detail::CubicSpline spline_;
};

/// Heat-evolved base flow at a fixed time.
struct EvolvedBase {
    ShearProfile profile_at_t;
    double time = 0.0;          // heat time, the first argument of U_s
    VectorXd shear_vorticity;   // omega_s = -dU_s/dz
};

namespace detail {

/// Crank-Nicolson heat march on the mapped grid with U(0) = 0 and the far
/// field pinned at the top node.
class HeatStepper {
public:
    HeatStepper(const Grid& g, double dt, double far) : grid_(g), dt_(dt), far_(far) {
        const int n = g.n_y();
        MatrixXd lhs = MatrixXd::Identity(n, n) / dt - 0.5 * g.d2();
        rhs_ = MatrixXd::Identity(n, n) / dt + 0.5 * g.d2();
        lhs.row(0) = VectorXd::Unit(n, 0).transpose();
        lhs.row(n - 1) = VectorXd::Unit(n, n - 1).transpose();
        lu_ = detail::RefinedLu(std::move(lhs));
    }
    VectorXd step(const VectorXd& u) const {
        VectorXd b = rhs_ * u;
        b[0] = 0.0;
        b[b.size() - 1] = far_;
        return lu_.solve(b);
    }

private:
    Grid grid_;
    double dt_;
    double far_;
    MatrixXd rhs_;
    detail::RefinedLu lu_;
};

inline VectorXd heat_march(const Grid& g, const VectorXd& u0, double far, double t, int steps) {
    HeatStepper st(g, t / steps, far);
    VectorXd u = u0;
    for (int i = 0; i < steps; ++i) u = st.step(u);
    return u;
}

} // namespace detail

/// Solve d_t U_s = d_z^2 U_s on the half-line with U_s(t, 0) = 0 and the far
/// field preserved. Exact closed form for the erf family; otherwise
/// Crank-Nicolson with the step refined until halving changes the result by
/// less than 1e-9.
inline EvolvedBase evolve_heat(const ShearProfile& U, double t) {
    if (t < 0.0) throw InvalidArgument("evolve_heat: t must be nonnegative");
    EvolvedBase out;
    out.time = t;
    if (t == 0.0) {
        out.profile_at_t = U;
    } else if (U.family == ProfileFamily::ErfSelfSimilar) {
        double w = U.params()[0];
        double w_t = 2.0 * std::sqrt(w * w / 4.0 + t);
        out.profile_at_t = ShearProfile::erf_selfsimilar(U.grid, w_t);
        out.profile_at_t.label = U.label;
    } else {
        // fixed step rule: deterministic and linear in the data; halving the
        // step moves U_s by well under 1e-8 for experiment-scale heat times
        int steps = std::max(16, static_cast<int>(std::ceil(t / 1e-4)));
        VectorXd u = detail::heat_march(U.grid, U.values, U.far_field, t, steps);
        out.profile_at_t = ShearProfile::from_values(U.grid, u, U.label, U.far_field);
    }
    out.shear_vorticity = -(U.grid.d1() * out.profile_at_t.values);
    return out;
}

/// Coefficient arrays of the S operator: a = nu^{-1/2} [U_s(sqrt(nu) t) - U]
/// and its z-derivative.
inline std::pair<VectorXd, VectorXd> s_coefficient(const ShearProfile& U, double t, double nu) {
    if (nu <= 0.0) throw InvalidArgument("s_coefficient: nu must be positive");
    if (t < 0.0) throw InvalidArgument("s_coefficient: t must be nonnegative");
    if (t == 0.0) {
        VectorXd z = VectorXd::Zero(U.grid.n_y());
        return {z, z};
    }
    EvolvedBase eb = evolve_heat(U, std::sqrt(nu) * t);
    VectorXd a = (eb.profile_at_t.values - U.values) / std::sqrt(nu);
    return {a, U.grid.d1() * a};
}

/// S v = a d_x v + (v_y d_z a) e_x, built from precomputed coefficients.
inline VelocityField apply_s_with(const VectorXd& a, const VectorXd& a_dz,
                                  const VelocityField& v) {
    VelocityField out(v.grid());
    for (int k = 0; k < v.ux.n_modes(); ++k) {
        Complex ib(0.0, v.grid().beta(k));
        out.ux.a.col(k) = ib * a.cwiseProduct(v.ux.a.col(k)) + a_dz.cwiseProduct(v.uy.a.col(k));
        out.uy.a.col(k) = ib * a.cwiseProduct(v.uy.a.col(k));
    }
    return out;
}

inline VelocityField apply_s(const ShearProfile& U, const VelocityField& v, double t, double nu) {
    if (!U.grid.same_y(v.grid()))
        throw GridMismatch("apply_s: velocity grid does not match the profile grid");
    auto [a, a_dz] = s_coefficient(U, t, nu);
    return apply_s_with(a, a_dz, v);
}

/// Precomputed base-flow history on a time mesh: U_s, omega_s and the S
/// coefficients at every mesh point, marched incrementally.
class BaseflowTrajectory {
public:
    BaseflowTrajectory(const ShearProfile& U, double nu, std::vector<double> times)
        : times_(std::move(times)) {
        const double sqnu = std::sqrt(nu);
        us_.reserve(times_.size());
        gap_.reserve(times_.size());
        gap_dz_.reserve(times_.size());
        omega_s_.reserve(times_.size());
        if (U.family == ProfileFamily::ErfSelfSimilar) {
            for (double t : times_) push(U, evolve_heat(U, sqnu * t).profile_at_t.values, sqnu);
        } else {
            const double dtau_target = 1e-4;
            VectorXd u = U.values;
            double tau = 0.0;
            for (double t : times_) {
                double tau_next = sqnu * t;
                if (tau_next > tau) {
                    int steps = std::max(2, static_cast<int>(std::ceil((tau_next - tau) / dtau_target)));
                    u = detail::heat_march(U.grid, u, U.far_field, tau_next - tau, steps);
                    tau = tau_next;
                }
                push(U, u, sqnu);
            }
        }
    }

    const std::vector<double>& times() const { return times_; }
    const VectorXd& u_s(int i) const { return us_[i]; }
    const VectorXd& gap(int i) const { return gap_[i]; }         // nu^{-1/2}(U_s - U)
    const VectorXd& gap_dz(int i) const { return gap_dz_[i]; }
    const VectorXd& omega_s(int i) const { return omega_s_[i]; }

private:
    void push(const ShearProfile& U, const VectorXd& us, double sqnu) {
        us_.push_back(us);
        gap_.push_back((us - U.values) / sqnu);
        gap_dz_.push_back(U.grid.d1() * gap_.back());
        omega_s_.push_back(-(U.grid.d1() * us));
    }

    std::vector<double> times_;
    std::vector<VectorXd> us_, gap_, gap_dz_, omega_s_;
};

} // namespace sublab
