#pragma once

#include "sublab/sublayer.hpp"

namespace sublab {

enum class WallBc { NoSlip, NavierSlip };

/// Nonlinear Navier-Stokes state on the periodic half-strip, vorticity and
/// stream function per x-wavenumber plus the mode-0 velocity profile. The
/// diffusion coefficient nu_eff is sqrt(nu) in the scaled variables.
struct FlowState {
    double time = 0.0;
    Field vorticity; // col 0: mode-0 vorticity -d_y ubar; cols k >= 1: omega_k
    Field stream;    // col 0: ubar itself (velocity-packed); cols k >= 1: psi_k
    VectorXd ubar;   // mode-0 horizontal velocity
    WallBc bc = WallBc::NoSlip;
    double nu_eff = 0.0;

    VelocityField velocity() const {
        VelocityField v = velocity_from_stream(stream);
        v.ux.a.col(0) = ubar.cast<Complex>();
        v.uy.a.col(0).setZero();
        return v;
    }
    /// Defect of the stream-vorticity relation at interior nodes.
    double stream_consistency(const Grid& g) const {
        double worst = 0.0;
        for (int k = 1; k < g.n_x(); ++k) {
            double b = g.beta(k);
            VectorXcd r = g.d2() * stream.a.col(k) - b * b * stream.a.col(k) -
                          vorticity.a.col(k);
            worst = std::max(worst, r.segment(1, g.n_y() - 2).cwiseAbs().maxCoeff());
        }
        return worst;
    }
};

/// Spalart-Moser-Rogers three-stage scheme: explicit advection, implicit
/// diffusion. No-slip is enforced by determining the wall vorticity from
/// the kinematic constraint psi'(0) = 0 exactly (influence-matrix form):
/// local expansion closures turn unstable under the strong wall clustering
/// this grid uses.
class NavierStokesSolver {
public:
    NavierStokesSolver(const Grid& g, double nu, double dt, WallBc bc, double far_field)
        : grid_(g), nu_eff_(std::sqrt(nu)), dt_(dt), bc_(bc), far_(far_field), poisson_(g) {
        const int n = g.n_y();
        const double gamma[3] = {8.0 / 15, 5.0 / 12, 3.0 / 4};
        const double zeta[3] = {0.0, -17.0 / 60, -5.0 / 12};
        for (int m = 0; m < 3; ++m) {
            gamma_[m] = gamma[m];
            zeta_[m] = zeta[m];
            ab_[m] = 0.5 * (gamma[m] + zeta[m]);
        }
        lhs_.resize(3);
        rhs_.resize(3);
        lhs0_.resize(3);
        rhs0_.resize(3);
        for (int m = 0; m < 3; ++m) {
            lhs_[m].resize(g.n_x());
            rhs_[m].resize(g.n_x());
            for (int k = 0; k < g.n_x(); ++k) {
                double b = g.beta(k);
                MatrixXd lap = g.d2() - b * b * MatrixXd::Identity(n, n);
                MatrixXd lhs_m =
                    MatrixXd::Identity(n, n) / dt_ - ab_[m] * nu_eff_ * lap;
                rhs_[m][k] = MatrixXd::Identity(n, n) / dt_ + ab_[m] * nu_eff_ * lap;
                lhs_m.row(0) = VectorXd::Unit(n, 0).transpose();      // wall vorticity row
                lhs_m.row(n - 1) = VectorXd::Unit(n, n - 1).transpose(); // irrotational top
                lhs_[m][k] = detail::RefinedLu(std::move(lhs_m));
            }
            MatrixXd lhs0 = MatrixXd::Identity(n, n) / dt_ - ab_[m] * nu_eff_ * g.d2();
            rhs0_[m] = MatrixXd::Identity(n, n) / dt_ + ab_[m] * nu_eff_ * g.d2();
            if (bc_ == WallBc::NoSlip)
                lhs0.row(0) = VectorXd::Unit(n, 0).transpose(); // ubar(0) = 0
            else
                lhs0.row(0) = g.d1().row(0); // zero wall shear
            lhs0.row(n - 1) = VectorXd::Unit(n, n - 1).transpose();
            lhs0_[m] = detail::RefinedLu(std::move(lhs0));
        }
        // influence vectors: response to a unit wall-vorticity row, per
        // stage and mode, and the wall slope their stream functions carry
        if (bc_ == WallBc::NoSlip) {
            omega_i_.resize(3);
            psi_i_.resize(3);
            dpsi_i_wall_.resize(3);
            for (int m = 0; m < 3; ++m) {
                omega_i_[m].resize(g.n_x());
                psi_i_[m].resize(g.n_x());
                dpsi_i_wall_[m].assign(g.n_x(), 1.0);
                for (int k = 1; k < g.n_x(); ++k) {
                    VectorXd b = VectorXd::Zero(n);
                    b[0] = 1.0;
                    omega_i_[m][k] = lhs_[m][k].solve(b);
                    psi_i_[m][k] =
                        poisson_.mode(k).solve(VectorXd(omega_i_[m][k]));
                    dpsi_i_wall_[m][k] = (g.d1().row(0) * psi_i_[m][k])(0);
                }
            }
        }
    }

    const Grid& grid() const { return grid_; }
    double dt() const { return dt_; }
    double nu_eff() const { return nu_eff_; }

    FlowState initial_state(const Field& omega_cols, const VectorXd& ubar) const {
        FlowState s;
        s.time = 0.0;
        s.bc = bc_;
        s.nu_eff = nu_eff_;
        s.vorticity = omega_cols;
        s.ubar = ubar;
        refresh_derived(s);
        return s;
    }

    /// Build the state carrying a given total velocity (mode columns come as
    /// an omega-packed field, col 0 the mode-0 velocity).
    FlowState initial_from_packed(const Field& packed) const {
        Field w = packed;
        VectorXd ub = packed.a.col(0).real();
        w.a.col(0) = -(grid_.d1() * ub);
        return initial_state(w, ub);
    }

    double max_speed(const FlowState& s) const {
        return std::max(real_linf(s.velocity()), 1e-12);
    }

    void check_stability(const FlowState& s) const {
        double beta_max = grid_.beta(grid_.n_x() - 1);
        double advective = beta_max * max_speed(s);
        if (dt_ * advective > 1.7)
            throw CflViolation("NavierStokesSolver: dt exceeds the advective stability bound");
    }

    /// One full step (three stages). Optional forcing enters the momentum
    /// equation; it is applied through its curl and its mode-0 x-component.
    FlowState step(const FlowState& s, const VelocityField* forcing = nullptr) const {
        if (s.vorticity.a.cwiseAbs().maxCoeff() > 1e6 || !s.ubar.allFinite())
            throw BlowUp("NavierStokesSolver: vorticity passed the blow-up guard");
        const int n = grid_.n_y();
        Field omega = s.vorticity;
        VectorXd ubar = s.ubar;
        Field psi = s.stream;

        Field n_prev(grid_);
        VectorXd n0_prev = VectorXd::Zero(n);
        for (int m = 0; m < 3; ++m) {
            auto [nl, nl0] = advection(omega, psi, ubar, forcing);
            Field rhs(grid_);
            for (int k = 1; k < grid_.n_x(); ++k)
                rhs.a.col(k) = rhs_[m][k] * omega.a.col(k) +
                               Complex(gamma_[m]) * nl.a.col(k) +
                               Complex(zeta_[m]) * n_prev.a.col(k);
            VectorXd rhs0 = rhs0_[m] * ubar + gamma_[m] * nl0 + zeta_[m] * n0_prev;

            Field next(grid_);
            for (int k = 1; k < grid_.n_x(); ++k) {
                VectorXcd b = rhs.a.col(k);
                b[0] = 0.0;
                b[n - 1] = 0.0;
                VectorXcd wp = lhs_[m][k].solve(b);
                if (bc_ == WallBc::NoSlip) {
                    VectorXcd pp = poisson_.mode(k).solve(wp);
                    Complex slope = (grid_.d1().row(0) * pp)(0);
                    Complex c = -slope / dpsi_i_wall_[m][k];
                    wp += c * omega_i_[m][k].cast<Complex>();
                }
                next.a.col(k) = wp;
            }
            VectorXd b0 = rhs0;
            b0[0] = 0.0;
            b0[n - 1] = far_;
            ubar = lhs0_[m].solve(b0);
            omega = std::move(next);
            psi = poisson_.solve(omega);
            n_prev = std::move(nl);
            n0_prev = std::move(nl0);
        }
        FlowState out;
        out.time = s.time + dt_;
        out.bc = bc_;
        out.nu_eff = nu_eff_;
        out.vorticity = omega;
        out.ubar = ubar;
        refresh_derived(out);
        return out;
    }

    /// Kinetic energy of the perturbation from the far-field shear state.
    double energy(const FlowState& s) const {
        VelocityField v = s.velocity();
        return 0.5 * real_l2(v) * real_l2(v);
    }

private:
    void refresh_derived(FlowState& s) const {
        s.stream = poisson_.solve(s.vorticity);
        s.stream.a.col(0) = s.ubar.cast<Complex>();
        s.vorticity.a.col(0) = -(grid_.d1() * s.ubar);
    }

    /// Advective tendencies: -(u . grad omega) per mode and the mode-0
    /// x-momentum -(u . grad u)_x; forcing folds in as curl f and f_x.
    std::pair<Field, VectorXd> advection(const Field& omega, const Field& psi,
                                         const VectorXd& ubar,
                                         const VelocityField* forcing) const {
        VelocityField u = velocity_from_stream(psi);
        u.ux.a.col(0) = ubar.cast<Complex>();
        u.uy.a.col(0).setZero();
        Field w = omega;
        w.a.col(0) = -(grid_.d1() * ubar);
        Field adv = advect_scalar(u, w);
        Field advx = advect_scalar(u, u.ux);
        Field nl(grid_);
        nl.a = -adv.a;
        VectorXd nl0 = -advx.a.col(0).real();
        if (forcing) {
            Field cf = curl(*forcing);
            nl.a += cf.a;
            nl0 += forcing->ux.a.col(0).real();
        }
        return {std::move(nl), std::move(nl0)};
    }

    Grid grid_;
    double nu_eff_, dt_;
    WallBc bc_;
    double far_;
    ModePoisson poisson_;
    double gamma_[3], zeta_[3], ab_[3];
    std::vector<std::vector<detail::RefinedLu>> lhs_;
    std::vector<std::vector<MatrixXd>> rhs_;
    std::vector<detail::RefinedLu> lhs0_;
    std::vector<MatrixXd> rhs0_;
    std::vector<std::vector<VectorXd>> omega_i_, psi_i_;
    std::vector<std::vector<double>> dpsi_i_wall_;
};

/// Convenience step matching the spec's operation signature.
inline FlowState step_ns(const NavierStokesSolver& solver, const FlowState& state,
                         const VelocityField* forcing = nullptr) {
    solver.check_stability(state);
    return solver.step(state, forcing);
}

/// A conservative step size: advective CFL for the RK3 stages plus the
/// quartic amplification balance of the explicit advection against the
/// implicit diffusion damping.
inline double stable_dt(const Grid& g, double nu, double max_speed) {
    double beta_max = g.beta(g.n_x() - 1);
    double adv = 1.0 / std::max(beta_max * max_speed, 1e-12);
    return 0.6 * adv;
}

/// Pure relabeling into sublayer variables X = x / nu^{1/4},
/// Y = y / nu^{1/4}: the node set of the mapped grid scales linearly with
/// map_length, so the data transfers unchanged onto the stretched grid.
inline Field sublayer_rescale(const Field& f, double nu) {
    if (nu <= 0.0) throw InvalidArgument("sublayer_rescale: nu must be positive");
    const Grid& g = f.grid;
    double s = std::pow(nu, -0.25);
    Grid g2 = build_halfline_grid(g.n_y(), g.map_length() * s, g.n_x(), g.period() * s);
    return Field(g2, f.a);
}

// ---------------------------------------------------------------------------
// Instability experiments and the dichotomy classifier.
// ---------------------------------------------------------------------------

enum class SeedBranch { PerturbPrandtl, ForceSublayer };

struct InstabilityRecord {
    std::vector<double> times;
    std::vector<double> v_inf;            // ||u^nu - u^app||_inf (or - v_S^1 branch)
    std::vector<double> u_minus_us_inf;   // ||u^nu - U_s||_inf
    std::vector<double> app_minus_us_inf; // ||u^app - U_s||_inf
    double seeded_amplitude = 0.0;        // nu^N
    int N = 1;
    Complex lambda{0.0, 0.0};
    double beta_exponent = 1.0;
    bool window_not_reached = false;
    bool blew_up = false;

    void validate() const {
        if (times.size() != v_inf.size() || times.size() != u_minus_us_inf.size() ||
            times.size() != app_minus_us_inf.size())
            throw InvalidArgument("InstabilityRecord: series are not aligned");
        for (double m : v_inf)
            if (m < 0.0) throw InvalidArgument("InstabilityRecord: negative norm");
    }
};

struct DnsParams {
    int n_modes = 32;      // retained wavenumbers (>= the lab grid's)
    double dt = 0.0;       // 0: pick from the stability rule
    double t_max = 1e9;    // capped at T*_0 - tau
    double tau = 0.0;      // 0: 3 / Re lambda
    SeedBranch branch = SeedBranch::PerturbPrandtl;
    int record_stride = 1; // record every k-th mesh time
};

inline InstabilityRecord run_instability_experiment(const ApproxSolution& app,
                                                    const DnsParams& params) {
    const Grid& lab = app.grid();
    const CascadeConfig& cfg = app.cascade->cfg;
    const double lambda = app.growth_rate();
    const double tau = params.tau > 0.0 ? params.tau : 3.0 / lambda;
    const double t_end =
        std::min({params.t_max, critical_time(cfg, 0.0, app.cascade->mode.lambda) - tau,
                  app.times().back()});

    Grid g = build_halfline_grid(lab.n_y(), lab.map_length(),
                                 std::max(params.n_modes, lab.n_x()), lab.period());

    InstabilityRecord rec;
    rec.seeded_amplitude = std::pow(cfg.nu, cfg.N);
    rec.N = cfg.N;
    rec.lambda = app.cascade->mode.lambda;
    if (t_end <= 0.0 || app.times().back() < t_end - 1e-9) {
        rec.window_not_reached = true;
        return rec;
    }

    // residual forcing for the sublayer branch, sampled on the mesh
    std::vector<VelocityField> forcing;
    LerayProjector proj(lab);
    if (params.branch == SeedBranch::ForceSublayer) {
        for (size_t i = 0; i < app.times().size(); ++i) {
            int lo = std::clamp<int>(static_cast<int>(i), 4,
                                     static_cast<int>(app.times().size()) - 5);
            forcing.push_back(nsapp_residual(app, proj, app.times()[lo]).field);
        }
    }

    Field seed(g);
    if (params.branch == SeedBranch::PerturbPrandtl) {
        seed = extended(app.total_packed(0), g);
    } else {
        // start from the leading sublayer term alone (plus the base shear,
        // which the solver carries in the mode-0 profile)
        const SublayerTerm& v1 = app.sublayer.front();
        Field p = v1.vort[0];
        p.a.col(0) = v1.stream[0].a.col(0);
        p.a.col(0) += app.cascade->u_s[0].cast<Complex>();
        seed = extended(p, g);
    }

    double far = app.cascade->base.far_field;
    double mesh_dt = app.times()[1] - app.times()[0];
    double speed_guess = std::max(app.cascade->base.values.cwiseAbs().maxCoeff(), 1.0);
    double dt = params.dt > 0.0 ? params.dt : stable_dt(g, cfg.nu, 1.3 * speed_guess);
    int sub = std::max(1, static_cast<int>(std::ceil(mesh_dt / dt)));
    dt = mesh_dt / sub;
    NavierStokesSolver solver(g, cfg.nu, dt, WallBc::NoSlip, far);
    FlowState state = solver.initial_from_packed(seed);
    solver.check_stability(state);

    // cache one ModePoisson for the reference reconstruction
    ModePoisson ref_poisson(g);
    auto record_sample_fast = [&](int i, const FlowState& st) {
        rec.times.push_back(app.times()[i]);
        VelocityField u = st.velocity();
        VelocityField du = u;
        du.ux.a.col(0) -= app.cascade->u_s[i].cast<Complex>();
        rec.u_minus_us_inf.push_back(real_linf(du));
        Field refp(g);
        if (params.branch == SeedBranch::PerturbPrandtl) {
            refp = extended(app.total_packed(i), g);
        } else {
            const SublayerTerm& v1 = app.sublayer.front();
            Field p = v1.vort[i];
            p.a.col(0) = v1.stream[i].a.col(0);
            p.a.col(0) += app.cascade->u_s[i].cast<Complex>();
            refp = extended(p, g);
        }
        VelocityField ref = packed_velocity(refp, ref_poisson);
        VelocityField diff = u;
        diff -= ref;
        rec.v_inf.push_back(real_linf(diff));
        rec.app_minus_us_inf.push_back(real_linf(app.perturbation(i)));
    };

    record_sample_fast(0, state);
    for (size_t i = 1; i < app.times().size(); ++i) {
        if (app.times()[i] > t_end + 1e-9) break;
        try {
            for (int s = 0; s < sub; ++s) {
                const VelocityField* f = nullptr;
                VelocityField fi(g);
                if (params.branch == SeedBranch::ForceSublayer) {
                    fi = extended(forcing[i - 1], g); // piecewise forcing on the mesh
                    f = &fi;
                }
                state = solver.step(state, f);
            }
        } catch (const BlowUp&) {
            rec.blew_up = true;
            break;
        }
        if (static_cast<int>(i) % params.record_stride == 0)
            record_sample_fast(static_cast<int>(i), state);
    }
    rec.validate();
    return rec;
}

enum class DichotomyVerdict { PrandtlUnstable, SublayerUnstable, Inconclusive };

struct ClassifierReport {
    DichotomyVerdict verdict = DichotomyVerdict::Inconclusive;
    double sigma0 = 0.0;          // min over the final window of ||u^app-U_s|| - ||v||
    double first_escape_time = -1.0;
    double envelope_margin = 0.0; // max of ||v|| / envelope
    double sigma_margin = 0.0;    // min of ||u^app-U_s|| - ||v||
};

/// The Theorem's stability test: v must stay strictly inside the envelope
/// (nu^N e^{Re lambda t})^{1+beta} for PrandtlUnstable; a strict escape
/// before T*_{1/4} means SublayerUnstable; anything else is Inconclusive.
inline ClassifierReport classify_dichotomy(const InstabilityRecord& rec, double beta,
                                            double tau) {
    rec.validate();
    if (rec.times.empty()) return {};
    const double lambda = rec.lambda.real();
    const double nu_n = rec.seeded_amplitude;
    const double log_nu = std::log(nu_n) / rec.N;
    const double t_quarter = -(rec.N - 0.25) * log_nu / lambda;

    ClassifierReport rep;
    bool inside_all = true;
    double env_margin = 0.0;
    for (size_t i = 0; i < rec.times.size(); ++i) {
        double env = std::pow(nu_n * std::exp(lambda * rec.times[i]), 1.0 + beta);
        double ratio = rec.v_inf[i] / env;
        env_margin = std::max(env_margin, ratio);
        if (!(rec.v_inf[i] < env)) {
            inside_all = false;
            if (rep.first_escape_time < 0.0 && rec.v_inf[i] > env)
                rep.first_escape_time = rec.times[i];
        }
    }
    rep.envelope_margin = env_margin;

    // final window: the last e-folding of the record
    double t_end = rec.times.back();
    double window = 1.0 / lambda;
    double sigma = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < rec.times.size(); ++i)
        if (rec.times[i] >= t_end - window)
            sigma = std::min(sigma, rec.app_minus_us_inf[i] - rec.v_inf[i]);
    rep.sigma_margin = sigma;

    if (rec.blew_up && rep.first_escape_time >= 0.0 &&
        rep.first_escape_time < t_quarter) {
        rep.verdict = DichotomyVerdict::SublayerUnstable;
        return rep;
    }
    if (inside_all) {
        rep.verdict = DichotomyVerdict::PrandtlUnstable;
        rep.sigma0 = sigma;
        return rep;
    }
    if (rep.first_escape_time >= 0.0 && rep.first_escape_time < t_quarter) {
        rep.verdict = DichotomyVerdict::SublayerUnstable;
        return rep;
    }
    rep.verdict = DichotomyVerdict::Inconclusive;
    (void)tau;
    return rep;
}

} // namespace sublab
