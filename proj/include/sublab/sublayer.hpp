#pragma once

#include "sublab/cascade.hpp"

namespace sublab {

/// Wall data for the Stokes problems: tangential and normal components per
/// x-wavenumber at one time.
struct WallTraceSample {
    VectorXcd tangential;
    VectorXcd normal;
};
using WallTrace = std::function<WallTraceSample(double)>;

/// One order v_S^k of the viscous sublayer hierarchy, phi-packed:
/// column 0 holds the mode-0 tangential velocity, columns k >= 1 the stream
/// function. The vorticity q = (d_y^2 - beta^2) phi is carried alongside so
/// Laplacians never need stacked differentiation.
struct SublayerTerm {
    int k = 1;
    std::vector<double> times;
    std::vector<Field> stream;            // phi-packed snapshots
    std::vector<Field> vort;              // q-packed (col 0 = -d_y vbar)
    std::vector<VectorXcd> boundary_data; // tangential wall trace actually used

    VelocityField velocity(int i) const { return packed_velocity_stream(stream[i]); }

    static VelocityField packed_velocity_stream(const Field& p) {
        VelocityField v = velocity_from_stream(p);
        v.ux.a.col(0) = p.a.col(0);
        v.uy.a.col(0).setZero();
        return v;
    }
};

struct SublayerOptions {
    int substeps_per_sample = 0; // 0: choose from the growth rate
    int rannacher_steps = 4;     // implicit-Euler start-up substeps
    double rate_hint = 0.35;     // fastest expected boundary-data rate
    // When the wall data grows like e^{lambda t} from the infinite past,
    // start v_S^1 from the modal layer profile instead of rest; the t = 0
    // trace is then already cancelled.
    Complex modal_init_rate{0.0, 0.0};
};

namespace detail {

/// Coupled (phi, q) Crank-Nicolson solver for one wavenumber of the Stokes
/// problem with no-slip wall data and decay at the top.
class StokesModeSolver {
public:
    StokesModeSolver() = default;
    StokesModeSolver(const Grid& g, double beta, double sqnu, double dt) : n_(g.n_y()) {
        const int n = n_;
        MatrixXd helm = g.d2() - beta * beta * MatrixXd::Identity(n, n);
        rhs_op_ = MatrixXd::Identity(n, n) / dt + 0.5 * sqnu * helm;
        rhs_op_euler_ = MatrixXd::Identity(n, n) / dt;
        MatrixXd sys = MatrixXd::Zero(2 * n, 2 * n);
        // phi block: (d^2 - b^2) phi - q = 0, Dirichlet ends
        sys.topLeftCorner(n, n) = helm;
        sys.topRightCorner(n, n) = -MatrixXd::Identity(n, n);
        sys.row(0).setZero();
        sys(0, 0) = 1.0;
        sys.row(n - 1).setZero();
        sys(n - 1, n - 1) = 1.0;
        // q block: CN in time; its end rows carry the tangential conditions
        sys.block(n, n, n, n) = MatrixXd::Identity(n, n) / dt - 0.5 * sqnu * helm;
        sys.row(n).setZero();
        sys.row(n).head(n) = -g.d1().row(0); // -d_y phi (0) = wall tangential value
        sys.row(2 * n - 1).setZero();
        sys.row(2 * n - 1).head(n) = g.d1().row(n - 1); // tangential decay at top
        lu_ = RefinedLu(std::move(sys));

        sys_euler_ = lu_.sys;
        sys_euler_.block(n, n, n, n) = MatrixXd::Identity(n, n) / dt - sqnu * helm;
        sys_euler_.row(n) = lu_.sys.row(n);
        sys_euler_.row(2 * n - 1) = lu_.sys.row(2 * n - 1);
        lu_euler_ = RefinedLu(MatrixXd(sys_euler_));
    }

    /// Advance one substep. q and phi are updated in place; `source` is the
    /// q-equation right-hand side (already including -curl Q); `wall` the
    /// tangential wall value at the new time.
    void step(VectorXcd& phi, VectorXcd& q, const VectorXcd& source, Complex wall,
              bool euler) const {
        const int n = n_;
        VectorXcd b(2 * n);
        b.head(n).setZero();
        b.tail(n) = (euler ? rhs_op_euler_ : rhs_op_) * q + source;
        b[0] = 0.0;
        b[n - 1] = 0.0;
        b[n] = wall;
        b[2 * n - 1] = 0.0;
        VectorXcd x = (euler ? lu_euler_ : lu_).solve(b);
        phi = x.head(n);
        q = x.tail(n);
    }

private:
    int n_ = 0;
    RefinedLu lu_, lu_euler_;
    MatrixXd rhs_op_, rhs_op_euler_, sys_euler_;
};

/// Mode-0 tangential velocity: plain heat equation with Dirichlet wall data.
class StokesMode0Solver {
public:
    StokesMode0Solver() = default;
    StokesMode0Solver(const Grid& g, double sqnu, double dt) : n_(g.n_y()) {
        rhs_op_ = MatrixXd::Identity(n_, n_) / dt + 0.5 * sqnu * g.d2();
        rhs_op_euler_ = MatrixXd::Identity(n_, n_) / dt;
        MatrixXd sys = MatrixXd::Identity(n_, n_) / dt - 0.5 * sqnu * g.d2();
        sys.row(0) = VectorXd::Unit(n_, 0).transpose();
        sys.row(n_ - 1) = VectorXd::Unit(n_, n_ - 1).transpose();
        lu_ = RefinedLu(std::move(sys));
        MatrixXd sys_e = MatrixXd::Identity(n_, n_) / dt - sqnu * g.d2();
        sys_e.row(0) = VectorXd::Unit(n_, 0).transpose();
        sys_e.row(n_ - 1) = VectorXd::Unit(n_, n_ - 1).transpose();
        lu_euler_ = RefinedLu(std::move(sys_e));
    }
    void step(VectorXcd& v, const VectorXcd& source, Complex wall, bool euler) const {
        VectorXcd b = (euler ? rhs_op_euler_ : rhs_op_) * v + source;
        b[0] = wall;
        b[n_ - 1] = 0.0;
        v = (euler ? lu_euler_ : lu_).solve(b);
    }

private:
    int n_ = 0;
    RefinedLu lu_, lu_euler_;
    MatrixXd rhs_op_, rhs_op_euler_;
};

} // namespace detail

/// March the sublayer hierarchy v_S^1..v_S^M together over t_mesh:
/// order 1 carries the wall trace, orders k >= 2 solve the forced Stokes
/// problems with sources -Q_k built from the current lower orders and u_L.
/// Pass M = 1 (and any u_L) for the plain leading-order Stokes layer.
inline std::vector<SublayerTerm> march_sublayer(
    const Grid& g, const WallTrace& trace,
    const std::function<VelocityField(double)>& u_l, int M, double nu,
    const std::vector<double>& t_mesh, SublayerOptions opts = {}) {
    if (M < 1) throw InvalidArgument("march_sublayer: M must be >= 1");
    if (nu <= 0.0) throw InvalidArgument("march_sublayer: nu must be positive");
    if (t_mesh.size() < 2) throw InvalidArgument("march_sublayer: need a time mesh");
    if (g.nodes_below(std::pow(nu, 0.25)) < 12)
        throw SublayerUnresolved(
            "march_sublayer: fewer than 12 nodes below nu^{1/4}; refine the grid");

    const double sqnu = std::sqrt(nu);
    const double mesh_dt = t_mesh[1] - t_mesh[0];
    int sub = opts.substeps_per_sample > 0
                  ? opts.substeps_per_sample
                  : std::max(1, static_cast<int>(std::ceil(mesh_dt * opts.rate_hint / 0.01)));
    const double dt = mesh_dt / sub;
    const int n = g.n_y();

    std::vector<detail::StokesModeSolver> solvers(g.n_x());
    detail::StokesMode0Solver solver0(g, sqnu, dt);
    for (int k = 1; k < g.n_x(); ++k)
        solvers[k] = detail::StokesModeSolver(g, g.beta(k), sqnu, dt);
    EndpointRegularizer reg(g);

    // per order: phi-packed state (col0 = vbar) and q
    std::vector<Field> phi(M + 1, Field(g)), q(M + 1, Field(g));

    if (opts.modal_init_rate != Complex(0.0, 0.0)) {
        // modal profile: lambda q = sqrt(nu) (D^2 - b^2) q, q = (D^2 - b^2) phi,
        // with the t = 0 tangential trace as wall data
        WallTraceSample w0 = trace(t_mesh.front());
        for (int m = 1; m < g.n_x(); ++m) {
            if (std::abs(w0.tangential[m]) == 0.0) continue;
            double b = g.beta(m);
            MatrixXd helm = g.d2() - b * b * MatrixXd::Identity(n, n);
            MatrixXcd sys = MatrixXcd::Zero(2 * n, 2 * n);
            sys.topLeftCorner(n, n) = helm.cast<Complex>();
            sys.topRightCorner(n, n) = -MatrixXcd::Identity(n, n);
            sys.row(0).setZero();
            sys(0, 0) = 1.0;
            sys.row(n - 1).setZero();
            sys(n - 1, n - 1) = 1.0;
            sys.block(n, n, n, n) =
                opts.modal_init_rate * MatrixXcd::Identity(n, n) - sqnu * helm.cast<Complex>();
            sys.row(n).setZero();
            sys.row(n).head(n) = -g.d1().row(0).cast<Complex>();
            sys.row(2 * n - 1).setZero();
            sys.row(2 * n - 1).head(n) = g.d1().row(n - 1).cast<Complex>();
            VectorXcd rhs = VectorXcd::Zero(2 * n);
            rhs[n] = w0.tangential[m];
            VectorXcd x = Eigen::PartialPivLU<MatrixXcd>(sys).solve(rhs);
            phi[1].a.col(m) = x.head(n);
            q[1].a.col(m) = x.tail(n);
        }
        if (std::abs(w0.tangential[0]) > 0.0) {
            MatrixXcd sys = opts.modal_init_rate * MatrixXcd::Identity(n, n) -
                            sqnu * g.d2().cast<Complex>();
            sys.row(0) = VectorXcd::Unit(n, 0).transpose();
            sys.row(n - 1) = VectorXcd::Unit(n, n - 1).transpose();
            VectorXcd rhs = VectorXcd::Zero(n);
            rhs[0] = w0.tangential[0];
            phi[1].a.col(0) = Eigen::PartialPivLU<MatrixXcd>(sys).solve(rhs);
        }
    }

    std::vector<SublayerTerm> terms(M);
    for (int k = 1; k <= M; ++k) terms[k - 1].k = k;

    auto validate_trace = [&](const WallTraceSample& w) {
        if (w.normal.size() && w.normal.cwiseAbs().maxCoeff() > 1e-8)
            throw InvalidArgument("march_sublayer: wall trace has a nonzero normal part");
    };

    auto snapshot = [&](double t) {
        WallTraceSample w = trace(t);
        for (int k = 1; k <= M; ++k) {
            SublayerTerm& term = terms[k - 1];
            term.times.push_back(t);
            Field s = phi[k];
            Field v = q[k];
            v.a.col(0) = -(g.d1() * phi[k].a.col(0));
            term.stream.push_back(std::move(s));
            term.vort.push_back(std::move(v));
            term.boundary_data.push_back(k == 1 ? w.tangential
                                                : VectorXcd::Zero(g.n_x()));
        }
    };

    // sources -curl(Q_k) and the mode-0 x-momentum -Q_k
    auto order_sources = [&](double t) {
        std::vector<Field> src(M + 1, Field(g));
        if (M < 2) return src;
        VelocityField ul = u_l(t);
        Field ul_vort = curl(ul);
        std::vector<VelocityField> vel(M + 1, VelocityField(g));
        for (int k = 1; k <= M; ++k) vel[k] = SublayerTerm::packed_velocity_stream(phi[k]);
        for (int k = 2; k <= M; ++k) {
            Field qk(g); // curl of Q_k, assembled from advected vorticities
            Field qx(g); // x-component for the zero mode
            Field prev_vort = q[k - 1];
            prev_vort.a.col(0) = -(g.d1() * phi[k - 1].a.col(0));
            // (u_L . grad) v^{k-1} + (v^{k-1} . grad) u_L:
            // curl of the symmetric pair is the advected-vorticity sum
            qk += advect_scalar(ul, prev_vort);
            qk += advect_scalar(vel[k - 1], ul_vort);
            qx += advect_scalar(ul, vel[k - 1].ux);
            qx += advect_scalar(vel[k - 1], ul.ux);
            for (int j = 1; j <= k - 1; ++j) {
                int l = k - j;
                if (l < 1 || l > M) continue;
                Field lv = q[l];
                lv.a.col(0) = -(g.d1() * phi[l].a.col(0));
                qk += advect_scalar(vel[j], lv);
                qx += advect_scalar(vel[j], vel[l].ux);
            }
            src[k].a = -qk.a;
            src[k].a.col(0) = -qx.a.col(0);
            reg.apply_in_place(src[k]);
        }
        return src;
    };

    snapshot(t_mesh.front());
    double t = t_mesh.front();
    int global_step = 0;
    for (size_t i_out = 1; i_out < t_mesh.size(); ++i_out) {
        for (int s = 0; s < sub; ++s) {
            double t_new = t + dt;
            bool euler = global_step < opts.rannacher_steps;
            std::vector<Field> src = order_sources(t + 0.5 * dt);
            WallTraceSample w = trace(t_new);
            validate_trace(w);
            for (int k = 1; k <= M; ++k) {
                Complex wall0 = (k == 1) ? w.tangential[0] : Complex(0.0);
                VectorXcd v0 = phi[k].a.col(0);
                solver0.step(v0, VectorXcd(src[k].a.col(0)), wall0, euler);
                phi[k].a.col(0) = v0;
                for (int m = 1; m < g.n_x(); ++m) {
                    Complex wallm = (k == 1) ? w.tangential[m] : Complex(0.0);
                    VectorXcd ph = phi[k].a.col(m), qq = q[k].a.col(m);
                    solvers[m].step(ph, qq, VectorXcd(src[k].a.col(m)), wallm, euler);
                    phi[k].a.col(m) = ph;
                    q[k].a.col(m) = qq;
                }
            }
            t = t_new;
            ++global_step;
        }
        t = t_mesh[i_out];
        snapshot(t);
    }
    return terms;
}

/// Leading-order Stokes sublayer driven by a wall trace (k = 1 only).
inline SublayerTerm solve_stokes_layer(const Grid& g, const WallTrace& trace, double nu,
                                       const std::vector<double>& t_mesh,
                                       SublayerOptions opts = {}) {
    auto no_ul = [&g](double) { return VelocityField(g); };
    return march_sublayer(g, trace, no_ul, 1, nu, t_mesh, opts).front();
}

/// Fitted exponential decay |f| <= A e^{-beta y / nu^{1/4}} of the wall layer.
inline LinearFit fit_wall_decay(const Field& mag_profile_field, double nu,
                                double eta_lo = 0.5, double eta_hi = 6.0) {
    const Grid& g = mag_profile_field.grid;
    const int n_p = detail::next_fast_size(std::max(16, 4 * mag_profile_field.n_modes()));
    MatrixXd phys = to_physical(mag_profile_field, n_p);
    const double scale = std::pow(nu, 0.25);
    std::vector<double> etas, logs;
    for (int i = 0; i < g.n_y(); ++i) {
        double eta = g.y_nodes()[i] / scale;
        if (eta < eta_lo || eta > eta_hi) continue;
        double m = phys.row(i).cwiseAbs().maxCoeff();
        if (m <= 0.0) continue;
        etas.push_back(eta);
        logs.push_back(std::log(m));
    }
    if (etas.size() < 4) throw InvalidArgument("fit_wall_decay: too few nodes in the layer");
    LinearFit f = fit_line(etas, logs);
    f.slope = -f.slope; // report beta > 0 for decay
    return f;
}

/// The assembled approximate solution u^app = U_s + u_e^app + u~_e + u_S^app
/// on the shared mesh, with everything needed for its residual.
struct ApproxSolution {
    std::shared_ptr<Cascade> cascade;
    CorrectorTrajectory corrector;
    std::vector<SublayerTerm> sublayer;

    struct BoundFit {
        double c0 = 0.0, c1 = 0.0;      // two-sided L^p constants of the mode
        double c2 = 0.0;                // lower-bound constant, min over samples
        double beta = 0.0, beta_r2 = 0.0; // sublayer decay of v_S^1
        double p_slope = 0.0;           // residual amplitude exponent
        double c_normal = 0.0;          // |u2| <= C nu^N e^{lt} y constant
        double sigma0 = 0.0;            // filled by the DNS classifier
    };
    BoundFit bound_fit;

    const Grid& grid() const { return cascade->grid; }
    const std::vector<double>& times() const { return cascade->times; }
    double growth_rate() const { return cascade->growth_rate(); }
    double envelope(double t) const {
        return std::pow(cascade->cfg.nu, cascade->cfg.N) * std::exp(growth_rate() * t);
    }

    /// omega-packed total state (col 0 = full horizontal mode-0 velocity
    /// including U_s).
    Field total_packed(int i) const {
        const Grid& g = grid();
        const CascadeConfig& cfg = cascade->cfg;
        Field p(g);
        for (int j = 0; j <= cfg.M; ++j)
            p.a += std::pow(cfg.nu, cfg.N + 0.5 * j) * cascade->terms[j].packed[i].a;
        p.a += corrector.packed[i].a;
        for (const SublayerTerm& term : sublayer) {
            p.a += term.vort[i].a;
            p.a.col(0) = p.a.col(0) - term.vort[i].a.col(0) +
                         term.stream[i].a.col(0); // col 0 carries velocity
        }
        p.a.col(0) += cascade->u_s[i].cast<Complex>();
        return p;
    }

    VelocityField total(int i) const {
        const Grid& g = grid();
        const CascadeConfig& cfg = cascade->cfg;
        VelocityField v(g);
        for (int j = 0; j <= cfg.M; ++j) {
            VelocityField vj = cascade->terms[j].velocity(i);
            vj *= std::pow(cfg.nu, cfg.N + 0.5 * j);
            v += vj;
        }
        v += packed_velocity(corrector.packed[i], *cascade->poisson);
        for (const SublayerTerm& term : sublayer) v += term.velocity(i);
        v.ux.a.col(0) += cascade->u_s[i].cast<Complex>();
        return v;
    }

    /// u^app - U_s.
    VelocityField perturbation(int i) const {
        VelocityField v = total(i);
        v.ux.a.col(0) -= cascade->u_s[i].cast<Complex>();
        return v;
    }

    double wall_slip(int i) const {
        VelocityField v = perturbation(i);
        double s = 0.0;
        for (int k = 0; k < grid().n_x(); ++k)
            s = std::max({s, std::abs(v.ux.a(0, k)), std::abs(v.uy.a(0, k))});
        return s;
    }
};

/// Sum the components and verify the boundary pipeline: the assembled
/// perturbation must satisfy no-slip at the wall.
inline ApproxSolution assemble_approx(std::shared_ptr<Cascade> cascade,
                                      CorrectorTrajectory corrector,
                                      std::vector<SublayerTerm> sublayer) {
    ApproxSolution app;
    app.cascade = std::move(cascade);
    app.corrector = std::move(corrector);
    app.sublayer = std::move(sublayer);
    const auto& times = app.times();
    if (app.corrector.times.size() != times.size())
        throw GridMismatch("assemble_approx: corrector mesh differs from the cascade mesh");
    for (const auto& term : app.sublayer)
        if (term.times.size() != times.size())
            throw GridMismatch("assemble_approx: sublayer mesh differs from the cascade mesh");

    app.bound_fit.c0 = app.cascade->mode.c0;
    app.bound_fit.c1 = app.cascade->mode.c1;

    double c2 = std::numeric_limits<double>::infinity();
    double c_normal = 0.0;
    const Grid& g = app.grid();
    for (size_t i = 0; i < times.size(); i += std::max<size_t>(1, times.size() / 24)) {
        double slip = app.wall_slip(static_cast<int>(i));
        if (slip > 1e-6)
            throw InvalidArgument("assemble_approx: wall slip above 1e-6; boundary pipeline "
                                  "is inconsistent");
        double env = app.envelope(times[i]);
        VelocityField pert = app.perturbation(static_cast<int>(i));
        c2 = std::min(c2, real_linf(pert) / env);
        const int n_p = detail::next_fast_size(std::max(16, 4 * g.n_x()));
        MatrixXd uy = to_physical(pert.uy, n_p);
        for (int r = 1; r < g.n_y(); ++r)
            c_normal = std::max(c_normal,
                                uy.row(r).cwiseAbs().maxCoeff() / (env * g.y_nodes()[r]));
    }
    app.bound_fit.c2 = c2;
    app.bound_fit.c_normal = c_normal;

    if (!app.sublayer.empty()) {
        int late = static_cast<int>(times.size()) - 1;
        Field mag = app.sublayer.front().stream[late];
        VelocityField v1 = app.sublayer.front().velocity(late);
        LinearFit decay = fit_wall_decay(v1.ux, app.cascade->cfg.nu);
        app.bound_fit.beta = decay.slope;
        app.bound_fit.beta_r2 = decay.r2;
    }
    return app;
}

/// Momentum residual of the assembled field under the full nonlinear
/// operator (pressure removed by discrete Leray projection) plus its
/// localization diagnostics.
struct ResidualSample {
    double t = 0.0;
    VelocityField field;
    double linf = 0.0;
    LinearFit decay;        // log|R| against y / nu^{1/4}
    double mass_below = 0.0; // fraction of the L1-in-y mass under 10 nu^{1/4}
    double lower_ratio = 0.0; // ||u^app - U_s||_inf / (nu^N e^{lambda t})
};

inline ResidualSample nsapp_residual(const ApproxSolution& app, const LerayProjector& proj,
                                     double t) {
    const auto& times = app.times();
    int i = app.cascade->sample_index(t);
    if (i < 4 || i + 4 >= static_cast<int>(times.size()))
        throw InvalidArgument("nsapp_residual: t too close to the mesh ends for d_t");
    const Grid& g = app.grid();
    const double dt = times[1] - times[0];
    const double sqnu = std::sqrt(app.cascade->cfg.nu);

    // eighth-order centered time derivative: the trajectory carries
    // advective oscillations (frequencies up to beta max U) that a low-order
    // stencil on the sample mesh cannot differentiate cleanly
    VelocityField dudt(g);
    const double w[9] = {1.0 / 280,  -4.0 / 105, 1.0 / 5,  -4.0 / 5, 0.0,
                         4.0 / 5,    -1.0 / 5,   4.0 / 105, -1.0 / 280};
    for (int s = -4; s <= 4; ++s) {
        if (s == 0) continue;
        VelocityField vs = app.total(i + s);
        vs *= w[s + 4] / dt;
        dudt += vs;
    }

    VelocityField u = app.total(i);
    VelocityField r = dudt;
    r += advect(u, u);
    VelocityField lap = packed_lap_velocity(app.total_packed(i));
    lap *= -sqnu;
    r += lap;
    r = proj.project(r);

    ResidualSample out;
    out.t = times[i];
    out.field = r;
    out.linf = real_linf(r);

    // localization: x-max magnitude profile against y / nu^{1/4}
    const int n_p = detail::next_fast_size(std::max(16, 4 * g.n_x()));
    MatrixXd px = to_physical(r.ux, n_p), py = to_physical(r.uy, n_p);
    VectorXd prof(g.n_y());
    for (int row = 0; row < g.n_y(); ++row)
        prof[row] = std::sqrt(px.row(row).cwiseAbs2().maxCoeff() +
                              py.row(row).cwiseAbs2().maxCoeff());
    const double scale = std::pow(app.cascade->cfg.nu, 0.25);
    std::vector<double> etas, logs;
    for (int row = 0; row < g.n_y(); ++row) {
        double eta = g.y_nodes()[row] / scale;
        if (eta < 0.3 || eta > 8.0 || prof[row] <= 0.0) continue;
        etas.push_back(eta);
        logs.push_back(std::log(prof[row]));
    }
    if (etas.size() >= 4) {
        out.decay = fit_line(etas, logs);
        out.decay.slope = -out.decay.slope;
    }

    double mass_below = 0.0, mass_total = 0.0;
    for (int row = 0; row < g.n_y(); ++row) {
        double cell = g.quad_weights()[row] * prof[row];
        mass_total += cell;
        if (g.y_nodes()[row] < 10.0 * scale) mass_below += cell;
    }
    out.mass_below = mass_total > 0.0 ? mass_below / mass_total : 1.0;
    out.lower_ratio = real_linf(app.perturbation(i)) / app.envelope(times[i]);
    return out;
}

/// Residual diagnostics over a time window; fills the amplitude-exponent
/// fit (log ||R||_inf against log nu^N e^{lambda t}) into bound_fit.
struct ResidualReport {
    std::vector<ResidualSample> samples;
    double p_slope = 0.0;
    double p_r2 = 0.0;
};

inline ResidualReport residual_report(ApproxSolution& app, double theta_lo = 0.75,
                                      double theta_hi = 0.25, int n_eval = 12) {
    const auto& times = app.times();
    LerayProjector proj(app.grid());
    double t_lo = critical_time(app.cascade->cfg, theta_lo, app.cascade->mode.lambda);
    double t_hi = std::min(critical_time(app.cascade->cfg, theta_hi, app.cascade->mode.lambda),
                           times[times.size() - 5]);
    ResidualReport rep;
    std::vector<double> xs, ys;
    for (int e = 0; e < n_eval; ++e) {
        double t = t_lo + (t_hi - t_lo) * e / (n_eval - 1.0);
        if (t < times[4]) continue;
        ResidualSample smp = nsapp_residual(app, proj, t);
        xs.push_back(std::log(app.envelope(smp.t)));
        ys.push_back(std::log(std::max(smp.linf, 1e-300)));
        rep.samples.push_back(std::move(smp));
    }
    if (xs.size() >= 3) {
        LinearFit f = fit_line(xs, ys);
        rep.p_slope = f.slope;
        rep.p_r2 = f.r2;
        app.bound_fit.p_slope = f.slope;
    }
    return rep;
}

/// The full laboratory pipeline: cascade, corrector, and the sublayer chain
/// driven by the wall trace of u_e^app + u~_e, assembled into u^app.
inline ApproxSolution build_full_approximation(const EigenMode& mode,
                                               const CascadeConfig& cfg,
                                               const ShearProfile& base,
                                               SublayerOptions sub_opts = {},
                                               int cycles = 2) {
    auto cascade = std::make_shared<Cascade>(build_cascade(mode, cfg, base));
    const Grid& g = cascade->grid;
    auto times = std::make_shared<std::vector<double>>(cascade->times);

    // the trace oscillates at the full modal frequency |lambda|, not just
    // the growth rate; the march substeps must resolve it
    if (sub_opts.rate_hint <= 0.0) sub_opts.rate_hint = std::abs(mode.lambda);
    sub_opts.modal_init_rate = mode.lambda;

    CorrectorTrajectory corrector;
    corrector.times = *times;
    corrector.packed.assign(times->size(), Field(g));
    corrector.poisson = cascade->poisson;
    std::vector<SublayerTerm> sub;

    // Alternate the corrector (kills the measured large-scale error of the
    // running assembly, Navier conditions) with the sublayer chain (restores
    // no-slip for the updated trace). Each cycle shrinks the extended
    // leftover by the layer's potential-tail factor.
    for (int cycle = 0; cycle < std::max(1, cycles); ++cycle) {
        std::vector<Field> background(times->size(), Field(g));
        for (size_t i = 0; i < times->size(); ++i) {
            background[i].a = corrector.packed[i].a;
            for (const SublayerTerm& term : sub) {
                background[i].a += term.vort[i].a;
                background[i].a.col(0) =
                    background[i].a.col(0) - term.vort[i].a.col(0) + term.stream[i].a.col(0);
            }
        }
        CorrectorTrajectory delta =
            solve_corrector(*cascade, 0.0, true, cycle == 0 ? 2 : 1, &background);
        for (size_t i = 0; i < times->size(); ++i)
            corrector.packed[i].a += delta.packed[i].a;

        auto sum = std::make_shared<std::vector<Field>>();
        sum->reserve(times->size());
        for (size_t i = 0; i < times->size(); ++i) {
            Field p(g);
            for (int j = 0; j <= cfg.M; ++j)
                p.a += std::pow(cfg.nu, cfg.N + 0.5 * j) * cascade->terms[j].packed[i].a;
            p.a += corrector.packed[i].a;
            sum->push_back(std::move(p));
        }
        WallTrace trace = [cascade, sum, times](double t) {
            detail::PackedInterpolant it(times.get(), sum.get());
            VelocityField v = packed_velocity(it.at(t), *cascade->poisson);
            WallTraceSample w;
            w.tangential = -v.ux.a.row(0).transpose();
            w.normal = v.uy.a.row(0).transpose();
            return w;
        };
        auto u_l = [cascade, sum, times](double t) {
            detail::PackedInterpolant it(times.get(), sum.get());
            VelocityField v = packed_velocity(it.at(t), *cascade->poisson);
            double dt = (*times)[1] - (*times)[0];
            int i = std::clamp(static_cast<int>(std::floor(t / dt)), 0,
                               static_cast<int>(times->size()) - 2);
            double w = (t - (*times)[i]) / dt;
            v.ux.a.col(0) +=
                ((1.0 - w) * cascade->u_s[i] + w * cascade->u_s[i + 1]).cast<Complex>();
            return v;
        };
        sub = march_sublayer(g, trace, u_l, cfg.M, cfg.nu, *times, sub_opts);
    }
    return assemble_approx(cascade, std::move(corrector), std::move(sub));
}

/// |v_S^1| profile in the rescaled coordinate eta = y / nu^{1/4},
/// normalized to unit sup; used for the cross-nu collapse checks.
inline std::vector<double> collapse_profile(const SublayerTerm& v1, double nu, int i,
                                            const std::vector<double>& etas) {
    VelocityField v = v1.velocity(i);
    const Grid& g = v.grid();
    const int n_p = detail::next_fast_size(std::max(16, 4 * g.n_x()));
    MatrixXd px = to_physical(v.ux, n_p);
    VectorXd prof(g.n_y());
    for (int row = 0; row < g.n_y(); ++row) prof[row] = px.row(row).cwiseAbs().maxCoeff();
    std::vector<double> out;
    out.reserve(etas.size());
    const double scale = std::pow(nu, 0.25);
    for (double eta : etas) out.push_back(g.interpolate(prof, eta * scale));
    double peak = *std::max_element(out.begin(), out.end());
    if (peak > 0.0)
        for (double& v_ : out) v_ /= peak;
    return out;
}

} // namespace sublab
