#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <numbers>

#include "sublab/errors.hpp"

namespace sublab {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;
using Complex = std::complex<double>;

namespace detail {

/// Chebyshev-Gauss-Lobatto differentiation matrix on xi_j = cos(j pi / N),
/// j = 0..N, with the negative-sum trick on the diagonal.
inline MatrixXd cgl_diff_matrix(int n_pts) {
    const int N = n_pts - 1;
    MatrixXd D(n_pts, n_pts);
    VectorXd xi(n_pts), c(n_pts);
    for (int j = 0; j < n_pts; ++j) {
        xi[j] = std::cos(std::numbers::pi * j / N);
        c[j] = (j == 0 || j == N) ? 2.0 : 1.0;
    }
    for (int i = 0; i < n_pts; ++i)
        for (int j = 0; j < n_pts; ++j)
            if (i != j) {
                double sign = ((i + j) % 2 == 0) ? 1.0 : -1.0;
                D(i, j) = (c[i] / c[j]) * sign / (xi[i] - xi[j]);
            }
    for (int i = 0; i < n_pts; ++i) {
        double s = 0.0;
        for (int j = 0; j < n_pts; ++j)
            if (j != i) s += D(i, j);
        D(i, i) = -s;
    }
    return D;
}

/// Clenshaw-Curtis weights for the CGL nodes on [-1, 1].
inline VectorXd clenshaw_curtis_weights(int n_pts) {
    const int N = n_pts - 1;
    VectorXd w = VectorXd::Zero(n_pts);
    if (N % 2 == 0) {
        w[0] = w[N] = 1.0 / (N * N - 1.0);
        for (int j = 1; j < N; ++j) {
            double theta = std::numbers::pi * j / N;
            double v = 1.0;
            for (int k = 1; k <= N / 2 - 1; ++k)
                v -= 2.0 * std::cos(2.0 * k * theta) / (4.0 * k * k - 1.0);
            v -= std::cos(N * theta) / (N * N - 1.0);
            w[j] = 2.0 * v / N;
        }
    } else {
        w[0] = w[N] = 1.0 / (N * N);
        for (int j = 1; j < N; ++j) {
            double theta = std::numbers::pi * j / N;
            double v = 1.0;
            for (int k = 1; k <= (N - 1) / 2; ++k)
                v -= 2.0 * std::cos(2.0 * k * theta) / (4.0 * k * k - 1.0);
            w[j] = 2.0 * v / N;
        }
    }
    return w;
}

struct GridData {
    int n_y = 0;
    double map_length = 0.0;
    int n_x = 0;            // retained x-wavenumbers k = 0 .. n_x-1
    double period = 0.0;
    double stretch = 0.125; // algebraic clustering parameter

    VectorXd u;       // computational coordinate in [0, 1], ascending
    VectorXd y;       // mapped nodes, y[0] = 0, y[n_y-1] = 10 map_length
    VectorXd w;       // quadrature weights for integrals over y
    VectorXd bary;    // barycentric weights in u
    MatrixXd d1;      // d/dy on the mapped nodes
    MatrixXd d2;      // d^2/dy^2
};

} // namespace detail

/// Collocation grid on the truncated half-line [0, 10 map_length] crossed
/// with a periodic x-direction represented by wavenumbers k alpha0,
/// k = 0..n_x-1, alpha0 = 2 pi / period. Nodes are Chebyshev points under
/// an algebraic map clustering at the wall. Value-semantic handle; cheap
/// to copy.
class Grid {
public:
    Grid() = default;

    int n_y() const { return d_->n_y; }
    int n_x() const { return d_->n_x; }
    double map_length() const { return d_->map_length; }
    double period() const { return d_->period; }
    double alpha0() const { return 2.0 * std::numbers::pi / d_->period; }
    double y_max() const { return d_->y[d_->n_y - 1]; }

    const VectorXd& y_nodes() const { return d_->y; }
    const VectorXd& quad_weights() const { return d_->w; }
    const MatrixXd& d1() const { return d_->d1; }
    const MatrixXd& d2() const { return d_->d2; }

    /// Wavenumber of mode column k.
    double beta(int k) const { return k * alpha0(); }

    bool valid() const { return d_ != nullptr; }

    /// Same y-discretization (nodes and map identical).
    bool same_y(const Grid& o) const {
        return d_ == o.d_ || (d_ && o.d_ && d_->n_y == o.d_->n_y &&
                              d_->map_length == o.d_->map_length &&
                              d_->stretch == o.d_->stretch);
    }
    bool operator==(const Grid& o) const {
        return same_y(o) && d_->n_x == o.d_->n_x && d_->period == o.d_->period;
    }

    int nodes_below(double y_threshold) const {
        int c = 0;
        for (int i = 0; i < d_->n_y; ++i)
            if (d_->y[i] < y_threshold) ++c;
        return c;
    }

    /// Computational coordinate of a physical height.
    double u_of_y(double yy) const {
        const double s = d_->stretch, Y = y_max();
        return yy * (1.0 + s) / (Y * s + yy);
    }

    /// Barycentric interpolation of nodal values to arbitrary y in [0, y_max].
    template <typename Vec>
    auto interpolate(const Vec& values, double yy) const {
        using Scalar = typename Vec::Scalar;
        const auto& u = d_->u;
        const auto& b = d_->bary;
        const double uq = u_of_y(yy);
        Scalar num = Scalar(0);
        double den = 0.0;
        for (int j = 0; j < d_->n_y; ++j) {
            double du = uq - u[j];
            if (std::abs(du) < 1e-14) return Scalar(values[j]);
            double t = b[j] / du;
            num += t * values[j];
            den += t;
        }
        return Scalar(num / den);
    }

    const detail::GridData& data() const { return *d_; }

private:
    explicit Grid(std::shared_ptr<const detail::GridData> d) : d_(std::move(d)) {}
    std::shared_ptr<const detail::GridData> d_;

    friend Grid build_halfline_grid(int, double, int, double);
};

/// Build the mapped half-line grid. Nodes ascend from y = 0 to
/// y_max = 10 map_length; the algebraic map y = y_max s u / (1 + s - u)
/// places about half of the nodes below map_length.
inline Grid build_halfline_grid(int n_y, double map_length, int n_x, double period) {
    if (n_y < 16) throw InvalidArgument("build_halfline_grid: n_y must be >= 16");
    if (map_length <= 0.0) throw InvalidArgument("build_halfline_grid: map_length must be positive");
    if (n_x < 1) throw InvalidArgument("build_halfline_grid: n_x must be >= 1");
    if (period <= 0.0) throw InvalidArgument("build_halfline_grid: period must be positive");

    auto d = std::make_shared<detail::GridData>();
    d->n_y = n_y;
    d->map_length = map_length;
    d->n_x = n_x;
    d->period = period;

    const int N = n_y - 1;
    const double s = d->stretch;
    const double Y = 10.0 * map_length;

    d->u.resize(n_y);
    d->y.resize(n_y);
    d->bary.resize(n_y);
    VectorXd y_u(n_y), y_uu(n_y);
    for (int j = 0; j < n_y; ++j) {
        double xi = std::cos(std::numbers::pi * j / N);
        double u = 0.5 * (1.0 - xi);
        d->u[j] = u;
        d->y[j] = Y * s * u / (1.0 + s - u);
        double q = 1.0 + s - u;
        y_u[j] = Y * s * (1.0 + s) / (q * q);
        y_uu[j] = 2.0 * Y * s * (1.0 + s) / (q * q * q);
        double delta = (j == 0 || j == N) ? 0.5 : 1.0;
        d->bary[j] = ((j % 2 == 0) ? 1.0 : -1.0) * delta;
    }
    d->y[0] = 0.0; // exact wall node

    // d/du = -2 d/dxi with our index order (u ascends as xi descends).
    MatrixXd Du = -2.0 * detail::cgl_diff_matrix(n_y);
    MatrixXd Du2 = Du * Du;
    for (int i = 0; i < n_y; ++i) {
        double sum = 0.0;
        for (int j = 0; j < n_y; ++j)
            if (j != i) sum += Du2(i, j);
        Du2(i, i) = -sum;
    }

    d->d1 = y_u.cwiseInverse().asDiagonal() * Du;
    d->d2 = y_u.cwiseAbs2().cwiseInverse().asDiagonal() * Du2 -
            (y_uu.array() / y_u.array().cube()).matrix().asDiagonal() * Du;

    VectorXd wxi = detail::clenshaw_curtis_weights(n_y);
    d->w = 0.5 * wxi.cwiseProduct(y_u);

    return Grid(std::shared_ptr<const detail::GridData>(std::move(d)));
}

} // namespace sublab
