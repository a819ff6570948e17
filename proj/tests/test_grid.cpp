#include <catch2/catch.hpp>

#include "sublab/grid.hpp"
#include "sublab/field.hpp"

using namespace sublab;

TEST_CASE("half-line grid construction contract") {
    Grid g = build_halfline_grid(64, 5.0, 16, 2.0 * std::numbers::pi);
    REQUIRE(g.n_y() == 64);
    REQUIRE(g.y_nodes()[0] == 0.0);
    REQUIRE(g.y_max() >= 50.0);
    for (int i = 1; i < g.n_y(); ++i) REQUIRE(g.y_nodes()[i] > g.y_nodes()[i - 1]);
}

TEST_CASE("undersized grid rejected") {
    REQUIRE_THROWS_AS(build_halfline_grid(8, 1.0, 4, 2.0 * std::numbers::pi), InvalidArgument);
    REQUIRE_THROWS_AS(build_halfline_grid(64, -1.0, 4, 2.0 * std::numbers::pi), InvalidArgument);
    REQUIRE_THROWS_AS(build_halfline_grid(64, 1.0, 0, 2.0 * std::numbers::pi), InvalidArgument);
    REQUIRE_THROWS_AS(build_halfline_grid(64, 1.0, 4, 0.0), InvalidArgument);
}

TEST_CASE("interpolation between non-nested grids agrees on analytic data") {
    // Nodes of the coarse grid need not nest into the fine one; both must
    // reproduce e^{-y} wherever sampled.
    Grid g64 = build_halfline_grid(64, 5.0, 16, 2.0 * std::numbers::pi);
    Grid g128 = build_halfline_grid(128, 5.0, 16, 2.0 * std::numbers::pi);

    VectorXd f64 = (-g64.y_nodes().array()).exp();
    VectorXd f128 = (-g128.y_nodes().array()).exp();

    double err = 0.0;
    for (int i = 0; i < g128.n_y(); ++i) {
        double y = g128.y_nodes()[i];
        err = std::max(err, std::abs(g64.interpolate(f64, y) - f128[i]));
    }
    for (int i = 0; i < g64.n_y(); ++i) {
        double y = g64.y_nodes()[i];
        err = std::max(err, std::abs(g128.interpolate(f128, y) - f64[i]));
    }
    REQUIRE(err < 1e-8);
}

TEST_CASE("sublayer resolution of the clustered map") {
    // At n_y = 257 the default map keeps at least 12 nodes below nu^{1/4}
    // for the smallest supported nu.
    Grid g = build_halfline_grid(257, 5.0, 16, 2.0 * std::numbers::pi);
    REQUIRE(g.nodes_below(std::pow(1e-6, 0.25)) >= 12);
}

TEST_CASE("grid construction is deterministic") {
    Grid a = build_halfline_grid(96, 3.0, 8, 4.0);
    Grid b = build_halfline_grid(96, 3.0, 8, 4.0);
    REQUIRE(a.y_nodes() == b.y_nodes());
    REQUIRE(a.quad_weights() == b.quad_weights());
    REQUIRE(a.d1() == b.d1());
}
