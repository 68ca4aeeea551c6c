#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <vector>

#include "hypctl/control.hpp"
#include "hypctl/grid.hpp"
#include "hypctl/registry.hpp"
#include "hypctl/rng.hpp"

using namespace hypctl;

namespace {

ControlVec random_control(const ControlMap& map, CounterRng& rng) {
    ControlVec c = map.zero_control();
    for (auto& x : c.u.values) x = rng.normal_vector(static_cast<int>(x.size()));
    for (auto& x : c.v.values) x = rng.normal_vector(static_cast<int>(x.size()));
    return c;
}

Eigen::VectorXd sine_profile(const Grid& g) {
    Eigen::VectorXd y0 = Eigen::VectorXd::Zero(g.state_dim_total());
    for (int c = 0; c < g.ncells; ++c)
        y0(c * g.N()) = std::sin(std::numbers::pi * g.cell_center(c)[0]);
    return y0;
}

}  // namespace

TEST_CASE("control-to-state map and its adjoint satisfy the pairing identity", "[control]") {
    struct Setup {
        const char* label;
        std::array<int, 2> cells;
        int depth;
        double T;
        ControlMapOptions opts;
    };
    std::vector<char> half_mask(12, 0);
    for (int c = 3; c < 9; ++c) half_mask[static_cast<std::size_t>(c)] = 1;
    const Setup setups[] = {
        {"sir-age", {12, 1}, 3, 0.9, {}},
        {"sir-age", {12, 1}, 3, 0.9, {true, false, false, {}}},
        {"sir-age", {12, 1}, 3, 0.9, {false, true, false, half_mask}},
        {"sir-age", {12, 1}, 3, 0.9, {true, true, true, {}}},
        {"shallow-water-torrential", {5, 5}, 2, 0.3, {}},
        {"shallow-water-torrential", {5, 5}, 2, 0.3, {true, true, true, {}}},
    };
    CounterRng rng(57);
    for (const Setup& s : setups) {
        Grid g = build_grid(make_system(s.label), s.cells);
        SdeOperators ops = make_sde_operators(g, ScenarioTree{s.depth, s.T});
        ControlMap map(ops, s.opts);
        for (int trial = 0; trial < 5; ++trial) {
            ControlVec c = random_control(map, rng);
            Eigen::VectorXd w = rng.normal_vector(static_cast<int>(map.terminal_dim()));
            const double lhs = map.state_dot(map.forward(c), w);
            const double rhs = map.control_dot(c, map.adjoint(w));
            REQUIRE(std::abs(lhs - rhs) <= 1e-10 * (1.0 + std::abs(lhs) + std::abs(rhs)));
        }
    }
}

TEST_CASE("structural projections act as claimed", "[control]") {
    Grid g = build_grid(make_sir_age(), {12, 1});
    SdeOperators ops = make_sde_operators(g, ScenarioTree{3, 0.9});
    CounterRng rng(91);

    SECTION("boundary-only zeroes the internal channel") {
        ControlMap map(ops, {true, false, false, {}});
        ControlVec c = random_control(map, rng);
        map.project(c);
        for (const auto& x : c.v.values) REQUIRE(x.cwiseAbs().maxCoeff() == 0.0);
        for (const auto& x : c.u.values) REQUIRE(x.cwiseAbs().maxCoeff() > 0.0);
    }
    SECTION("support mask zeroes cells outside the box") {
        std::vector<char> mask(12, 0);
        mask[4] = mask[5] = 1;
        ControlMap map(ops, {false, true, false, mask});
        ControlVec c = random_control(map, rng);
        map.project(c);
        const int N = g.N();
        for (const auto& x : c.v.values)
            for (int cell = 0; cell < g.ncells; ++cell) {
                const double m = x.segment(cell * N, N).cwiseAbs().maxCoeff();
                if (cell == 4 || cell == 5)
                    REQUIRE(m > 0.0);
                else
                    REQUIRE(m == 0.0);
            }
    }
    SECTION("zero-mean projection removes each level's expectation") {
        ControlMap map(ops, {true, true, true, {}});
        ControlVec c = random_control(map, rng);
        map.project(c);
        for (int l = 0; l < ops.tree.depth; ++l)
            REQUIRE(level_expectation(ops.tree, c.v, l).cwiseAbs().maxCoeff() <= 1e-14);
    }
    SECTION("no active channel is rejected") {
        REQUIRE_THROWS_AS(ControlMap(ops, {false, false, false, {}}), std::invalid_argument);
    }
    SECTION("zero control maps to the zero terminal state") {
        ControlMap map(ops);
        REQUIRE(map.forward(map.zero_control()).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("leaf stacking round-trips") {
        ControlMap map(ops);
        Eigen::VectorXd w = rng.normal_vector(static_cast<int>(map.terminal_dim()));
        std::vector<Eigen::VectorXd> leaves = map.unstack_leaves(w);
        AdaptedProcess p(ops.tree, ops.tree.depth, g.state_dim_total());
        for (std::int64_t k = 0; k < map.num_leaves(); ++k)
            p.at(ops.tree.node_id(ops.tree.depth, k)) = leaves[static_cast<std::size_t>(k)];
        REQUIRE((map.stack_leaves(p) - w).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("conjugate gradients steers a sine profile to rest", "[control]") {
    Grid g = build_grid(make_scalar_transport(), {32, 1});
    SdeOperators ops = make_sde_operators(g, ScenarioTree{4, 1.5});
    ControlMap map(ops);
    Eigen::VectorXd y0 = sine_profile(g);
    Eigen::VectorXd target = Eigen::VectorXd::Zero(map.terminal_dim());

    SynthesisOptions opts;
    opts.tol = 1e-9;
    auto [c, rep] = synthesize_control(map, y0, target, opts);
    REQUIRE(rep.converged);
    REQUIRE(rep.residual <= 1e-8);
    REQUIRE(rep.iterations <= 1000);
    REQUIRE(rep.control_norm > 0.0);
    REQUIRE(rep.sigma_max_estimate >= rep.sigma_min_estimate);

    // Rerun the closed loop with the returned control and measure the defect
    // independently of the report.
    Eigen::VectorXd achieved = map.forward(c) + map.free_response(y0);
    const double rhs_norm = map.state_norm(map.free_response(y0));
    REQUIRE(map.state_norm(achieved - target) <= 1e-8 * rhs_norm);
}

TEST_CASE("boundary observability switches on across the transit time", "[control]") {
    // Boundary control never touches the noise channel, so on the full
    // leaf-resolved terminal space its Gramian is rank deficient at every
    // horizon (control dofs < terminal dimension). The transition lives on
    // the leaf-constant (mean) directions: below the wall-to-wall transit
    // time the boundary influence provably misses the far cells -- those
    // Gramian columns vanish identically -- while above it every cell is
    // covered and the mean-restricted Gramian is positive definite.
    Grid g = build_grid(make_scalar_transport(), {20, 1});
    ControlMapOptions boundary_only{true, false, false, {}};

    auto mean_gramian = [&](const ControlMap& map) {
        Eigen::MatrixXd M(g.ncells, g.ncells);
        auto embed = [&](int j) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(g.ncells);
            e(j) = 1.0;
            return Eigen::VectorXd(e.replicate(map.num_leaves(), 1));
        };
        for (int j = 0; j < g.ncells; ++j) {
            Eigen::VectorXd gwj = map.gramian(embed(j));
            for (int i = 0; i < g.ncells; ++i) M(i, j) = map.state_dot(embed(i), gwj);
        }
        return M;
    };

    // T = 0.5 gives 4 x 3 = 12 sub-steps on 20 cells: data injected at the
    // left wall advances at most one cell per sub-step, so cells 12..19 lie
    // strictly beyond reach and their columns are exactly zero.
    SdeOperators slow = make_sde_operators(g, ScenarioTree{4, 0.5});
    ControlMap below(slow, boundary_only);
    Eigen::MatrixXd m_below = mean_gramian(below);
    for (int j = 12; j < g.ncells; ++j)
        REQUIRE(m_below.col(j).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_below(m_below, Eigen::EigenvaluesOnly);
    const double lmax_below = es_below.eigenvalues()(g.ncells - 1);
    REQUIRE(std::abs(es_below.eigenvalues()(0)) <= 1e-14 * lmax_below);
    REQUIRE(observability_spectrum(below).sigma_min <= 1e-10);

    // T = 1.5 gives 4 x 9 = 36 sub-steps: every cell is covered and the
    // mean-restricted Gramian is uniformly invertible (measured smallest
    // eigenvalue 2.1367e-06, largest 4.9445e-02). The full-space estimate
    // stays at roundoff level: rank deficiency does not heal with time.
    SdeOperators fast = make_sde_operators(g, ScenarioTree{4, 1.5});
    ControlMap above(fast, boundary_only);
    Eigen::MatrixXd m_above = mean_gramian(above);
    for (int j = 0; j < g.ncells; ++j)
        REQUIRE(m_above.col(j).cwiseAbs().maxCoeff() > 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_above(m_above, Eigen::EigenvaluesOnly);
    REQUIRE(es_above.eigenvalues()(0) >= 1e-6);
    REQUIRE(es_above.eigenvalues()(g.ncells - 1) >= es_above.eigenvalues()(0));
    SpectrumEstimate full_above = observability_spectrum(above);
    REQUIRE(full_above.sigma_min <= 1e-4);
    REQUIRE(full_above.sigma_max >= 0.9);
}

TEST_CASE("matrix-free spectrum matches a dense Gramian factorization", "[control]") {
    Grid g = build_grid(make_scalar_transport(), {8, 1});
    SdeOperators ops = make_sde_operators(g, ScenarioTree{3, 0.75});
    ControlMap map(ops);
    const Eigen::Index n = map.terminal_dim();

    // The state inner product is a scalar multiple of the Euclidean one, so
    // the Gramian assembled column by column must be a symmetric matrix.
    Eigen::MatrixXd G(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
        e(j) = 1.0;
        G.col(j) = map.gramian(e);
    }
    const double gnorm = G.cwiseAbs().maxCoeff();
    REQUIRE((G - G.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * gnorm);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    const double sigma_max_dense = std::sqrt(std::max(0.0, es.eigenvalues()(n - 1)));
    const double sigma_min_dense = std::sqrt(std::max(0.0, es.eigenvalues()(0)));

    SpectrumEstimate est = observability_spectrum(map);
    REQUIRE(est.lanczos_breakdown);  // 100 iterations exhaust a 64-dim space
    REQUIRE(est.sigma_max == Catch::Approx(sigma_max_dense).epsilon(1e-6));
    const double lambda_min_dense = sigma_min_dense * sigma_min_dense;
    const double lambda_max_dense = sigma_max_dense * sigma_max_dense;
    REQUIRE(std::abs(est.sigma_min * est.sigma_min - lambda_min_dense) <=
            1e-10 * lambda_max_dense);
}
