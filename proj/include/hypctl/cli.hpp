#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hypctl/carleman.hpp"
#include "hypctl/config_io.hpp"
#include "hypctl/control.hpp"
#include "hypctl/csv.hpp"
#include "hypctl/geometry.hpp"
#include "hypctl/grid.hpp"
#include "hypctl/registry.hpp"
#include "hypctl/rng.hpp"
#include "hypctl/solver.hpp"
#include "hypctl/system.hpp"
#include "hypctl/tree.hpp"
#include "hypctl/version.hpp"

namespace hypctl::cli {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,        ///< malformed or inconsistent configuration.
    kInvariantFailure = 3,   ///< a numerical invariant did not hold.
    kUncontrollable = 4,     ///< synthesis failed with a certified spectrum gap.
};

namespace detail {

inline std::string fmt(double v, const char* conv = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), conv, v);
    return std::string(buf);
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

/// Evaluates one scalar profile at a point of the domain.
inline double profile_value(const Grid& g, const std::string& kind, double amplitude, int mode,
                            const std::array<double, 2>& center, double width,
                            std::array<double, 2> x) {
    if (kind == "zero") return 0.0;
    if (kind == "constant") return amplitude;
    if (kind == "sine") {
        double v = amplitude;
        for (int d = 0; d < g.dim; ++d) {
            const double xr = (x[static_cast<std::size_t>(d)] - g.spec.domain.lower[d]) /
                              g.spec.domain.extent(d);
            v *= std::sin(mode * M_PI * xr);
        }
        return v;
    }
    if (kind == "bump") {
        double q = 0.0;
        for (int d = 0; d < g.dim; ++d) {
            const double r = (x[static_cast<std::size_t>(d)] - center[static_cast<std::size_t>(d)]) / width;
            q += r * r;
        }
        return amplitude * std::exp(-q);
    }
    throw ConfigError("unknown profile kind '" + kind + "'");
}

/// Grid vector with the requested profile on one state component.
inline Eigen::VectorXd component_profile(const Grid& g, const std::string& kind, double amplitude,
                                         int mode, const std::array<double, 2>& center,
                                         double width, int component) {
    if (component < 0 || component >= g.N())
        throw ConfigError("profile component " + std::to_string(component) +
                          " out of range for a system with " + std::to_string(g.N()) +
                          " states");
    if (kind == "bump" && !(width > 0.0)) throw ConfigError("profile width must be positive");
    Eigen::VectorXd y = Eigen::VectorXd::Zero(g.state_dim_total());
    for (int c = 0; c < g.ncells; ++c)
        y(c * g.N() + component) = profile_value(g, kind, amplitude, mode, center, width,
                                                 g.cell_center(c));
    return y;
}

inline Eigen::VectorXd make_initial_state(const Grid& g, const InitialSpec& ic) {
    return component_profile(g, ic.kind, ic.amplitude, ic.mode, ic.center, ic.width, ic.component);
}

/// Terminal target stacked over scenario leaves.
inline Eigen::VectorXd make_target(const ControlMap& map, const TargetSpec& t,
                                   const Eigen::VectorXd& free_state, std::uint64_t seed) {
    const Grid& g = map.grid();
    const auto leaves = map.num_leaves();
    const auto nd = g.state_dim_total();
    if (t.kind == "free") return free_state;
    Eigen::VectorXd y1 = Eigen::VectorXd::Zero(map.terminal_dim());
    if (t.kind == "zero") return y1;
    if (t.kind == "bump") {
        Eigen::VectorXd p =
            component_profile(g, "bump", t.amplitude, t.modes, t.center, t.width, t.component);
        for (std::int64_t k = 0; k < leaves; ++k) y1.segment(k * nd, nd) = p;
        return y1;
    }
    if (t.kind == "low-mode-random") {
        if (t.modes < 1) throw ConfigError("control.target.modes must be positive");
        std::vector<Eigen::VectorXd> modes;
        for (int m = 1; m <= t.modes; ++m)
            modes.push_back(component_profile(g, "sine", 1.0, m, t.center, t.width, t.component));
        CounterRng rng(seed ^ 0x7a9e0f5d3b21c4ULL);
        for (std::int64_t k = 0; k < leaves; ++k)
            for (int m = 0; m < t.modes; ++m)
                y1.segment(k * nd, nd) += t.amplitude * rng.normal() * modes[static_cast<std::size_t>(m)];
        return y1;
    }
    throw ConfigError("unknown target kind '" + t.kind + "'");
}

inline std::vector<char> support_mask(const Grid& g, const std::optional<SupportBox>& box) {
    if (!box) return {};
    std::vector<char> mask(static_cast<std::size_t>(g.ncells), 0);
    for (int c = 0; c < g.ncells; ++c) {
        auto x = g.cell_center(c);
        bool in = true;
        for (int d = 0; d < g.dim; ++d)
            if (x[static_cast<std::size_t>(d)] < box->lower[static_cast<std::size_t>(d)] ||
                x[static_cast<std::size_t>(d)] > box->upper[static_cast<std::size_t>(d)])
                in = false;
        mask[static_cast<std::size_t>(c)] = in ? 1 : 0;
    }
    return mask;
}

inline ControlMapOptions map_options(const RunConfig& cfg, const Grid& g) {
    ControlMapOptions o;
    o.use_boundary = cfg.use_boundary;
    o.use_internal = cfg.use_internal;
    o.zero_mean_internal = cfg.zero_mean_internal;
    o.internal_support = support_mask(g, cfg.support);
    return o;
}

/// Smooth random adapted process (low-frequency in space, fresh coefficients
/// per node): used for identity residual probes.
inline AdaptedProcess random_smooth_process(const Grid& g, const ScenarioTree& tr, int max_level,
                                            std::uint64_t seed) {
    AdaptedProcess p(tr, max_level, static_cast<int>(g.state_dim_total()));
    CounterRng rng(seed);
    const int N = g.N();
    for (auto& node : p.values) {
        for (int comp = 0; comp < N; ++comp) {
            for (int d = 0; d < g.dim; ++d) {
                const double a = rng.normal();
                const double b = rng.normal();
                for (int c = 0; c < g.ncells; ++c) {
                    auto x = g.cell_center(c);
                    const double xr = (x[static_cast<std::size_t>(d)] - g.spec.domain.lower[d]) /
                                      g.spec.domain.extent(d);
                    node(c * N + comp) += a * std::sin(M_PI * xr) + b * std::cos(M_PI * xr);
                }
            }
        }
    }
    return p;
}

/// Shared context handed to each subcommand body.
struct CommandContext {
    RunConfig cfg;
    std::string command_line;
    std::vector<std::string> outputs;  ///< files written, relative to the output directory.
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    std::string path(const std::string& name) {
        outputs.push_back(name);
        return join_path(cfg.output_dir, name);
    }

    /// Writes the manifest and passes the exit code through.
    int finish(int code) {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_manifest(join_path(cfg.output_dir, "manifest.json"), command_line, cfg, wall,
                       outputs);
        return code;
    }
};

// ---------------------------------------------------------------------------
// Subcommand bodies.
// ---------------------------------------------------------------------------

inline int cmd_validate(CommandContext& ctx) {
    const SystemSpec& spec = ctx.cfg.spec;
    std::cout << "system: " << spec.label << " (" << spec.state_dim << " states, "
              << spec.space_dim << "-D domain)\n";
    SpecValidation v = validate_spec(spec);
    std::cout << "shapes: ok\n";
    std::cout << "symmetry: " << (v.max_asymmetry <= kSymmetryTol ? "ok" : "VIOLATED")
              << " (max asymmetry " << fmt(v.max_asymmetry, "%.3g") << ", tolerance "
              << fmt(kSymmetryTol, "%.3g") << ")\n";
    for (const std::string& m : v.warnings) std::cout << "warning: " << m << "\n";
    for (const std::string& m : v.failures) std::cout << "invariant violated: " << m << "\n";
    if (v.ok) std::cout << "validate: all invariants hold\n";
    return ctx.finish(v.ok ? kOk : kInvariantFailure);
}

inline int cmd_check_condition(CommandContext& ctx) {
    const SystemSpec& spec = ctx.cfg.spec;
    LinearEtaSearch s = search_linear_eta(spec);
    if (!s.found) {
        std::cout << "condition: NOT certified; best linear direction gives c0 = "
                  << fmt(s.best_c0) << " (needs a positive lower bound)\n";
        return ctx.finish(kInvariantFailure);
    }
    const WeightCandidate& w = s.weight;
    const double T0 = minimal_time(w);
    std::cout << "condition: certified with eta(x) = -(" << fmt(s.alpha[0]) << ")*x1";
    if (spec.space_dim == 2) std::cout << " - (" << fmt(s.alpha[1]) << ")*x2";
    std::cout << "\n";
    std::cout << "  c0 = " << fmt(w.c0) << "\n";
    std::cout << "  eta range = [" << fmt(w.eta_min) << ", " << fmt(w.eta_max) << "]\n";
    std::cout << "  minimal control time T0 = " << fmt(T0) << "\n";
    CsvFile csv(ctx.path("condition.csv"),
                {"alpha1", "alpha2", "c0", "eta_min", "eta_max", "T0"});
    csv.row({csv_number(s.alpha[0]), csv_number(s.alpha[1]), csv_number(w.c0),
             csv_number(w.eta_min), csv_number(w.eta_max), csv_number(T0)});
    return ctx.finish(kOk);
}

inline int cmd_rays(CommandContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const SystemSpec& spec = cfg.spec;
    LinearEtaSearch s = search_linear_eta(spec);
    if (!s.found) {
        std::cout << "rays: weight search failed; cannot trace against a certified eta\n";
        return ctx.finish(kInvariantFailure);
    }
    const WeightCandidate& w = s.weight;
    RayOptions opt;
    opt.dt = cfg.ray_dt;
    opt.horizon = cfg.ray_horizon ? *cfg.ray_horizon
                                  : (w.eta_max - w.eta_min) / w.c0 + 1.0;

    CounterRng rng(cfg.seed);
    std::vector<RaySeed> seeds;
    for (int b = 1; b <= spec.state_dim; ++b)
        for (int r = 0; r < cfg.ray_count; ++r) {
            RaySeed seed;
            for (int d = 0; d < spec.space_dim; ++d) {
                const double margin = 0.05 * spec.domain.extent(d);
                seed.x[static_cast<std::size_t>(d)] =
                    rng.uniform(spec.domain.lower[d] + margin, spec.domain.upper[d] - margin);
            }
            Eigen::VectorXd p = rng.unit_vector(spec.space_dim);
            seed.p[0] = p(0);
            seed.p[1] = spec.space_dim == 2 ? p(1) : 0.0;
            seed.branch = b;
            seeds.push_back(seed);
        }
    std::vector<Ray> rays = trace_rays(spec, w, seeds, opt);

    CsvFile samples(ctx.path("rays.csv"),
                    {"ray", "branch", "sample", "s", "x1", "x2", "p1", "p2", "lambda", "eta"});
    CsvFile summary(ctx.path("rays_summary.csv"),
                    {"ray", "branch", "exited", "exit_time", "min_overlap", "ambiguous",
                     "momentum_out_of_range", "samples", "max_eta_slope"});
    double worst_slope = -std::numeric_limits<double>::infinity();
    int exited = 0;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        const Ray& ray = rays[i];
        double max_slope = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < ray.samples.size(); ++k) {
            const RaySample& a = ray.samples[k];
            samples.row({csv_number(i), csv_number(ray.branch), csv_number(k), csv_number(a.s),
                         csv_number(a.x[0]), csv_number(a.x[1]), csv_number(a.p[0]),
                         csv_number(a.p[1]), csv_number(a.lambda), csv_number(a.eta)});
            if (k > 0) {
                const RaySample& b = ray.samples[k - 1];
                if (a.s > b.s) max_slope = std::max(max_slope, (a.eta - b.eta) / (a.s - b.s));
            }
        }
        if (ray.exit_time) ++exited;
        worst_slope = std::max(worst_slope, max_slope);
        summary.row({csv_number(i), csv_number(ray.branch),
                     std::string(ray.exit_time ? "1" : "0"),
                     csv_number(ray.exit_time ? *ray.exit_time : -1.0),
                     csv_number(ray.min_overlap), std::string(ray.branch_ambiguous ? "1" : "0"),
                     std::string(ray.momentum_out_of_range ? "1" : "0"),
                     csv_number(ray.samples.size()), csv_number(max_slope)});
    }
    std::cout << "rays: traced " << rays.size() << " (" << exited << " exited within horizon "
              << fmt(opt.horizon) << ")\n";
    std::cout << "  max d(eta)/ds over all samples = " << fmt(worst_slope)
              << " (certified bound -c0 = " << fmt(-w.c0) << ")\n";
    if (worst_slope > -w.c0 + 1e-4) {
        std::cout << "invariant violated: eta fails to decay at the certified rate along a ray\n";
        return ctx.finish(kInvariantFailure);
    }
    return ctx.finish(kOk);
}

inline int cmd_simulate(CommandContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    Grid grid = build_grid(cfg.spec, cfg.cells, cfg.cfl);
    ScenarioTree tree{cfg.depth, cfg.horizon};
    SdeOperators ops = make_sde_operators(grid, tree);
    Eigen::VectorXd y0 = make_initial_state(grid, cfg.initial);
    AdaptedProcess none;
    AdaptedProcess y = solve_forward(ops, y0, none, none);

    bool finite = true;
    CsvFile moments(ctx.path("moments.csv"), {"level", "t", "mean_l2", "energy"});
    const double wl2 = std::sqrt(grid.cell_volume);
    for (int l = 0; l <= tree.depth; ++l) {
        Eigen::VectorXd mean = level_expectation(tree, y, l);
        double energy = 0.0;
        for (std::int64_t k = 0; k < tree.nodes_at(l); ++k) {
            const Eigen::VectorXd& yk = y.at(tree.node_id(l, k));
            if (!yk.allFinite()) finite = false;
            energy += tree.probability(l) * grid.cell_volume * yk.squaredNorm();
        }
        moments.row({csv_number(l), csv_number(l * tree.dt()), csv_number(wl2 * mean.norm()),
                     csv_number(energy)});
    }

    const std::int64_t rows = (tree.node_id(tree.depth, 0) + tree.num_leaves()) *
                              grid.ncells * grid.N();
    if (rows <= 5'000'000) {
        CsvFile sol(ctx.path("solution.csv"),
                    {"level", "path", "cell", "x1", "x2", "component", "value"});
        for (int l = 0; l <= tree.depth; ++l)
            for (std::int64_t k = 0; k < tree.nodes_at(l); ++k) {
                const std::int64_t id = tree.node_id(l, k);
                const Eigen::VectorXd& yk = y.at(id);
                const std::string path = tree.path_string(id);
                for (int c = 0; c < grid.ncells; ++c) {
                    auto x = grid.cell_center(c);
                    for (int comp = 0; comp < grid.N(); ++comp)
                        sol.row({csv_number(l), path, csv_number(c), csv_number(x[0]),
                                 csv_number(x[1]), csv_number(comp),
                                 csv_number(yk(c * grid.N() + comp))});
                }
            }
    } else {
        std::cout << "simulate: per-node dump skipped (" << rows
                  << " rows exceed the 5e6 limit); moments.csv written\n";
    }
    std::cout << "simulate: " << tree.num_leaves() << " scenarios, " << ops.n_sub
              << " transport substeps per noise period\n";
    if (!finite) {
        std::cout << "invariant violated: solution contains non-finite values\n";
        return ctx.finish(kInvariantFailure);
    }
    return ctx.finish(kOk);
}

inline int cmd_control(CommandContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    Grid grid = build_grid(cfg.spec, cfg.cells, cfg.cfl);
    ScenarioTree tree{cfg.depth, cfg.horizon};
    SdeOperators ops = make_sde_operators(grid, tree);
    ControlMap map(ops, map_options(cfg, grid));

    Eigen::VectorXd y0 = make_initial_state(grid, cfg.initial);
    Eigen::VectorXd free_state = map.free_response(y0);
    Eigen::VectorXd target = make_target(map, cfg.target, free_state, cfg.seed);

    SynthesisOptions sopts;
    sopts.tol = cfg.tol;
    sopts.max_iter = cfg.max_iter;
    sopts.stall_window = cfg.stall_window;
    auto [c, rep] = synthesize_control(map, y0, target, sopts);

    std::cout << "control: " << (rep.converged ? "converged" : "NOT converged") << " after "
              << rep.iterations << " iterations\n";
    std::cout << "  relative terminal residual = " << fmt(rep.residual, "%.3e") << " (tol "
              << fmt(cfg.tol, "%.1e") << ")\n";
    std::cout << "  control norm = " << fmt(rep.control_norm) << " (boundary "
              << fmt(rep.boundary_norm) << ", internal " << fmt(rep.internal_norm) << ")\n";
    std::cout << "  Gramian spectrum estimate from CG: sigma in [" << fmt(rep.sigma_min_estimate)
              << ", " << fmt(rep.sigma_max_estimate) << "]\n";

    {
        nlohmann::json rj = {{"converged", rep.converged},
                             {"iterations", rep.iterations},
                             {"residual", rep.residual},
                             {"target_norm", rep.target_norm},
                             {"control_norm", rep.control_norm},
                             {"boundary_norm", rep.boundary_norm},
                             {"internal_norm", rep.internal_norm},
                             {"sigma_max_estimate", rep.sigma_max_estimate},
                             {"sigma_min_estimate", rep.sigma_min_estimate}};
        std::ofstream out(ctx.path("control_report.json"), std::ios::binary);
        out << rj.dump(2) << '\n';
    }

    const int nu = grid.incoming_dim;
    if (nu > 0 && !c.u.values.empty()) {
        CsvFile ucsv(ctx.path("control_u.csv"), {"level", "path", "substep", "slot", "value"});
        for (int l = 0; l < tree.depth; ++l)
            for (std::int64_t k = 0; k < tree.nodes_at(l); ++k) {
                const std::int64_t id = tree.node_id(l, k);
                const std::string path = tree.path_string(id);
                const Eigen::VectorXd& u = c.u.at(id);
                for (int j = 0; j < ops.n_sub; ++j)
                    for (int slot = 0; slot < nu; ++slot)
                        ucsv.row({csv_number(l), path, csv_number(j), csv_number(slot),
                                  csv_number(u(j * nu + slot))});
            }
    }
    if (!c.v.values.empty()) {
        CsvFile vcsv(ctx.path("control_v.csv"), {"level", "path", "cell", "component", "value"});
        for (int l = 0; l < tree.depth; ++l)
            for (std::int64_t k = 0; k < tree.nodes_at(l); ++k) {
                const std::int64_t id = tree.node_id(l, k);
                const std::string path = tree.path_string(id);
                const Eigen::VectorXd& v = c.v.at(id);
                for (int cell = 0; cell < grid.ncells; ++cell)
                    for (int comp = 0; comp < grid.N(); ++comp)
                        vcsv.row({csv_number(l), path, csv_number(cell), csv_number(comp),
                                  csv_number(v(cell * grid.N() + comp))});
            }
    }
    {
        Eigen::VectorXd achieved = map.forward(c) + free_state;
        CsvFile tcsv(ctx.path("terminal.csv"),
                     {"leaf", "path", "cell", "component", "achieved", "target"});
        const auto nd = grid.state_dim_total();
        for (std::int64_t k = 0; k < map.num_leaves(); ++k) {
            const std::string path = tree.path_string(tree.node_id(tree.depth, k));
            for (int cell = 0; cell < grid.ncells; ++cell)
                for (int comp = 0; comp < grid.N(); ++comp) {
                    const auto idx = k * nd + cell * grid.N() + comp;
                    tcsv.row({csv_number(k), path, csv_number(cell), csv_number(comp),
                              csv_number(achieved(idx)), csv_number(target(idx))});
                }
        }
    }

    if (rep.converged) return ctx.finish(kOk);

    SpectrumOptions so;
    so.power_iters = cfg.power_iters;
    so.lanczos_iters = cfg.lanczos_iters;
    so.tol = cfg.spectrum_tol;
    so.seed = cfg.seed;
    SpectrumEstimate sp = observability_spectrum(map, so);
    std::cout << "  observability floor sigma_min = " << fmt(sp.sigma_min, "%.3e")
              << " (threshold " << fmt(cfg.sigma_threshold, "%.1e") << ")\n";
    if (sp.sigma_min < cfg.sigma_threshold) {
        std::cout << "verdict: target is not reachable at this horizon; the observability "
                     "spectrum collapses\n";
        return ctx.finish(kUncontrollable);
    }
    std::cout << "synthesis failed to converge despite a positive spectrum floor\n";
    return ctx.finish(kInvariantFailure);
}

inline int cmd_observability(CommandContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    Grid grid = build_grid(cfg.spec, cfg.cells, cfg.cfl);
    ScenarioTree tree{cfg.depth, cfg.horizon};
    SdeOperators ops = make_sde_operators(grid, tree);
    ControlMap map(ops, map_options(cfg, grid));

    SpectrumOptions so;
    so.power_iters = cfg.power_iters;
    so.lanczos_iters = cfg.lanczos_iters;
    so.tol = cfg.spectrum_tol;
    so.seed = cfg.seed;
    SpectrumEstimate e = observability_spectrum(map, so);

    std::cout << "observability: sigma_max = " << fmt(e.sigma_max, "%.6e")
              << ", sigma_min = " << fmt(e.sigma_min, "%.6e") << "\n";
    if (e.sigma_min > 0.0)
        std::cout << "  condition number = " << fmt(e.sigma_max / e.sigma_min, "%.3e") << "\n";
    std::cout << "  power iterations = " << e.power_iterations_used
              << ", Lanczos iterations = " << e.lanczos_iterations_used
              << (e.lanczos_breakdown ? " (exact invariant subspace found)" : "") << "\n";

    CsvFile csv(ctx.path("spectrum.csv"), {"sigma_max", "sigma_min", "power_iterations",
                                           "lanczos_iterations", "lanczos_breakdown"});
    csv.row({csv_number(e.sigma_max), csv_number(e.sigma_min),
             csv_number(e.power_iterations_used), csv_number(e.lanczos_iterations_used),
             std::string(e.lanczos_breakdown ? "1" : "0")});
    const bool finite = std::isfinite(e.sigma_max) && std::isfinite(e.sigma_min);
    if (!finite) std::cout << "invariant violated: spectrum estimate is not finite\n";
    return ctx.finish(finite ? kOk : kInvariantFailure);
}

inline int cmd_carleman(CommandContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    LinearEtaSearch s = search_linear_eta(cfg.spec);
    if (!s.found) {
        std::cout << "carleman: weight search failed; no certified eta available\n";
        return ctx.finish(kInvariantFailure);
    }
    const WeightCandidate& w = s.weight;
    const double T0 = minimal_time(w);
    Grid grid = build_grid(cfg.spec, cfg.cells, cfg.cfl);

    std::vector<double> horizons = cfg.horizons.empty() ? std::vector<double>{cfg.horizon}
                                                        : cfg.horizons;
    SweepOptions so;
    so.lambdas = cfg.lambdas;
    so.probe_directions = cfg.probes;
    so.seed = cfg.seed;
    so.map_options = map_options(cfg, grid);
    so.spectrum.power_iters = cfg.power_iters;
    so.spectrum.lanczos_iters = cfg.lanczos_iters;
    so.spectrum.tol = cfg.spectrum_tol;
    so.spectrum.seed = cfg.seed;
    std::vector<SweepRow> rows = observability_sweep(grid, cfg.depth, w, horizons, so);

    CsvFile csv(ctx.path("sweep.csv"),
                {"T", "lambda", "sigma_min", "weighted_ratio", "contraction_factor"});
    for (const SweepRow& r : rows)
        csv.row({csv_number(r.T), csv_number(r.lambda), csv_number(r.sigma_min),
                 csv_number(r.weighted_ratio), csv_number(r.contraction_factor)});

    std::cout << "carleman: T0 = " << fmt(T0) << ", swept " << horizons.size()
              << " horizon(s) x " << cfg.lambdas.size() << " lambda(s), " << cfg.probes
              << " probes each\n";
    for (double T : horizons) {
        const double lam = smallest_contracting_lambda(rows, T, cfg.contraction_threshold);
        if (std::isfinite(lam))
            std::cout << "  T = " << fmt(T) << ": weighted energy contracts (factor <= "
                      << fmt(cfg.contraction_threshold) << ") from lambda = " << fmt(lam) << "\n";
        else
            std::cout << "  T = " << fmt(T) << ": no lambda in the sweep contracts below "
                      << fmt(cfg.contraction_threshold) << "\n";
    }

    // Residual of the discrete weighted energy identity at this resolution,
    // probed with a smooth random adapted field.
    ScenarioTree tree{cfg.depth, cfg.horizon};
    SdeOperators ops = make_sde_operators(grid, tree);
    AdaptedProcess h = random_smooth_process(grid, tree, tree.depth, cfg.seed ^ 0x1d7caULL);
    CsvFile icsv(ctx.path("identity.csv"), {"lambda", "residual"});
    for (double lambda : cfg.lambdas) {
        const double beta = cfg.horizon > T0 ? choose_beta(w.c0, cfg.horizon, T0) : 0.5 * w.c0;
        CarlemanWeight cw = make_carleman_weight(w, beta, lambda);
        const double res = weighted_identity_residual(ops, cw, h);
        icsv.row({csv_number(lambda), csv_number(res)});
    }
    return ctx.finish(kOk);
}

inline int cmd_report(CommandContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    nlohmann::json rj;
    bool ok = true;

    SpecValidation v = validate_spec(cfg.spec);
    rj["system"] = cfg.spec.label;
    rj["validate"] = {{"ok", v.ok}, {"max_asymmetry", v.max_asymmetry}};
    std::cout << "validate: " << (v.ok ? "ok" : "FAILED") << "\n";
    if (!v.ok) {
        for (const std::string& m : v.failures) std::cout << "invariant violated: " << m << "\n";
        ok = false;
    }

    LinearEtaSearch s = search_linear_eta(cfg.spec);
    rj["condition"] = {{"certified", s.found}};
    if (s.found) {
        const double T0 = minimal_time(s.weight);
        rj["condition"]["c0"] = s.weight.c0;
        rj["condition"]["T0"] = T0;
        std::cout << "condition: certified, c0 = " << fmt(s.weight.c0) << ", T0 = " << fmt(T0)
                  << "\n";
    } else {
        std::cout << "condition: not certified (informational)\n";
    }

    Grid grid = build_grid(cfg.spec, cfg.cells, cfg.cfl);
    ScenarioTree tree{cfg.depth, cfg.horizon};
    SdeOperators ops = make_sde_operators(grid, tree);

    {
        CounterRng rng(cfg.seed ^ 0xd0a11ULL);
        Eigen::VectorXd y0 = rng.normal_vector(static_cast<int>(grid.state_dim_total()));
        AdaptedProcess u(tree, tree.depth - 1, boundary_value_dim(ops));
        AdaptedProcess vv(tree, tree.depth - 1, static_cast<int>(grid.state_dim_total()));
        for (auto& x : u.values) x = rng.normal_vector(static_cast<int>(x.size()));
        for (auto& x : vv.values) x = rng.normal_vector(static_cast<int>(x.size()));
        std::vector<Eigen::VectorXd> zT;
        for (std::int64_t k = 0; k < tree.num_leaves(); ++k)
            zT.push_back(rng.normal_vector(static_cast<int>(grid.state_dim_total())));
        const double dres = duality_residual(ops, y0, u, vv, zT);
        rj["duality_residual"] = dres;
        std::cout << "duality residual (random data) = " << fmt(dres, "%.3e") << "\n";
        if (!(dres <= 1e-8)) {
            std::cout << "invariant violated: forward/backward duality exceeds 1e-8\n";
            ok = false;
        }
    }

    if (cfg.spec.B3.is_zero()) {
        CounterRng rng(cfg.seed ^ 0x3eaULL);
        Eigen::VectorXd y0 = make_initial_state(grid, cfg.initial);
        AdaptedProcess vv(tree, tree.depth - 1, static_cast<int>(grid.state_dim_total()));
        for (auto& x : vv.values) x = rng.normal_vector(static_cast<int>(x.size()));
        const double mres = mean_invariance_probe(ops, y0, vv);
        rj["mean_invariance"] = mres;
        std::cout << "mean invariance of noise-channel control = " << fmt(mres, "%.3e") << "\n";
        if (!(mres <= 1e-10)) {
            std::cout << "invariant violated: noise-channel control shifts the mean\n";
            ok = false;
        }
    }

    {
        ControlMap map(ops, map_options(cfg, grid));
        SpectrumOptions so;
        so.power_iters = cfg.power_iters;
        so.lanczos_iters = cfg.lanczos_iters;
        so.tol = cfg.spectrum_tol;
        so.seed = cfg.seed;
        SpectrumEstimate e = observability_spectrum(map, so);
        rj["spectrum"] = {{"sigma_max", e.sigma_max}, {"sigma_min", e.sigma_min}};
        std::cout << "observability spectrum: [" << fmt(e.sigma_min, "%.3e") << ", "
                  << fmt(e.sigma_max, "%.3e") << "]\n";
    }

    if (s.found) {
        SweepOptions so;
        so.lambdas = cfg.lambdas;
        so.probe_directions = cfg.probes;
        so.seed = cfg.seed;
        so.map_options = map_options(cfg, grid);
        std::vector<SweepRow> rows =
            observability_sweep(grid, cfg.depth, s.weight, {cfg.horizon}, so);
        const double lam = smallest_contracting_lambda(rows, cfg.horizon,
                                                       cfg.contraction_threshold);
        rj["carleman"] = nlohmann::json::array();
        for (const SweepRow& r : rows)
            rj["carleman"].push_back({{"lambda", r.lambda},
                                      {"sigma_min", r.sigma_min},
                                      {"weighted_ratio", r.weighted_ratio},
                                      {"contraction_factor", r.contraction_factor}});
        if (std::isfinite(lam)) {
            rj["smallest_contracting_lambda"] = lam;
            std::cout << "weighted energy contracts from lambda = " << fmt(lam) << "\n";
        }
    }

    {
        std::ofstream out(ctx.path("report.json"), std::ios::binary);
        out << rj.dump(2) << '\n';
    }
    std::cout << "report: " << (ok ? "all invariants hold" : "INVARIANT FAILURES above") << "\n";
    return ctx.finish(ok ? kOk : kInvariantFailure);
}

// ---------------------------------------------------------------------------
// Argument handling.
// ---------------------------------------------------------------------------

/// Options every subcommand accepts; values override the configuration file.
struct CommonArgs {
    std::string config_path;
    std::string system_label;
    std::string out_dir;
    std::vector<int> cells;
    double cfl = 0.0;
    int depth = 0;
    double horizon = 0.0;
    double tol = 0.0;
    std::uint64_t seed = 0;
    CLI::App* sub = nullptr;

    void attach(CLI::App* s) {
        sub = s;
        s->add_option("--config", config_path, "run configuration (JSON)");
        s->add_option("--system", system_label, "registry system label");
        s->add_option("--cells", cells, "grid cells per dimension")->expected(1, 2);
        s->add_option("--cfl", cfl, "CFL number in (0, 1]");
        s->add_option("--depth", depth, "scenario tree depth");
        s->add_option("--horizon,--T", horizon, "time horizon");
        s->add_option("--tol", tol, "control synthesis tolerance");
        s->add_option("--seed", seed, "random seed");
        s->add_option("--out", out_dir, "output directory");
    }

    /// Merges the configuration file with command-line overrides, then runs
    /// the full validation pass over the merged document.
    RunConfig resolve() const {
        nlohmann::json j = nlohmann::json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw ConfigError("config: cannot open '" + config_path + "'");
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError("config: parse failure in '" + config_path + "': " + e.what());
            }
        }
        if (sub->count("--system")) j["system"] = {{"label", system_label}};
        if (sub->count("--cells")) j["grid"]["cells"] = cells;
        if (sub->count("--cfl")) j["grid"]["cfl"] = cfl;
        if (sub->count("--depth")) j["tree"]["depth"] = depth;
        if (sub->count("--horizon")) j["tree"]["horizon"] = horizon;
        if (sub->count("--tol")) j["control"]["tol"] = tol;
        if (sub->count("--seed")) j["seed"] = seed;
        if (sub->count("--out")) j["output_dir"] = out_dir;
        return parse_run_config(j);
    }
};

}  // namespace detail

/// Entry point shared by the binary and the test-suite; argv[0] is the
/// program name.  Returns one of the ExitCode values.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"numerical toolkit for boundary/internal controllability of stochastic "
                 "symmetric hyperbolic systems"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    struct Entry {
        const char* name;
        const char* help;
        int (*body)(detail::CommandContext&);
    };
    const Entry entries[] = {
        {"validate", "check structural and symmetry invariants of a system", detail::cmd_validate},
        {"check-condition", "search and certify a linear weight function", detail::cmd_check_condition},
        {"rays", "trace characteristic rays against the certified weight", detail::cmd_rays},
        {"simulate", "run the forward scenario-tree solver", detail::cmd_simulate},
        {"control", "synthesize boundary/internal controls for a terminal target", detail::cmd_control},
        {"observability", "estimate the observability spectrum of the control map", detail::cmd_observability},
        {"carleman", "sweep weighted observability diagnostics over lambda", detail::cmd_carleman},
        {"report", "one-stop diagnostic report for a system", detail::cmd_report},
    };

    std::vector<detail::CommonArgs> args(std::size(entries));
    const Entry* chosen = nullptr;
    const detail::CommonArgs* chosen_args = nullptr;
    for (std::size_t i = 0; i < std::size(entries); ++i) {
        CLI::App* sub = app.add_subcommand(entries[i].name, entries[i].help);
        args[i].attach(sub);
        sub->callback([&, i] {
            chosen = &entries[i];
            chosen_args = &args[i];
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }
    if (!chosen) return kConfigError;

    std::string command_line = "hypctl";
    for (int i = 1; i < argc; ++i) command_line += std::string(" ") + argv[i];

    try {
        detail::CommandContext ctx;
        ctx.cfg = chosen_args->resolve();
        ctx.command_line = command_line;
        std::filesystem::create_directories(ctx.cfg.output_dir);
        return chosen->body(ctx);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvariantFailure;
    }
}

/// Convenience overload for tests: arguments without the program name.
inline int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("hypctl");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace hypctl::cli
