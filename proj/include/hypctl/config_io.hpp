#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "hypctl/registry.hpp"
#include "hypctl/system.hpp"
#include "hypctl/version.hpp"

namespace hypctl {

/// Raised for malformed, inconsistent, or unrecognized configuration input.
/// Callers translate this into the dedicated configuration-error exit code.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Initial state on the grid: a named profile plus its shape parameters.
struct InitialSpec {
    std::string kind = "sine";  ///< zero | constant | sine | bump
    double amplitude = 1.0;
    int mode = 1;       ///< sine frequency (half-waves across the domain).
    int component = 0;  ///< state component carrying the profile.
    std::array<double, 2> center{0.5, 0.5};
    double width = 0.1;
};

/// Terminal target for control synthesis.  "low-mode-random" draws one
/// coefficient per scenario leaf and per retained sine mode, so the target is
/// genuinely adapted to the driving noise while staying grid-resolvable.
struct TargetSpec {
    std::string kind = "zero";  ///< zero | free | low-mode-random | bump
    int modes = 3;
    double amplitude = 1.0;
    int component = 0;
    std::array<double, 2> center{0.5, 0.5};
    double width = 0.1;
};

/// Axis-aligned box restricting where the distributed control may act.
struct SupportBox {
    std::array<double, 2> lower{0.0, 0.0};
    std::array<double, 2> upper{1.0, 1.0};
};

/// Complete run description: system, discretization, and per-command options.
/// Every field has a usable default so configuration files may be partial;
/// serialization always emits the full effective state.
struct RunConfig {
    std::string system_label = "scalar-transport";
    std::optional<nlohmann::json> custom_system;  ///< canonical echo of an inline system block.
    SystemSpec spec;                              ///< resolved from label or custom block.

    std::array<int, 2> cells{32, 32};
    double cfl = 0.9;

    int depth = 4;
    double horizon = 1.0;

    InitialSpec initial;

    bool use_boundary = true;
    bool use_internal = true;
    bool zero_mean_internal = false;
    std::optional<SupportBox> support;
    double tol = 1e-9;
    int max_iter = 5000;
    int stall_window = 250;
    TargetSpec target;
    double sigma_threshold = 1e-6;

    int power_iters = 200;
    int lanczos_iters = 100;
    double spectrum_tol = 1e-11;

    std::vector<double> lambdas{0.5, 1.0, 2.0, 4.0, 8.0};
    std::vector<double> horizons;  ///< sweep horizons; empty means {horizon}.
    int probes = 20;
    double contraction_threshold = 0.55;

    int ray_count = 20;
    double ray_dt = 1e-3;
    std::optional<double> ray_horizon;

    std::uint64_t seed = 1234;
    std::string output_dir = "out";
};

namespace detail {

using nlohmann::json;

inline void require_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
}

/// Rejects any key not in the allow-list, naming the offending key and its
/// section so typos fail loudly instead of being ignored.
inline void check_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
    require_object(j, where);
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
T fetch(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

inline std::array<double, 2> fetch_point(const json& j, const char* key,
                                         std::array<double, 2> fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_array() || v.empty() || v.size() > 2)
        throw ConfigError(std::string("config: '") + key + "' must be an array of 1 or 2 numbers");
    std::array<double, 2> out = fallback;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i].get<double>();
    return out;
}

/// Parses one matrix entry: a bare number is a constant, an array is the
/// coefficient vector over the canonical monomial basis of the given degree.
inline Polynomial parse_entry(const json& e, int vars, int degree, const std::string& where) {
    if (e.is_number()) return Polynomial::constant(vars, e.get<double>());
    if (!e.is_array())
        throw ConfigError("config: entry in " + where + " must be a number or coefficient array");
    std::vector<double> coeffs;
    coeffs.reserve(e.size());
    for (const json& c : e) {
        if (!c.is_number())
            throw ConfigError("config: coefficient array in " + where + " must hold numbers");
        coeffs.push_back(c.get<double>());
    }
    const std::size_t expected = monomial_basis(vars, degree).size();
    if (coeffs.size() != expected)
        throw ConfigError("config: entry in " + where + " has " + std::to_string(coeffs.size()) +
                          " coefficients, expected " + std::to_string(expected) +
                          " for degree " + std::to_string(degree));
    return Polynomial::from_coefficients(vars, degree, coeffs);
}

inline MatrixPolyField parse_matrix(const json& m, int n, int vars, int degree,
                                    const std::string& where) {
    if (!m.is_array() || static_cast<int>(m.size()) != n)
        throw ConfigError("config: " + where + " must be an array of " + std::to_string(n) +
                          " rows");
    MatrixPolyField f(n, n, vars, degree);
    for (int i = 0; i < n; ++i) {
        const json& row = m[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<int>(row.size()) != n)
            throw ConfigError("config: row " + std::to_string(i) + " of " + where + " must have " +
                              std::to_string(n) + " entries");
        for (int j = 0; j < n; ++j)
            f.at(i, j) = parse_entry(row[static_cast<std::size_t>(j)], vars, degree, where);
    }
    return f;
}

inline SystemSpec parse_custom_system(const json& c) {
    check_keys(c, "system.custom",
               {"label", "state_dim", "space_dim", "domain", "degree", "A", "B1", "B2", "B3"});
    SystemSpec spec;
    spec.label = fetch<std::string>(c, "label", "custom");
    spec.state_dim = fetch<int>(c, "state_dim", 1);
    spec.space_dim = fetch<int>(c, "space_dim", 1);
    if (spec.state_dim < 1) throw ConfigError("config: state_dim must be positive");
    if (spec.space_dim < 1 || spec.space_dim > 2)
        throw ConfigError("config: space_dim must be 1 or 2");
    spec.domain.dim = spec.space_dim;
    if (c.contains("domain")) {
        const json& d = c.at("domain");
        check_keys(d, "system.custom.domain", {"lower", "upper"});
        spec.domain.lower = fetch_point(d, "lower", {0.0, 0.0});
        spec.domain.upper = fetch_point(d, "upper", {1.0, 1.0});
    }
    const int degree = fetch<int>(c, "degree", 0);
    if (degree < 0) throw ConfigError("config: degree must be non-negative");
    const int n = spec.state_dim;
    const int vars_flux = spec.space_dim;
    const int vars_coeff = spec.space_dim + 1;  // coefficients may also depend on time.
    if (!c.contains("A")) throw ConfigError("config: system.custom requires 'A'");
    const json& a = c.at("A");
    if (!a.is_array() || static_cast<int>(a.size()) != spec.space_dim)
        throw ConfigError("config: 'A' must hold one matrix per space dimension");
    for (int d = 0; d < spec.space_dim; ++d)
        spec.A.push_back(parse_matrix(a[static_cast<std::size_t>(d)], n, vars_flux, degree,
                                      "A[" + std::to_string(d) + "]"));
    for (const char* name : {"B1", "B2", "B3"}) {
        MatrixPolyField b = c.contains(name)
                                ? parse_matrix(c.at(name), n, vars_coeff, degree, name)
                                : MatrixPolyField::zero(n, n, vars_coeff);
        if (std::string(name) == "B1") spec.B1 = std::move(b);
        else if (std::string(name) == "B2") spec.B2 = std::move(b);
        else spec.B3 = std::move(b);
    }
    spec.validate_shapes();
    return spec;
}

}  // namespace detail

/// Parses a configuration object, filling defaults for absent keys and
/// rejecting unknown ones anywhere in the document.
inline RunConfig parse_run_config(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::fetch;
    using nlohmann::json;
    check_keys(j, "top level",
               {"system", "grid", "tree", "initial", "control", "observability", "carleman",
                "rays", "seed", "output_dir"});
    RunConfig cfg;

    if (j.contains("system")) {
        const json& s = j.at("system");
        check_keys(s, "system", {"label", "custom"});
        if (s.contains("label") && s.contains("custom"))
            throw ConfigError("config: give either system.label or system.custom, not both");
        if (s.contains("custom")) {
            cfg.custom_system = s.at("custom");
            cfg.spec = detail::parse_custom_system(*cfg.custom_system);
            cfg.system_label = cfg.spec.label;
        } else {
            cfg.system_label = fetch<std::string>(s, "label", cfg.system_label);
        }
    }
    if (!cfg.custom_system) {
        try {
            cfg.spec = make_system(cfg.system_label);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }

    if (j.contains("grid")) {
        const json& g = j.at("grid");
        check_keys(g, "grid", {"cells", "cfl"});
        if (g.contains("cells")) {
            const json& c = g.at("cells");
            if (c.is_number_integer()) {
                cfg.cells = {c.get<int>(), c.get<int>()};
            } else if (c.is_array() && !c.empty() && c.size() <= 2) {
                cfg.cells[0] = c[0].get<int>();
                cfg.cells[1] = c.size() > 1 ? c[1].get<int>() : c[0].get<int>();
            } else {
                throw ConfigError("config: grid.cells must be an integer or array of 1 or 2");
            }
        }
        cfg.cfl = fetch<double>(g, "cfl", cfg.cfl);
        if (!(cfg.cfl > 0.0) || cfg.cfl > 1.0)
            throw ConfigError("config: grid.cfl must lie in (0, 1]");
    }
    if (cfg.cells[0] < 1 || cfg.cells[1] < 1)
        throw ConfigError("config: grid.cells must be positive");

    if (j.contains("tree")) {
        const json& t = j.at("tree");
        check_keys(t, "tree", {"depth", "horizon"});
        cfg.depth = fetch<int>(t, "depth", cfg.depth);
        cfg.horizon = fetch<double>(t, "horizon", cfg.horizon);
    }
    if (cfg.depth < 1 || cfg.depth > 24)
        throw ConfigError("config: tree.depth must lie in [1, 24]");
    if (!(cfg.horizon > 0.0)) throw ConfigError("config: tree.horizon must be positive");

    if (j.contains("initial")) {
        const json& i = j.at("initial");
        check_keys(i, "initial", {"kind", "amplitude", "mode", "component", "center", "width"});
        cfg.initial.kind = fetch<std::string>(i, "kind", cfg.initial.kind);
        cfg.initial.amplitude = fetch<double>(i, "amplitude", cfg.initial.amplitude);
        cfg.initial.mode = fetch<int>(i, "mode", cfg.initial.mode);
        cfg.initial.component = fetch<int>(i, "component", cfg.initial.component);
        cfg.initial.center = detail::fetch_point(i, "center", cfg.initial.center);
        cfg.initial.width = fetch<double>(i, "width", cfg.initial.width);
        if (cfg.initial.kind != "zero" && cfg.initial.kind != "constant" &&
            cfg.initial.kind != "sine" && cfg.initial.kind != "bump")
            throw ConfigError("config: initial.kind must be zero, constant, sine, or bump");
    }

    if (j.contains("control")) {
        const json& c = j.at("control");
        check_keys(c, "control",
                   {"use_boundary", "use_internal", "zero_mean_internal", "support", "tol",
                    "max_iter", "stall_window", "target", "sigma_threshold"});
        cfg.use_boundary = fetch<bool>(c, "use_boundary", cfg.use_boundary);
        cfg.use_internal = fetch<bool>(c, "use_internal", cfg.use_internal);
        cfg.zero_mean_internal = fetch<bool>(c, "zero_mean_internal", cfg.zero_mean_internal);
        if (c.contains("support")) {
            const json& s = c.at("support");
            check_keys(s, "control.support", {"lower", "upper"});
            SupportBox box;
            box.lower = detail::fetch_point(s, "lower", box.lower);
            box.upper = detail::fetch_point(s, "upper", box.upper);
            cfg.support = box;
        }
        cfg.tol = fetch<double>(c, "tol", cfg.tol);
        cfg.max_iter = fetch<int>(c, "max_iter", cfg.max_iter);
        cfg.stall_window = fetch<int>(c, "stall_window", cfg.stall_window);
        cfg.sigma_threshold = fetch<double>(c, "sigma_threshold", cfg.sigma_threshold);
        if (c.contains("target")) {
            const json& t = c.at("target");
            check_keys(t, "control.target",
                       {"kind", "modes", "amplitude", "component", "center", "width"});
            cfg.target.kind = fetch<std::string>(t, "kind", cfg.target.kind);
            cfg.target.modes = fetch<int>(t, "modes", cfg.target.modes);
            cfg.target.amplitude = fetch<double>(t, "amplitude", cfg.target.amplitude);
            cfg.target.component = fetch<int>(t, "component", cfg.target.component);
            cfg.target.center = detail::fetch_point(t, "center", cfg.target.center);
            cfg.target.width = fetch<double>(t, "width", cfg.target.width);
            if (cfg.target.kind != "zero" && cfg.target.kind != "free" &&
                cfg.target.kind != "low-mode-random" && cfg.target.kind != "bump")
                throw ConfigError(
                    "config: control.target.kind must be zero, free, low-mode-random, or bump");
        }
        if (!(cfg.tol > 0.0)) throw ConfigError("config: control.tol must be positive");
        if (cfg.max_iter < 1) throw ConfigError("config: control.max_iter must be positive");
    }

    if (j.contains("observability")) {
        const json& o = j.at("observability");
        check_keys(o, "observability", {"power_iters", "lanczos_iters", "tol"});
        cfg.power_iters = fetch<int>(o, "power_iters", cfg.power_iters);
        cfg.lanczos_iters = fetch<int>(o, "lanczos_iters", cfg.lanczos_iters);
        cfg.spectrum_tol = fetch<double>(o, "tol", cfg.spectrum_tol);
    }

    if (j.contains("carleman")) {
        const json& c = j.at("carleman");
        check_keys(c, "carleman",
                   {"lambdas", "horizons", "probes", "contraction_threshold"});
        cfg.lambdas = fetch<std::vector<double>>(c, "lambdas", cfg.lambdas);
        cfg.horizons = fetch<std::vector<double>>(c, "horizons", cfg.horizons);
        cfg.probes = fetch<int>(c, "probes", cfg.probes);
        cfg.contraction_threshold =
            fetch<double>(c, "contraction_threshold", cfg.contraction_threshold);
        if (cfg.lambdas.empty()) throw ConfigError("config: carleman.lambdas must be non-empty");
        if (cfg.probes < 1) throw ConfigError("config: carleman.probes must be positive");
    }

    if (j.contains("rays")) {
        const json& r = j.at("rays");
        check_keys(r, "rays", {"count", "dt", "horizon"});
        cfg.ray_count = fetch<int>(r, "count", cfg.ray_count);
        cfg.ray_dt = fetch<double>(r, "dt", cfg.ray_dt);
        if (r.contains("horizon")) cfg.ray_horizon = r.at("horizon").get<double>();
        if (cfg.ray_count < 1) throw ConfigError("config: rays.count must be positive");
        if (!(cfg.ray_dt > 0.0)) throw ConfigError("config: rays.dt must be positive");
    }

    cfg.seed = fetch<std::uint64_t>(j, "seed", cfg.seed);
    cfg.output_dir = fetch<std::string>(j, "output_dir", cfg.output_dir);
    if (cfg.output_dir.empty()) throw ConfigError("config: output_dir must be non-empty");
    return cfg;
}

/// Serializes the complete effective configuration.  Parsing the result
/// reproduces the configuration exactly, including floating-point values.
inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    if (cfg.custom_system)
        j["system"] = {{"custom", *cfg.custom_system}};
    else
        j["system"] = {{"label", cfg.system_label}};
    j["grid"] = {{"cells", {cfg.cells[0], cfg.cells[1]}}, {"cfl", cfg.cfl}};
    j["tree"] = {{"depth", cfg.depth}, {"horizon", cfg.horizon}};
    j["initial"] = {{"kind", cfg.initial.kind},
                    {"amplitude", cfg.initial.amplitude},
                    {"mode", cfg.initial.mode},
                    {"component", cfg.initial.component},
                    {"center", {cfg.initial.center[0], cfg.initial.center[1]}},
                    {"width", cfg.initial.width}};
    nlohmann::json control = {{"use_boundary", cfg.use_boundary},
                              {"use_internal", cfg.use_internal},
                              {"zero_mean_internal", cfg.zero_mean_internal},
                              {"tol", cfg.tol},
                              {"max_iter", cfg.max_iter},
                              {"stall_window", cfg.stall_window},
                              {"sigma_threshold", cfg.sigma_threshold},
                              {"target",
                               {{"kind", cfg.target.kind},
                                {"modes", cfg.target.modes},
                                {"amplitude", cfg.target.amplitude},
                                {"component", cfg.target.component},
                                {"center", {cfg.target.center[0], cfg.target.center[1]}},
                                {"width", cfg.target.width}}}};
    if (cfg.support)
        control["support"] = {{"lower", {cfg.support->lower[0], cfg.support->lower[1]}},
                              {"upper", {cfg.support->upper[0], cfg.support->upper[1]}}};
    j["control"] = std::move(control);
    j["observability"] = {{"power_iters", cfg.power_iters},
                          {"lanczos_iters", cfg.lanczos_iters},
                          {"tol", cfg.spectrum_tol}};
    j["carleman"] = {{"lambdas", cfg.lambdas},
                     {"horizons", cfg.horizons},
                     {"probes", cfg.probes},
                     {"contraction_threshold", cfg.contraction_threshold}};
    nlohmann::json rays = {{"count", cfg.ray_count}, {"dt", cfg.ray_dt}};
    if (cfg.ray_horizon) rays["horizon"] = *cfg.ray_horizon;
    j["rays"] = std::move(rays);
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    return j;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: parse failure in '" + path + "': " + e.what());
    }
    return parse_run_config(j);
}

inline void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("config: cannot open '" + path + "' for writing");
    out << run_config_to_json(cfg).dump(2) << '\n';
}

/// Writes the run manifest: tool version, invoked command, effective
/// configuration, produced files, and elapsed wall time.
inline void write_manifest(const std::string& path, const std::string& command,
                           const RunConfig& cfg, double wall_seconds,
                           const std::vector<std::string>& outputs) {
    nlohmann::json m = {{"version", kVersion},
                        {"command", command},
                        {"wall_time_seconds", wall_seconds},
                        {"config", run_config_to_json(cfg)},
                        {"outputs", outputs}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("manifest: cannot open '" + path + "' for writing");
    out << m.dump(2) << '\n';
}

}  // namespace hypctl
