#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypctl/control.hpp"
#include "hypctl/geometry.hpp"
#include "hypctl/solver.hpp"

namespace hypctl {

/// Exponential space-time weight theta = exp(lambda*(beta*t + eta(x))) built
/// on a certified decay potential eta.
struct CarlemanWeight {
  WeightCandidate eta;
  double beta = 0.0;    ///< time slope, must satisfy 0 < beta < c0.
  double lambda = 1.0;  ///< weight strength, >= 0 (0 reduces to the plain energy identity).

  double phi(double t, std::span<const double> x) const { return beta * t + eta.eta.eval(x); }
  double theta(double t, std::span<const double> x) const { return std::exp(lambda * phi(t, x)); }
};

/// Canonical time slope beta = 2*c0*T0/(T + T0), the midpoint (in harmonic
/// scale) of the admissible window. Asserts the two inequalities the choice
/// is designed to satisfy: beta < c0 and (eta_max - eta_min)/beta < T.
inline double choose_beta(double c0, double T, double T0) {
  if (!(c0 > 0) || !(T0 > 0)) throw std::invalid_argument("choose_beta: c0 and T0 must be positive");
  if (!(T > T0)) throw std::invalid_argument("choose_beta: requires T > T0");
  const double beta = 2.0 * c0 * T0 / (T + T0);
  if (!(beta < c0)) throw std::logic_error("choose_beta: beta < c0 violated");
  // eta_max - eta_min = c0*T0 by the definition of the minimal time.
  if (!(c0 * T0 / beta < T)) throw std::logic_error("choose_beta: range/beta < T violated");
  return beta;
}

inline CarlemanWeight make_carleman_weight(const WeightCandidate& eta, double beta, double lambda) {
  if (!eta.certified) throw std::invalid_argument("make_carleman_weight: weight not certified");
  if (!(beta > 0) || !(beta < eta.c0))
    throw std::invalid_argument("make_carleman_weight: beta must lie in (0, c0)");
  if (!(lambda >= 0)) throw std::invalid_argument("make_carleman_weight: lambda must be >= 0");
  return CarlemanWeight{eta, beta, lambda};
}

namespace detail {

/// Per-cell static data for identity evaluation: coefficient matrices, their
/// divergence, the weight gradient coupling, and boundary flux matrices.
struct IdentityCache {
  std::vector<Eigen::MatrixXd> A;        ///< cell-major, then direction-major blocks.
  std::vector<Eigen::MatrixXd> div_A;    ///< sum_i dA_i/dx_i per cell.
  std::vector<Eigen::MatrixXd> order;    ///< sum_i A_i eta_xi + beta I per cell.
  std::vector<Eigen::MatrixXd> face_flux;  ///< outward sum nu_i A_i per boundary entry.
  std::vector<double> eta_val;           ///< eta at cell centers.
};

inline IdentityCache build_identity_cache(const Grid& g, const CarlemanWeight& cw) {
  const SystemSpec& spec = g.spec;
  const int N = spec.state_dim;
  IdentityCache cache;
  std::vector<Polynomial> eta_grad;
  for (int d = 0; d < g.dim; ++d) eta_grad.push_back(cw.eta.eta.derivative(d));
  std::vector<MatrixPolyField> dA;
  for (int d = 0; d < g.dim; ++d) dA.push_back(spec.A[static_cast<std::size_t>(d)].derivative(d));
  cache.A.resize(static_cast<std::size_t>(g.ncells * g.dim));
  cache.div_A.resize(static_cast<std::size_t>(g.ncells));
  cache.order.resize(static_cast<std::size_t>(g.ncells));
  cache.eta_val.resize(static_cast<std::size_t>(g.ncells));
  for (int c = 0; c < g.ncells; ++c) {
    auto xc = g.cell_center(c);
    std::span<const double> x(xc.data(), static_cast<std::size_t>(g.dim));
    Eigen::MatrixXd div = Eigen::MatrixXd::Zero(N, N);
    Eigen::MatrixXd ord = cw.beta * Eigen::MatrixXd::Identity(N, N);
    for (int d = 0; d < g.dim; ++d) {
      Eigen::MatrixXd Ad = spec.A[static_cast<std::size_t>(d)].eval(x);
      Ad = 0.5 * (Ad + Ad.transpose()).eval();
      cache.A[static_cast<std::size_t>(c * g.dim + d)] = Ad;
      div += dA[static_cast<std::size_t>(d)].eval(x);
      ord += eta_grad[static_cast<std::size_t>(d)].eval(x) * Ad;
    }
    cache.div_A[static_cast<std::size_t>(c)] = 0.5 * (div + div.transpose()).eval();
    cache.order[static_cast<std::size_t>(c)] = 0.5 * (ord + ord.transpose()).eval();
    cache.eta_val[static_cast<std::size_t>(c)] = cw.eta.eta.eval(x);
  }
  for (const FaceInfo& fi : g.faces) {
    auto nu = face_normal(fi.face);
    for (const BoundaryCell& bc : fi.cells) {
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(N, N);
      for (int d = 0; d < g.dim; ++d)
        m += nu[static_cast<std::size_t>(d)] * cache.A[static_cast<std::size_t>(bc.cell * g.dim + d)];
      cache.face_flux.push_back(0.5 * (m + m.transpose()).eval());
    }
  }
  return cache;
}

/// Centered spatial difference of the N-vector field h in direction d at cell
/// (one-sided at the domain boundary).
inline Eigen::VectorXd centered_diff(const Grid& g, const Eigen::VectorXd& h, int cell, int d) {
  const int N = g.N();
  const int J0 = g.cells[0];
  int ix = cell % J0, iy = cell / J0;
  int lo_idx = d == 0 ? ix : iy;
  const int n_d = g.cells[static_cast<std::size_t>(d)];
  const double hd = g.h[static_cast<std::size_t>(d)];
  auto at = [&](int i) {
    int cx = d == 0 ? i : ix, cy = d == 0 ? iy : i;
    return h.segment((g.dim == 1 ? cx : cy * J0 + cx) * N, N);
  };
  if (lo_idx == 0) return (at(1) - at(0)) / hd;
  if (lo_idx == n_d - 1) return (at(lo_idx) - at(lo_idx - 1)) / hd;
  return (at(lo_idx + 1) - at(lo_idx - 1)) / (2.0 * hd);
}

}  // namespace detail

/// Named magnitudes of the discrete weighted-identity evaluation, for
/// reporting and for forming a scale-aware relative residual.
struct WeightedIdentityTerms {
  double lhs = 0.0;         ///< E sum 2 theta <w, dh + sum A_i h_xi dt>.
  double boundary = 0.0;    ///< boundary flux of <w, (sum nu_i A_i) w>.
  double energy = 0.0;      ///< E d|w|^2 summed over steps.
  double quad_var = 0.0;    ///< exact Ito correction -theta^2 <dh,dh>.
  double coeff_div = 0.0;   ///< -<w, (sum dA_i/dx_i) w>.
  double order_term = 0.0;  ///< -2 lambda <w, (sum A_i eta_xi + beta) w>.
  double residual = 0.0;    ///< |lhs - rhs| / (sum of absolute term magnitudes).

  double rhs() const { return boundary + energy + quad_var + coeff_div + order_term; }
};

/// Evaluates both sides of the weighted Ito identity for w = theta*h along a
/// tree trajectory h (levels 0..M): time increments from the tree, the
/// quadratic variation exactly from sibling differences, space derivatives by
/// centered differences, the boundary term from face traces, and expectations
/// by node probabilities. The residual is O(dt + h) for trajectories produced
/// by the solvers.
inline WeightedIdentityTerms weighted_identity_terms(const SdeOperators& ops,
                                                     const CarlemanWeight& cw,
                                                     const AdaptedProcess& h) {
  const Grid& g = *ops.grid;
  const ScenarioTree& tr = ops.tree;
  const int N = g.N();
  if (h.max_level < tr.depth)
    throw std::invalid_argument("weighted_identity_terms: trajectory must cover all levels");
  detail::IdentityCache cache = detail::build_identity_cache(g, cw);
  const double dt = tr.dt();
  const double vol = g.cell_volume;
  WeightedIdentityTerms out;

  auto theta_at = [&](int level, int cell) {
    return std::exp(cw.lambda * (cw.beta * (level * dt) + cache.eta_val[static_cast<std::size_t>(cell)]));
  };

  for (int l = 0; l < tr.depth; ++l) {
    const double prob = tr.probability(l);
    for (std::int64_t k = 0; k < tr.nodes_at(l); ++k) {
      const std::int64_t id = tr.node_id(l, k);
      const std::int64_t cplus =
          tr.increment_into(tr.child(id, 0)) > 0 ? tr.child(id, 0) : tr.child(id, 1);
      const std::int64_t cminus = tr.child(id, 0) + tr.child(id, 1) - cplus;
      const Eigen::VectorXd& hp = h.at(id);
      const Eigen::VectorXd& hcp = h.at(cplus);
      const Eigen::VectorXd& hcm = h.at(cminus);

      for (int c = 0; c < g.ncells; ++c) {
        const double th_l = theta_at(l, c);
        const double th_r = theta_at(l + 1, c);
        const Eigen::VectorXd hpc = hp.segment(c * N, N);
        const Eigen::VectorXd hbar = 0.5 * (hcp.segment(c * N, N) + hcm.segment(c * N, N));
        const Eigen::VectorXd hodd = 0.5 * (hcp.segment(c * N, N) - hcm.segment(c * N, N));
        const Eigen::VectorXd wpc = th_l * hpc;

        Eigen::VectorXd advect = Eigen::VectorXd::Zero(N);
        for (int d = 0; d < g.dim; ++d)
          advect += cache.A[static_cast<std::size_t>(c * g.dim + d)] *
                    detail::centered_diff(g, hp, c, d);
        out.lhs += prob * vol * 2.0 * th_l * wpc.dot((hbar - hpc) + dt * advect);

        const double wc_sq = 0.5 * (th_r * hcp.segment(c * N, N)).squaredNorm() +
                             0.5 * (th_r * hcm.segment(c * N, N)).squaredNorm();
        out.energy += prob * vol * (wc_sq - wpc.squaredNorm());
        out.quad_var -= prob * vol * (th_r * hodd).squaredNorm();
        out.coeff_div -= prob * vol * dt * wpc.dot(cache.div_A[static_cast<std::size_t>(c)] * wpc);
        out.order_term -=
            prob * vol * dt * 2.0 * cw.lambda * wpc.dot(cache.order[static_cast<std::size_t>(c)] * wpc);
      }

      std::size_t flux_idx = 0;
      for (const FaceInfo& fi : g.faces)
        for (const BoundaryCell& bc : fi.cells) {
          const double th_l = theta_at(l, bc.cell);
          Eigen::VectorXd wb = th_l * hp.segment(bc.cell * N, N);
          out.boundary += prob * dt * bc.area_weight * wb.dot(cache.face_flux[flux_idx] * wb);
          ++flux_idx;
        }
    }
  }
  const double scale = std::abs(out.lhs) + std::abs(out.boundary) + std::abs(out.energy) +
                       std::abs(out.quad_var) + std::abs(out.coeff_div) + std::abs(out.order_term) +
                       1e-300;
  out.residual = std::abs(out.lhs - out.rhs()) / scale;
  return out;
}

inline double weighted_identity_residual(const SdeOperators& ops, const CarlemanWeight& cw,
                                         const AdaptedProcess& h) {
  return weighted_identity_terms(ops, cw, h).residual;
}

/// One row of the observability sweep.
struct SweepRow {
  double T = 0.0;
  double lambda = 0.0;
  double sigma_min = 0.0;
  double weighted_ratio = 0.0;      ///< max over probes of E|theta(T)zT|^2 / (|theta ksi|^2+|theta Z|^2).
  double contraction_factor = 0.0;  ///< max over probes of |theta(0)z(0)|^2 / E|theta(T)zT|^2.
};

struct SweepOptions {
  std::vector<double> lambdas{0.5, 1.0, 2.0, 4.0, 8.0};
  int probe_directions = 20;
  std::uint64_t seed = 0x0b5e7eULL;
  ControlMapOptions map_options;
  SpectrumOptions spectrum;
};

namespace detail {

/// theta-weighted squared state norm at a given time level.
inline double weighted_state_sq(const Grid& g, const CarlemanWeight& cw, double t,
                                const Eigen::VectorXd& y) {
  const int N = g.N();
  double s = 0.0;
  for (int c = 0; c < g.ncells; ++c) {
    auto xc = g.cell_center(c);
    const double th = cw.theta(t, std::span<const double>(xc.data(), static_cast<std::size_t>(g.dim)));
    s += g.cell_volume * th * th * y.segment(c * N, N).squaredNorm();
  }
  return s;
}

}  // namespace detail

/// For each horizon T and each lambda: the observability spectrum floor, the
/// weighted-energy ratio of terminal data against observed quantities, and
/// the two-endpoint contraction factor of the weighted backward energy. The
/// ratio and the contraction are maximized over a fixed set of seeded random
/// terminal directions (a reported lower bound of the true suprema).
inline std::vector<SweepRow> observability_sweep(const Grid& grid, int depth,
                                                 const WeightCandidate& eta,
                                                 const std::vector<double>& T_list,
                                                 const SweepOptions& opts = {}) {
  if (!eta.certified) throw std::invalid_argument("observability_sweep: weight not certified");
  std::vector<SweepRow> rows;
  const double T0 = minimal_time(eta);
  for (double T : T_list) {
    ScenarioTree tree{depth, T};
    SdeOperators ops = make_sde_operators(grid, tree);
    ControlMap map(ops, opts.map_options);
    SpectrumEstimate sp = observability_spectrum(map, opts.spectrum);

    // Probe directions: fixed seed per (T, sweep), shared across lambdas.
    CounterRng rng(opts.seed ^ static_cast<std::uint64_t>(T * 1e6));
    std::vector<Eigen::VectorXd> probes;
    for (int i = 0; i < opts.probe_directions; ++i)
      probes.push_back(rng.normal_vector(static_cast<int>(map.terminal_dim())));

    for (double lambda : opts.lambdas) {
      const double beta = T > T0 ? choose_beta(eta.c0, T, T0) : 0.5 * eta.c0;
      CarlemanWeight cw = make_carleman_weight(eta, beta, lambda);
      SweepRow row;
      row.T = T;
      row.lambda = lambda;
      row.sigma_min = sp.sigma_min;
      for (const Eigen::VectorXd& p : probes) {
        BackwardSolution bw = solve_backward(ops, map.unstack_leaves(p));
        // Terminal weighted energy: expectation over leaves.
        double term = 0.0;
        for (std::int64_t kk = 0; kk < tree.num_leaves(); ++kk)
          term += tree.probability(tree.depth) *
                  detail::weighted_state_sq(grid, cw, T, bw.z.at(tree.node_id(tree.depth, kk)));
        // Observed quantities: theta-weighted Z and boundary-trace energies.
        double obs = 0.0;
        for (int l = 0; l < tree.depth; ++l) {
          const double prob = tree.probability(l);
          const double t = l * tree.dt();
          for (std::int64_t kk = 0; kk < tree.nodes_at(l); ++kk) {
            const std::int64_t id = tree.node_id(l, kk);
            obs += prob * tree.dt() * detail::weighted_state_sq(grid, cw, t, bw.Z.at(id));
            if (grid.incoming_dim > 0) {
              double s = 0.0;
              for (int j = 0; j < ops.n_sub; ++j)
                for (const FaceInfo& fi : grid.faces)
                  for (const BoundaryCell& bc : fi.cells) {
                    auto xc = bc.face_point;
                    const double th = cw.theta(
                        t, std::span<const double>(xc.data(), static_cast<std::size_t>(grid.dim)));
                    const Eigen::Index off = j * grid.incoming_dim + bc.u_offset;
                    s += bc.area_weight * th * th *
                         bw.u_costate.at(id).segment(off, bc.dec.n_minus).squaredNorm();
                  }
              obs += prob * ops.dt_sub * s;
            }
          }
        }
        const double guard = 1e-300;
        row.weighted_ratio = std::max(row.weighted_ratio, term / (obs + guard));
        const double initial = detail::weighted_state_sq(grid, cw, 0.0, bw.z.at(0));
        row.contraction_factor = std::max(row.contraction_factor, initial / (term + guard));
      }
      rows.push_back(row);
    }
  }
  return rows;
}

/// Smallest lambda in the sweep whose contraction factor meets the given
/// threshold, or NaN when none does.
inline double smallest_contracting_lambda(const std::vector<SweepRow>& rows, double T,
                                          double threshold = 0.5) {
  double best = std::numeric_limits<double>::quiet_NaN();
  for (const SweepRow& r : rows)
    if (r.T == T && r.contraction_factor <= threshold && !(r.lambda >= best))  // NaN-safe min
      best = r.lambda;
  return best;
}

}  // namespace hypctl
