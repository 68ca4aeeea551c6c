#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hypctl/rng.hpp"
#include "hypctl/solver.hpp"

namespace hypctl {

/// A control pair: boundary data fed through the incoming characteristics and
/// an internal forcing acting on the noise channel. Both are adapted processes
/// on levels 0..M-1 of the tree.
struct ControlVec {
  AdaptedProcess u;  ///< boundary control, dimension = incoming_dim.
  AdaptedProcess v;  ///< internal control, dimension = N * ncells.
};

/// Which control channels are active, and the structural projections applied
/// to the internal channel. All projections are orthogonal with respect to
/// the control inner product, so the control-to-state map composed with them
/// keeps an exact adjoint.
struct ControlMapOptions {
  bool use_boundary = true;
  bool use_internal = true;
  bool zero_mean_internal = false;     ///< remove the cross-node mean per level.
  std::vector<char> internal_support;  ///< per-cell mask; empty = all cells.
};

/// Control-to-terminal-state map for the tree discretization, together with
/// the weighted inner products that make forward/adjoint exact transposes.
/// Terminal states are stored leaf-stacked: block k of size N*ncells is the
/// state at leaf k.
class ControlMap {
 public:
  ControlMap(const SdeOperators& ops, ControlMapOptions opts = {})
      : ops_(&ops), opts_(std::move(opts)) {
    const Grid& g = *ops.grid;
    if (!opts_.internal_support.empty() &&
        static_cast<int>(opts_.internal_support.size()) != g.ncells)
      throw std::invalid_argument("ControlMap: internal_support size must equal cell count");
    if (!opts_.use_boundary && !opts_.use_internal)
      throw std::invalid_argument("ControlMap: at least one control channel must be active");
  }

  const SdeOperators& ops() const { return *ops_; }
  const Grid& grid() const { return *ops_->grid; }
  const ControlMapOptions& options() const { return opts_; }
  int state_dim() const { return grid().state_dim_total(); }
  std::int64_t num_leaves() const { return ops_->tree.num_leaves(); }
  Eigen::Index terminal_dim() const { return num_leaves() * state_dim(); }

  /// Probability- and volume-weighted inner product on leaf-stacked states.
  double state_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return std::ldexp(grid().cell_volume * a.dot(b), -ops_->tree.depth);
  }
  double state_norm(const Eigen::VectorXd& a) const { return std::sqrt(state_dot(a, a)); }

  /// Expectation-weighted control inner product: boundary terms carry the
  /// face quadrature weight and the sub-step length, internal terms the cell
  /// volume and the tree step length.
  double control_dot(const ControlVec& a, const ControlVec& b) const {
    const Grid& g = grid();
    const ScenarioTree& tr = ops_->tree;
    const double dt = tr.dt();
    double s = 0.0;
    for (int l = 0; l < tr.depth; ++l) {
      const double w = tr.probability(l);
      for (std::int64_t k = 0; k < tr.nodes_at(l); ++k) {
        const std::int64_t id = tr.node_id(l, k);
        if (!a.u.values.empty() && !b.u.values.empty() && g.incoming_dim > 0)
          s += w * ops_->dt_sub * boundary_dot(a.u.at(id), b.u.at(id));
        if (!a.v.values.empty() && !b.v.values.empty())
          s += w * dt * g.cell_volume * a.v.at(id).dot(b.v.at(id));
      }
    }
    return s;
  }
  double control_norm(const ControlVec& a) const { return std::sqrt(control_dot(a, a)); }

  ControlVec zero_control() const {
    const ScenarioTree& tr = ops_->tree;
    ControlVec c{AdaptedProcess(tr, tr.depth - 1, std::max(1, boundary_value_dim(*ops_))),
                 AdaptedProcess(tr, tr.depth - 1, state_dim())};
    return c;
  }

  /// Applies the channel/structure projection in place.
  void project(ControlVec& c) const {
    const Grid& g = grid();
    const ScenarioTree& tr = ops_->tree;
    if ((!opts_.use_boundary || g.incoming_dim == 0) && !c.u.values.empty())
      for (auto& x : c.u.values) x.setZero();
    if (!opts_.use_internal) {
      if (!c.v.values.empty())
        for (auto& x : c.v.values) x.setZero();
      return;
    }
    if (c.v.values.empty()) return;
    if (!opts_.internal_support.empty()) {
      const int N = g.N();
      for (auto& x : c.v.values)
        for (int cell = 0; cell < g.ncells; ++cell)
          if (!opts_.internal_support[static_cast<std::size_t>(cell)])
            x.segment(cell * N, N).setZero();
    }
    if (opts_.zero_mean_internal) {
      for (int l = 0; l < tr.depth; ++l) {
        Eigen::VectorXd m = level_expectation(tr, c.v, l);
        for (std::int64_t k = 0; k < tr.nodes_at(l); ++k) c.v.at(tr.node_id(l, k)) -= m;
      }
    }
  }

  /// Terminal leaf states produced by the control from zero initial data.
  Eigen::VectorXd forward(ControlVec c) const {
    project(c);
    AdaptedProcess y = solve_forward(*ops_, Eigen::VectorXd::Zero(state_dim()), c.u, c.v);
    return stack_leaves(y);
  }

  /// Exact transpose of forward with respect to (state_dot, control_dot).
  ControlVec adjoint(const Eigen::VectorXd& terminal) const {
    BackwardSolution bw = solve_backward(*ops_, unstack_leaves(terminal));
    ControlVec c{std::move(bw.u_costate), std::move(bw.Z)};
    project(c);
    return c;
  }

  /// Terminal leaf states of the uncontrolled system from y0.
  Eigen::VectorXd free_response(const Eigen::VectorXd& y0) const {
    AdaptedProcess none;
    AdaptedProcess y = solve_forward(*ops_, y0, none, none);
    return stack_leaves(y);
  }

  /// One application of the controllability Gramian on leaf-stacked states.
  Eigen::VectorXd gramian(const Eigen::VectorXd& w) const { return forward(adjoint(w)); }

  Eigen::VectorXd stack_leaves(const AdaptedProcess& y) const {
    const ScenarioTree& tr = ops_->tree;
    const int nd = state_dim();
    Eigen::VectorXd out(terminal_dim());
    for (std::int64_t k = 0; k < tr.num_leaves(); ++k)
      out.segment(k * nd, nd) = y.at(tr.node_id(tr.depth, k));
    return out;
  }

  std::vector<Eigen::VectorXd> unstack_leaves(const Eigen::VectorXd& terminal) const {
    if (terminal.size() != terminal_dim())
      throw std::invalid_argument("ControlMap: terminal vector size mismatch");
    const int nd = state_dim();
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(num_leaves()));
    for (std::int64_t k = 0; k < num_leaves(); ++k) out.push_back(terminal.segment(k * nd, nd));
    return out;
  }

 private:
  double boundary_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    const Grid& g = grid();
    double s = 0.0;
    for (int j = 0; j < ops_->n_sub; ++j)
      for (const FaceInfo& fi : g.faces)
        for (const BoundaryCell& bc : fi.cells) {
          const Eigen::Index off = j * g.incoming_dim + bc.u_offset;
          s += bc.area_weight *
               a.segment(off, bc.dec.n_minus).dot(b.segment(off, bc.dec.n_minus));
        }
    return s;
  }

  const SdeOperators* ops_;
  ControlMapOptions opts_;
};

struct SynthesisOptions {
  double tol = 1e-10;     ///< relative residual target on the normal equations.
  int max_iter = 5000;
  int stall_window = 250;  ///< iterations without a new best before giving up.
};

/// Outcome of a control synthesis run. `residual` is recomputed from scratch:
/// the weighted distance between the achieved terminal state and the target,
/// relative to the target norm.
struct ControlReport {
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
  double target_norm = 0.0;
  double control_norm = 0.0;
  double boundary_norm = 0.0;
  double internal_norm = 0.0;
  double sigma_max_estimate = 0.0;  ///< from the conjugate-gradient Ritz values.
  double sigma_min_estimate = 0.0;
};

namespace detail {

/// Extremal Ritz values of the conjugate-gradient tridiagonal matrix.
inline std::pair<double, double> cg_ritz_extremes(const std::vector<double>& alphas,
                                                  const std::vector<double>& betas) {
  const int m = static_cast<int>(alphas.size());
  if (m == 0) return {0.0, 0.0};
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
  for (int j = 0; j < m; ++j) {
    T(j, j) = 1.0 / alphas[static_cast<std::size_t>(j)];
    if (j > 0)
      T(j, j) += betas[static_cast<std::size_t>(j - 1)] / alphas[static_cast<std::size_t>(j - 1)];
    if (j + 1 < m) {
      const double off = std::sqrt(betas[static_cast<std::size_t>(j)]) / alphas[static_cast<std::size_t>(j)];
      T(j, j + 1) = off;
      T(j + 1, j) = off;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T, Eigen::EigenvaluesOnly);
  return {std::max(0.0, es.eigenvalues()(0)), std::max(0.0, es.eigenvalues()(m - 1))};
}

}  // namespace detail

/// Steers y0 to the terminal target (leaf-stacked) by conjugate gradients on
/// the Gramian normal equations; the control is recovered through the adjoint
/// map. On stall or reaching the iteration cap the best iterate found is
/// returned with converged = false.
inline std::pair<ControlVec, ControlReport> synthesize_control(const ControlMap& map,
                                                               const Eigen::VectorXd& y0,
                                                               const Eigen::VectorXd& target,
                                                               const SynthesisOptions& opts = {}) {
  if (opts.tol <= 0 || opts.max_iter < 1)
    throw std::invalid_argument("synthesize_control: bad options");
  ControlReport rep;
  rep.target_norm = map.state_norm(target);
  Eigen::VectorXd rhs = target - map.free_response(y0);
  const double rhs_norm = map.state_norm(rhs);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(map.terminal_dim());
  Eigen::VectorXd w_best = w;
  double best_res = rhs_norm;
  int best_iter = 0;

  std::vector<double> alphas, betas;
  if (rhs_norm > 0) {
    Eigen::VectorXd r = rhs;
    Eigen::VectorXd p = r;
    double rs = map.state_dot(r, r);
    double curvature_scale = 0.0;
    for (int it = 1; it <= opts.max_iter; ++it) {
      Eigen::VectorXd q = map.gramian(p);
      const double pp = map.state_dot(p, p);
      const double pq = map.state_dot(p, q);
      if (!std::isfinite(pq) || pq <= 0) break;
      curvature_scale = std::max(curvature_scale, pq / pp);
      if (pq < 1e-14 * curvature_scale * pp) break;  // numerically null direction
      const double alpha = rs / pq;
      alphas.push_back(alpha);
      w += alpha * p;
      r -= alpha * q;
      const double rs_new = map.state_dot(r, r);
      const double res = std::sqrt(rs_new);
      rep.iterations = it;
      if (!std::isfinite(res)) break;
      if (res < best_res) {
        best_res = res;
        w_best = w;
        best_iter = it;
      }
      if (res <= opts.tol * rhs_norm) {
        rep.converged = true;
        break;
      }
      if (it - best_iter >= opts.stall_window) break;
      const double beta = rs_new / rs;
      betas.push_back(beta);
      p = r + beta * p;
      rs = rs_new;
    }
  } else {
    rep.converged = true;
  }

  ControlVec c = map.adjoint(w_best);
  // Honest defect: rerun the closed loop with the synthesized control. The
  // residual is reported relative to the larger of the target norm and the
  // initial defect, so steering to zero is still measured against the work
  // actually required.
  Eigen::VectorXd achieved = map.forward(c) + map.free_response(y0);
  const double defect = map.state_norm(achieved - target);
  const double scale = std::max(rep.target_norm, rhs_norm);
  rep.residual = scale > 0 ? defect / scale : defect;
  rep.control_norm = map.control_norm(c);
  ControlVec only_u{c.u, AdaptedProcess{}};
  ControlVec only_v{AdaptedProcess{}, c.v};
  rep.boundary_norm = map.control_norm(only_u);
  rep.internal_norm = map.control_norm(only_v);
  auto [lo, hi] = detail::cg_ritz_extremes(alphas, betas);
  rep.sigma_min_estimate = std::sqrt(lo);
  rep.sigma_max_estimate = std::sqrt(hi);
  return {std::move(c), rep};
}

struct SpectrumOptions {
  int power_iters = 200;
  int lanczos_iters = 100;
  double tol = 1e-11;       ///< relative change stop for the power iteration.
  std::uint64_t seed = 0x5eedULL;
};

/// Extremal singular values of the control-to-state map, i.e. square roots of
/// the extremal Gramian eigenvalues in the weighted geometry.
struct SpectrumEstimate {
  double sigma_max = 0.0;
  double sigma_min = 0.0;
  int power_iterations_used = 0;
  int lanczos_iterations_used = 0;
  bool lanczos_breakdown = false;  ///< exact invariant subspace found early.
};

/// sigma_max by power iteration on the Gramian; sigma_min from the smallest
/// Ritz value of a fully reorthogonalized Lanczos recurrence. Deterministic
/// for a fixed seed.
inline SpectrumEstimate observability_spectrum(const ControlMap& map,
                                               const SpectrumOptions& opts = {}) {
  SpectrumEstimate est;
  const Eigen::Index n = map.terminal_dim();
  CounterRng rng(opts.seed);

  Eigen::VectorXd x = rng.normal_vector(static_cast<int>(n));
  x /= map.state_norm(x);
  double lambda = 0.0;
  for (int it = 1; it <= opts.power_iters; ++it) {
    Eigen::VectorXd gx = map.gramian(x);
    const double lambda_new = map.state_dot(x, gx);
    est.power_iterations_used = it;
    const double nrm = map.state_norm(gx);
    if (nrm <= 0) {
      lambda = 0.0;
      break;
    }
    x = gx / nrm;
    if (std::abs(lambda_new - lambda) <= opts.tol * std::max(1.0, std::abs(lambda_new)) && it > 3) {
      lambda = lambda_new;
      break;
    }
    lambda = lambda_new;
  }
  est.sigma_max = std::sqrt(std::max(0.0, lambda));

  // Lanczos with full reorthogonalization in the weighted inner product.
  std::vector<Eigen::VectorXd> basis;
  std::vector<double> a, b;
  Eigen::VectorXd v = rng.normal_vector(static_cast<int>(n));
  v /= map.state_norm(v);
  basis.push_back(v);
  for (int j = 0; j < opts.lanczos_iters; ++j) {
    Eigen::VectorXd wv = map.gramian(basis.back());
    a.push_back(map.state_dot(wv, basis.back()));
    for (int pass = 0; pass < 2; ++pass)
      for (const Eigen::VectorXd& q : basis) wv -= map.state_dot(wv, q) * q;
    est.lanczos_iterations_used = j + 1;
    const double beta = map.state_norm(wv);
    if (beta < 1e-13 * std::max(1.0, est.sigma_max * est.sigma_max)) {
      est.lanczos_breakdown = true;
      break;
    }
    b.push_back(beta * beta);
    basis.push_back(wv / beta);
  }
  const int m = static_cast<int>(a.size());
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
  for (int j = 0; j < m; ++j) {
    T(j, j) = a[static_cast<std::size_t>(j)];
    if (j + 1 < m) {
      const double off = std::sqrt(b[static_cast<std::size_t>(j)]);
      T(j, j + 1) = off;
      T(j + 1, j) = off;
    }
  }
  if (m > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T, Eigen::EigenvaluesOnly);
    est.sigma_min = std::sqrt(std::max(0.0, es.eigenvalues()(0)));
    est.sigma_max = std::max(est.sigma_max, std::sqrt(std::max(0.0, es.eigenvalues()(m - 1))));
  }
  return est;
}

/// Largest weighted deviation, over all levels, between the tree expectation
/// of the forced state and the unforced deterministic evolution. When the
/// internal control enters only the noise channel this is a pure round-off
/// quantity.
inline double mean_invariance_probe(const SdeOperators& ops, const Eigen::VectorXd& y0,
                                    const AdaptedProcess& v) {
  if (!ops.grid->spec.B3.is_zero())
    throw std::invalid_argument(
        "mean_invariance_probe: requires a zero drift feed-through coefficient");
  AdaptedProcess none;
  AdaptedProcess y = solve_forward(ops, y0, none, v);
  std::vector<Eigen::VectorXd> det = solve_deterministic(ops, y0, {}, {});
  const double wl2 = std::sqrt(ops.grid->cell_volume);
  double worst = 0.0;
  for (int l = 0; l <= ops.tree.depth; ++l) {
    Eigen::VectorXd m = level_expectation(ops.tree, y, l);
    worst = std::max(worst, wl2 * (m - det[static_cast<std::size_t>(l)]).norm());
  }
  return worst;
}

}  // namespace hypctl
