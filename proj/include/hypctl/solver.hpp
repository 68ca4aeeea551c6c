#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hypctl/grid.hpp"
#include "hypctl/tree.hpp"

namespace hypctl {

/// Zeroth-order coefficients sampled per cell at one time level (left
/// endpoint of the step). Empty vectors mean the field is identically zero.
struct LevelCoefficients {
  std::vector<Eigen::MatrixXd> B1, B2, B3;
  bool b1_zero = true, b2_zero = true, b3_zero = true;
};

/// Per-level coefficient cache plus the transport sub-stepping parameters for
/// one tree discretization. The tree step dt is split into n_sub transport
/// sub-steps so the CFL bound holds regardless of the tree depth; the noise
/// and the zeroth-order terms act once per tree step.
struct SdeOperators {
  const Grid* grid = nullptr;
  ScenarioTree tree;
  int n_sub = 1;
  double dt_sub = 0.0;
  std::vector<LevelCoefficients> levels;  ///< size = tree.depth.

  double dt() const { return tree.dt(); }
};

namespace detail {

inline LevelCoefficients sample_level_coefficients(const Grid& g, double t) {
  LevelCoefficients lc;
  lc.b1_zero = g.spec.B1.is_zero();
  lc.b2_zero = g.spec.B2.is_zero();
  lc.b3_zero = g.spec.B3.is_zero();
  auto sample = [&](const MatrixPolyField& f, std::vector<Eigen::MatrixXd>& out) {
    out.reserve(static_cast<std::size_t>(g.ncells));
    std::array<double, 3> xt{};
    for (int c = 0; c < g.ncells; ++c) {
      auto x = g.cell_center(c);
      xt[0] = x[0];
      xt[1] = g.dim == 2 ? x[1] : t;
      xt[static_cast<std::size_t>(g.dim)] = t;
      out.push_back(f.eval(std::span<const double>(xt.data(), static_cast<std::size_t>(g.dim) + 1)));
    }
  };
  if (!lc.b1_zero) sample(g.spec.B1, lc.B1);
  if (!lc.b2_zero) sample(g.spec.B2, lc.B2);
  if (!lc.b3_zero) sample(g.spec.B3, lc.B3);
  return lc;
}

/// y += scale * blockdiag(B) * x, applied cell by cell.
inline void add_blockdiag(const Grid& g, const std::vector<Eigen::MatrixXd>& B, double scale,
                          const Eigen::VectorXd& x, Eigen::VectorXd& y, bool transpose = false) {
  const int N = g.N();
  for (int c = 0; c < g.ncells; ++c) {
    const auto& b = B[static_cast<std::size_t>(c)];
    if (transpose)
      y.segment(c * N, N).noalias() += scale * (b.transpose() * x.segment(c * N, N));
    else
      y.segment(c * N, N).noalias() += scale * (b * x.segment(c * N, N));
  }
}

}  // namespace detail

/// Prepares the solver context: chooses the sub-step count from the CFL bound
/// and samples the zeroth-order coefficients at every level time.
inline SdeOperators make_sde_operators(const Grid& grid, const ScenarioTree& tree) {
  SdeOperators ops;
  ops.grid = &grid;
  ops.tree = tree;
  const double dt = tree.dt();
  ops.n_sub = std::max(1, static_cast<int>(std::ceil(dt / grid.dt_max - 1e-12)));
  ops.dt_sub = dt / ops.n_sub;
  ops.levels.reserve(static_cast<std::size_t>(tree.depth));
  for (int l = 0; l < tree.depth; ++l)
    ops.levels.push_back(detail::sample_level_coefficients(grid, l * dt));
  return ops;
}

/// Dimension of one node's boundary-control value: the incoming trace is
/// resolved per transport sub-step, so boundary data keeps the CFL-scale time
/// resolution even on a shallow tree.
inline int boundary_value_dim(const SdeOperators& ops) {
  return ops.n_sub * ops.grid->incoming_dim;
}

/// Applies the sub-stepped transport map with per-sub-step boundary data:
///   y -> S^n y + sum_j S^(n-1-j) dt_sub G u_j,   S = I - dt_sub L.
/// u concatenates the sub-step slices [u_0, ..., u_{n-1}]; empty means zero.
inline Eigen::VectorXd forward_transport(const SdeOperators& ops, Eigen::VectorXd y,
                                         const Eigen::VectorXd& u) {
  const Grid& g = *ops.grid;
  const int nu = g.incoming_dim;
  const bool with_u = nu > 0 && u.size() > 0;
  if (with_u && u.size() != boundary_value_dim(ops))
    throw std::invalid_argument("forward_transport: boundary data size mismatch");
  for (int j = 0; j < ops.n_sub; ++j) {
    Eigen::VectorXd ly = g.L * y;
    y -= ops.dt_sub * ly;
    if (with_u) y += ops.dt_sub * (g.G * u.segment(j * nu, nu));
  }
  return y;
}

/// Transpose of forward_transport: returns (S^T)^n z together with the
/// per-sub-step boundary accumulation, slice j holding G^T (S^T)^(n-1-j) z --
/// the exact adjoint of the sub-step control injections (without dt factors).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> transpose_transport(const SdeOperators& ops,
                                                                       Eigen::VectorXd z) {
  const Grid& g = *ops.grid;
  const int nu = g.incoming_dim;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(std::max(1, boundary_value_dim(ops)));
  for (int i = 0; i < ops.n_sub; ++i) {
    if (nu > 0) acc.segment((ops.n_sub - 1 - i) * nu, nu) = g.GT * z;
    Eigen::VectorXd ltz = g.LT * z;
    z -= ops.dt_sub * ltz;
  }
  return {std::move(z), std::move(acc)};
}

/// Deterministic part of one tree step at level l (transport, boundary
/// injection, and drift terms, all evaluated explicitly at the left endpoint).
inline Eigen::VectorXd deterministic_step(const SdeOperators& ops, int level,
                                          const Eigen::VectorXd& y, const Eigen::VectorXd& u,
                                          const Eigen::VectorXd& v) {
  const Grid& g = *ops.grid;
  const LevelCoefficients& lc = ops.levels[static_cast<std::size_t>(level)];
  Eigen::VectorXd out = forward_transport(ops, y, u);
  const double dt = ops.dt();
  if (!lc.b1_zero) detail::add_blockdiag(g, lc.B1, dt, y, out);
  if (!lc.b3_zero && v.size() > 0) detail::add_blockdiag(g, lc.B3, dt, v, out);
  return out;
}

/// Diffusion coefficient of one tree step at level l: B2 y + v.
inline Eigen::VectorXd diffusion_coefficient(const SdeOperators& ops, int level,
                                             const Eigen::VectorXd& y, const Eigen::VectorXd& v) {
  const Grid& g = *ops.grid;
  const LevelCoefficients& lc = ops.levels[static_cast<std::size_t>(level)];
  Eigen::VectorXd d = Eigen::VectorXd::Zero(g.state_dim_total());
  if (!lc.b2_zero) detail::add_blockdiag(g, lc.B2, 1.0, y, d);
  if (v.size() > 0) d += v;
  return d;
}

/// Forward Euler-Maruyama sweep over the whole tree. Controls may be empty
/// processes (treated as zero). Every node value is the state after the
/// transitions along its path.
inline AdaptedProcess solve_forward(const SdeOperators& ops, const Eigen::VectorXd& y0,
                                    const AdaptedProcess& u, const AdaptedProcess& v) {
  const Grid& g = *ops.grid;
  const ScenarioTree& tr = ops.tree;
  if (y0.size() != g.state_dim_total()) throw std::invalid_argument("solve_forward: y0 size mismatch");
  AdaptedProcess y(tr, tr.depth, g.state_dim_total());
  y.at(0) = y0;
  static const Eigen::VectorXd kEmpty;
  for (int l = 0; l < tr.depth; ++l) {
    for (std::int64_t k = 0; k < tr.nodes_at(l); ++k) {
      const std::int64_t id = tr.node_id(l, k);
      const Eigen::VectorXd& un = u.values.empty() ? kEmpty : u.at(id);
      const Eigen::VectorXd& vn = v.values.empty() ? kEmpty : v.at(id);
      Eigen::VectorXd drift = deterministic_step(ops, l, y.at(id), un, vn);
      Eigen::VectorXd diff = diffusion_coefficient(ops, l, y.at(id), vn);
      y.at(tr.child(id, 0)) = drift + tr.increment_into(tr.child(id, 0)) * diff;
      y.at(tr.child(id, 1)) = drift + tr.increment_into(tr.child(id, 1)) * diff;
    }
  }
  return y;
}

/// Deterministic reference sweep: the same level maps with the noise removed.
inline std::vector<Eigen::VectorXd> solve_deterministic(const SdeOperators& ops,
                                                        const Eigen::VectorXd& y0,
                                                        const std::vector<Eigen::VectorXd>& u_levels,
                                                        const std::vector<Eigen::VectorXd>& v_levels) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(ops.tree.depth) + 1);
  out.push_back(y0);
  static const Eigen::VectorXd kEmpty;
  for (int l = 0; l < ops.tree.depth; ++l) {
    const Eigen::VectorXd& un = u_levels.empty() ? kEmpty : u_levels[static_cast<std::size_t>(l)];
    const Eigen::VectorXd& vn = v_levels.empty() ? kEmpty : v_levels[static_cast<std::size_t>(l)];
    out.push_back(deterministic_step(ops, l, out.back(), un, vn));
  }
  return out;
}

/// Solution of the transposed (backward) sweep: z is the costate, Z its
/// martingale density, and u_costate the boundary costate -Lambda_minus times
/// the incoming trace of the propagated conditional mean, sampled per
/// transport sub-step -- exactly the integrand that pairs with the boundary
/// control in the transposition identity.
struct BackwardSolution {
  AdaptedProcess z;          ///< levels 0..M.
  AdaptedProcess Z;          ///< levels 0..M-1.
  AdaptedProcess u_costate;  ///< levels 0..M-1, dimension = n_sub * incoming_dim.
};

/// Backward sweep defined as the exact transpose of the forward affine map,
/// so the discrete duality identity holds to machine precision. Per node:
///   zbar = E[z_child], zhat = (z_+ - z_-)/2,
///   Z    = B3^T zbar + zhat / sqrt(dt),
///   z    = (S_transport^T + dt B1^T) zbar + sqrt(dt) B2^T zhat.
inline BackwardSolution solve_backward(const SdeOperators& ops,
                                       const std::vector<Eigen::VectorXd>& z_terminal) {
  const Grid& g = *ops.grid;
  const ScenarioTree& tr = ops.tree;
  if (static_cast<std::int64_t>(z_terminal.size()) != tr.num_leaves())
    throw std::invalid_argument("solve_backward: expected one terminal value per leaf");
  BackwardSolution sol{AdaptedProcess(tr, tr.depth, g.state_dim_total()),
                       AdaptedProcess(tr, tr.depth - 1, g.state_dim_total()),
                       AdaptedProcess(tr, tr.depth - 1, std::max(1, boundary_value_dim(ops)))};
  for (std::int64_t k = 0; k < tr.num_leaves(); ++k) {
    if (z_terminal[static_cast<std::size_t>(k)].size() != g.state_dim_total())
      throw std::invalid_argument("solve_backward: terminal value size mismatch");
    sol.z.at(tr.node_id(tr.depth, k)) = z_terminal[static_cast<std::size_t>(k)];
  }
  const double dt = ops.dt();
  const double sdt = tr.sqrt_dt();
  for (int l = tr.depth - 1; l >= 0; --l) {
    const LevelCoefficients& lc = ops.levels[static_cast<std::size_t>(l)];
    for (std::int64_t k = 0; k < tr.nodes_at(l); ++k) {
      const std::int64_t id = tr.node_id(l, k);
      // Children carry opposite increments; identify the '+' one explicitly.
      const std::int64_t cplus =
          tr.increment_into(tr.child(id, 0)) > 0 ? tr.child(id, 0) : tr.child(id, 1);
      const std::int64_t cminus = tr.child(id, 0) + tr.child(id, 1) - cplus;
      const Eigen::VectorXd& zp = sol.z.at(cplus);
      const Eigen::VectorXd& zm = sol.z.at(cminus);
      Eigen::VectorXd zbar = 0.5 * (zp + zm);
      Eigen::VectorXd zhat = 0.5 * (zp - zm);

      Eigen::VectorXd Zn = zhat / sdt;
      if (!lc.b3_zero) detail::add_blockdiag(g, lc.B3, 1.0, zbar, Zn, /*transpose=*/true);
      sol.Z.at(id) = Zn;

      auto [ztr, gacc] = transpose_transport(ops, zbar);
      if (!lc.b1_zero) detail::add_blockdiag(g, lc.B1, dt, zbar, ztr, /*transpose=*/true);
      if (!lc.b2_zero) detail::add_blockdiag(g, lc.B2, sdt, zhat, ztr, /*transpose=*/true);
      sol.z.at(id) = std::move(ztr);

      if (g.incoming_dim > 0) {
        Eigen::VectorXd uc = g.cell_volume * gacc;
        for (int j = 0; j < ops.n_sub; ++j)
          for (const FaceInfo& fi : g.faces)
            for (const BoundaryCell& bc : fi.cells)
              uc.segment(j * g.incoming_dim + bc.u_offset, bc.dec.n_minus) /= bc.area_weight;
        sol.u_costate.at(id) = std::move(uc);
      }
    }
  }
  return sol;
}

/// Relative defect of the discrete transposition identity
///   E<y(T), z_T> - <y0, z(0)> = E sum dt <v, Z> + E sum dt <u, u_costate>_dGamma
/// computed with grid quadrature, boundary quadrature, and tree expectations.
inline double duality_residual(const SdeOperators& ops, const Eigen::VectorXd& y0,
                               const AdaptedProcess& u, const AdaptedProcess& v,
                               const std::vector<Eigen::VectorXd>& z_terminal) {
  const Grid& g = *ops.grid;
  const ScenarioTree& tr = ops.tree;
  AdaptedProcess y = solve_forward(ops, y0, u, v);
  BackwardSolution bw = solve_backward(ops, z_terminal);

  // Terminal pairing via pairwise reduction over leaves.
  std::vector<double> acc(static_cast<std::size_t>(tr.num_leaves()));
  for (std::int64_t k = 0; k < tr.num_leaves(); ++k)
    acc[static_cast<std::size_t>(k)] =
        y.at(tr.node_id(tr.depth, k)).dot(z_terminal[static_cast<std::size_t>(k)]);
  while (acc.size() > 1) {
    for (std::size_t i = 0; i + 1 < acc.size(); i += 2) acc[i / 2] = 0.5 * (acc[i] + acc[i + 1]);
    acc.resize(acc.size() / 2);
  }
  const double lhs_terminal = g.cell_volume * acc.front();
  const double lhs_initial = g.cell_volume * y0.dot(bw.z.at(0));

  const double dt = ops.dt();
  double rhs_v = 0.0, rhs_u = 0.0;
  for (int l = 0; l < tr.depth; ++l) {
    const double w = tr.probability(l);
    for (std::int64_t k = 0; k < tr.nodes_at(l); ++k) {
      const std::int64_t id = tr.node_id(l, k);
      if (!v.values.empty() && v.at(id).size() > 0)
        rhs_v += w * dt * g.cell_volume * v.at(id).dot(bw.Z.at(id));
      if (!u.values.empty() && g.incoming_dim > 0 && u.at(id).size() > 0) {
        double s = 0.0;
        for (int j = 0; j < ops.n_sub; ++j)
          for (const FaceInfo& fi : g.faces)
            for (const BoundaryCell& bc : fi.cells) {
              const Eigen::Index off = j * g.incoming_dim + bc.u_offset;
              s += bc.area_weight * u.at(id).segment(off, bc.dec.n_minus)
                       .dot(bw.u_costate.at(id).segment(off, bc.dec.n_minus));
            }
        rhs_u += w * ops.dt_sub * s;
      }
    }
  }
  const double lhs = lhs_terminal - lhs_initial;
  const double rhs = rhs_v + rhs_u;
  const double scale = std::abs(lhs_terminal) + std::abs(lhs_initial) + std::abs(rhs_v) +
                       std::abs(rhs_u) + 1e-300;
  return std::abs(lhs - rhs) / scale;
}

}  // namespace hypctl
