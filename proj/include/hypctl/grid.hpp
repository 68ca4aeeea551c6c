#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "hypctl/system.hpp"

namespace hypctl {

/// Discrete state on the grid: cell-major flattened vector of length
/// state_dim * ncells (component index fastest).
using StateField = Eigen::VectorXd;

/// One boundary cell attached to a face, with the characteristic
/// decomposition evaluated at the face point next to the cell.
struct BoundaryCell {
  int cell = 0;
  std::array<double, 2> face_point{};
  BoundaryDecomposition dec;
  double area_weight = 1.0;  ///< boundary quadrature weight (1 in 1-D, cell edge length in 2-D).
  int u_offset = 0;          ///< offset of this cell's incoming block in the flattened control.
};

struct FaceInfo {
  Face face = Face::Left;
  std::vector<BoundaryCell> cells;
};

/// Characteristic trace of a state on the whole boundary, cell by cell.
struct BoundaryTrace {
  struct Entry {
    Face face;
    int cell;
    CharacteristicSplit split;
    Eigen::VectorXd lambda_minus;
    double area_weight;
  };
  std::vector<Entry> entries;
};

/// Uniform grid with the per-face characteristic data and the assembled
/// first-order transport operator. The semi-discrete form is
///   dy/dt = -L y + G u,
/// where L uses characteristic upwinding at every 1-D interface and at all
/// boundary interfaces, and a local Lax-Friedrichs (Rusanov) splitting at
/// interior interfaces in 2-D. G injects the incoming boundary data through
/// the ghost-cell closure; outgoing and zero characteristics extrapolate and
/// drop out of the flux exactly.
struct Grid {
  SystemSpec spec;
  int dim = 1;
  std::array<int, 2> cells{4, 1};
  std::array<double, 2> h{0.0, 0.0};
  int ncells = 0;
  double cfl = 0.9;
  double dt_max = 0.0;
  double cell_volume = 0.0;
  std::array<double, 2> max_speed{0.0, 0.0};
  bool has_zero_characteristics = false;
  int incoming_dim = 0;

  std::vector<FaceInfo> faces;
  Eigen::SparseMatrix<double> L, LT;
  Eigen::SparseMatrix<double> G, GT;

  int N() const { return spec.state_dim; }
  int cell_index(int ix, int iy = 0) const { return iy * cells[0] + ix; }

  std::array<double, 2> cell_center(int c) const {
    int ix = c % cells[0];
    int iy = c / cells[0];
    std::array<double, 2> x{};
    x[0] = spec.domain.lower[0] + (ix + 0.5) * h[0];
    if (dim == 2) x[1] = spec.domain.lower[1] + (iy + 0.5) * h[1];
    return x;
  }

  int state_dim_total() const { return N() * ncells; }

  /// Grid-quadrature inner product over the domain.
  double state_dot(const StateField& a, const StateField& b) const {
    return cell_volume * a.dot(b);
  }
};

namespace detail {

struct MatrixSplit {
  Eigen::MatrixXd plus, minus;
  double radius = 0.0;
};

inline MatrixSplit eigen_split(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd s = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  Eigen::VectorXd pos = es.eigenvalues().cwiseMax(0.0);
  Eigen::VectorXd neg = es.eigenvalues().cwiseMin(0.0);
  MatrixSplit out;
  out.plus = es.eigenvectors() * pos.asDiagonal() * es.eigenvectors().transpose();
  out.minus = es.eigenvectors() * neg.asDiagonal() * es.eigenvectors().transpose();
  out.radius = es.eigenvalues().cwiseAbs().maxCoeff();
  return out;
}

inline MatrixSplit rusanov_split(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd s = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  double alpha = es.eigenvalues().cwiseAbs().maxCoeff();
  MatrixSplit out;
  out.plus = 0.5 * (s + alpha * Eigen::MatrixXd::Identity(s.rows(), s.cols()));
  out.minus = 0.5 * (s - alpha * Eigen::MatrixXd::Identity(s.rows(), s.cols()));
  out.radius = alpha;
  return out;
}

/// Characteristic split at a boundary interface, built from the face
/// decomposition so that only the incoming block carries flux. For a face
/// with outward normal -e_i the transported matrix is A_i = -M, and its
/// positive part is Pi diag(0, 0, -Lambda_minus) Pi^T; for +e_i the negative
/// part is Pi diag(0, 0, Lambda_minus) Pi^T.
inline Eigen::MatrixXd boundary_incoming_flux(const BoundaryDecomposition& dec, bool left_type) {
  const int n = static_cast<int>(dec.Pi.rows());
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < dec.n_minus; ++k) {
    double lm = dec.eigenvalues(dec.n_plus + dec.n_zero + k);
    d(dec.n_plus + dec.n_zero + k) = left_type ? -lm : lm;
  }
  return dec.Pi * d.asDiagonal() * dec.Pi.transpose();
}

}  // namespace detail

/// Builds the grid, the per-face characteristic caches, and the transport
/// operator. Rejects fewer than 4 cells per dimension and CFL outside (0, 1].
inline Grid build_grid(const SystemSpec& spec, std::array<int, 2> cells, double cfl = 0.9) {
  spec.validate_shapes();
  if (cfl <= 0.0 || cfl > 1.0) throw std::invalid_argument("build_grid: cfl must be in (0, 1]");
  Grid g;
  g.spec = spec;
  g.dim = spec.space_dim;
  g.cfl = cfl;
  g.cells = cells;
  if (g.dim == 1) g.cells[1] = 1;
  for (int d = 0; d < g.dim; ++d) {
    if (g.cells[d] < 4) throw std::invalid_argument("build_grid: need at least 4 cells per dimension");
    g.h[d] = spec.domain.extent(d) / g.cells[d];
  }
  g.ncells = g.cells[0] * g.cells[1];
  g.cell_volume = g.dim == 1 ? g.h[0] : g.h[0] * g.h[1];
  const int N = spec.state_dim;

  // Face data with incoming-dof offsets.
  std::vector<Face> face_ids = {Face::Left, Face::Right};
  if (g.dim == 2) {
    face_ids.push_back(Face::Bottom);
    face_ids.push_back(Face::Top);
  }
  int u_off = 0;
  for (Face f : face_ids) {
    FaceInfo fi;
    fi.face = f;
    auto nu = face_normal(f);
    const int axis = (f == Face::Left || f == Face::Right) ? 0 : 1;
    const int other = 1 - axis;
    const int count = g.dim == 1 ? 1 : g.cells[other];
    for (int k = 0; k < count; ++k) {
      BoundaryCell bc;
      int ix = 0, iy = 0;
      if (axis == 0) {
        ix = nu[0] < 0 ? 0 : g.cells[0] - 1;
        iy = k;
      } else {
        iy = nu[1] < 0 ? 0 : g.cells[1] - 1;
        ix = k;
      }
      bc.cell = g.cell_index(ix, iy);
      auto c = g.cell_center(bc.cell);
      bc.face_point = c;
      bc.face_point[axis] = nu[axis] < 0 ? spec.domain.lower[axis] : spec.domain.upper[axis];
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(N, N);
      {
        Coefficients cf = evaluate_coefficients(spec, std::span<const double>(bc.face_point.data(), g.dim), 0.0);
        for (int i = 0; i < g.dim; ++i) m += nu[static_cast<std::size_t>(i)] * cf.A[i];
      }
      bc.dec = boundary_decomposition(m);
      if (bc.dec.n_zero > 0) g.has_zero_characteristics = true;
      bc.area_weight = g.dim == 1 ? 1.0 : g.h[other];
      bc.u_offset = u_off;
      u_off += bc.dec.n_minus;
      fi.cells.push_back(bc);
    }
    g.faces.push_back(std::move(fi));
  }
  g.incoming_dim = u_off;

  // Assemble L and G.
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<Eigen::Triplet<double>> gtrip;
  auto add_block = [&](int row_cell, int col_cell, const Eigen::MatrixXd& b, double scale) {
    for (int r = 0; r < N; ++r)
      for (int c = 0; c < N; ++c) {
        double v = scale * b(r, c);
        if (v != 0.0) trip.emplace_back(row_cell * N + r, col_cell * N + c, v);
      }
  };

  auto interface_matrix = [&](int axis, const std::array<double, 2>& point) {
    Coefficients cf = evaluate_coefficients(spec, std::span<const double>(point.data(), g.dim), 0.0);
    return cf.A[axis];
  };

  // Fast lookup: boundary cell entry per (face index, transverse index).
  auto face_cell = [&](int face_idx, int k) -> const BoundaryCell& {
    return g.faces[static_cast<std::size_t>(face_idx)].cells[static_cast<std::size_t>(k)];
  };

  for (int iy = 0; iy < g.cells[1]; ++iy) {
    for (int ix = 0; ix < g.cells[0]; ++ix) {
      const int c = g.cell_index(ix, iy);
      auto xc = g.cell_center(c);
      for (int axis = 0; axis < g.dim; ++axis) {
        const double inv_h = 1.0 / g.h[axis];
        const int ic = axis == 0 ? ix : iy;
        const int last = g.cells[axis] - 1;
        const int k_transverse = axis == 0 ? iy : ix;

        // Interface on the lower side of the cell along this axis.
        if (ic == 0) {
          const int fidx = axis == 0 ? 0 : 2;  // Left or Bottom
          const BoundaryCell& bc = face_cell(fidx, k_transverse);
          Eigen::MatrixXd aplus = detail::boundary_incoming_flux(bc.dec, /*left_type=*/true);
          add_block(c, c, aplus, inv_h);
          for (int m = 0; m < bc.dec.n_minus; ++m) {
            double lm = bc.dec.eigenvalues(bc.dec.n_plus + bc.dec.n_zero + m);
            Eigen::VectorXd col = bc.dec.Pi.col(bc.dec.n_plus + bc.dec.n_zero + m) * (-lm) * inv_h;
            for (int r = 0; r < N; ++r)
              if (col(r) != 0.0) gtrip.emplace_back(c * N + r, bc.u_offset + m, col(r));
          }
          g.max_speed[axis] = std::max(g.max_speed[axis], bc.dec.eigenvalues.cwiseAbs().maxCoeff());
        } else {
          std::array<double, 2> xi = xc;
          xi[axis] -= 0.5 * g.h[axis];
          Eigen::MatrixXd a = interface_matrix(axis, xi);
          detail::MatrixSplit sp = g.dim == 1 ? detail::eigen_split(a) : detail::rusanov_split(a);
          g.max_speed[axis] = std::max(g.max_speed[axis], sp.radius);
          const int west = axis == 0 ? g.cell_index(ix - 1, iy) : g.cell_index(ix, iy - 1);
          add_block(c, c, sp.plus, inv_h);
          add_block(c, west, sp.plus, -inv_h);
        }

        // Interface on the upper side.
        if (ic == last) {
          const int fidx = axis == 0 ? 1 : 3;  // Right or Top
          const BoundaryCell& bc = face_cell(fidx, k_transverse);
          Eigen::MatrixXd aminus = detail::boundary_incoming_flux(bc.dec, /*left_type=*/false);
          add_block(c, c, aminus, -inv_h);
          for (int m = 0; m < bc.dec.n_minus; ++m) {
            double lm = bc.dec.eigenvalues(bc.dec.n_plus + bc.dec.n_zero + m);
            Eigen::VectorXd col = bc.dec.Pi.col(bc.dec.n_plus + bc.dec.n_zero + m) * (-lm) * inv_h;
            for (int r = 0; r < N; ++r)
              if (col(r) != 0.0) gtrip.emplace_back(c * N + r, bc.u_offset + m, col(r));
          }
          g.max_speed[axis] = std::max(g.max_speed[axis], bc.dec.eigenvalues.cwiseAbs().maxCoeff());
        } else {
          std::array<double, 2> xi = xc;
          xi[axis] += 0.5 * g.h[axis];
          Eigen::MatrixXd a = interface_matrix(axis, xi);
          detail::MatrixSplit sp = g.dim == 1 ? detail::eigen_split(a) : detail::rusanov_split(a);
          g.max_speed[axis] = std::max(g.max_speed[axis], sp.radius);
          const int east = axis == 0 ? g.cell_index(ix + 1, iy) : g.cell_index(ix, iy + 1);
          add_block(c, c, sp.minus, -inv_h);
          add_block(c, east, sp.minus, inv_h);
        }
      }
    }
  }

  const int dof = N * g.ncells;
  g.L.resize(dof, dof);
  g.L.setFromTriplets(trip.begin(), trip.end());
  g.LT = g.L.transpose();
  g.G.resize(dof, std::max(1, g.incoming_dim));
  g.G.setFromTriplets(gtrip.begin(), gtrip.end());
  g.GT = g.G.transpose();

  double speed_sum = 0.0;
  for (int d = 0; d < g.dim; ++d) speed_sum += g.max_speed[d] / g.h[d];
  g.dt_max = speed_sum > 0.0 ? cfl / speed_sum : std::numeric_limits<double>::infinity();
  return g;
}

/// One explicit transport step y - dt (L y - G u). The time step must satisfy
/// the CFL bound stored in the grid.
inline StateField transport_step(const Grid& g, const StateField& y, const Eigen::VectorXd& u,
                                 double dt) {
  if (y.size() != g.state_dim_total()) throw std::invalid_argument("transport_step: state size mismatch");
  if (dt <= 0.0 || dt > g.dt_max * (1.0 + 1e-12))
    throw std::invalid_argument("transport_step: time step violates the CFL bound");
  StateField out = y - dt * (g.L * y);
  if (g.incoming_dim > 0 && u.size() > 0) {
    if (u.size() != g.incoming_dim) throw std::invalid_argument("transport_step: control size mismatch");
    out += dt * (g.G * u);
  }
  return out;
}

/// Characteristic trace of a state at every boundary cell (zeroth-order: the
/// adjacent cell value split through the face decomposition).
inline BoundaryTrace extract_trace(const Grid& g, const StateField& y) {
  if (y.size() != g.state_dim_total()) throw std::invalid_argument("extract_trace: state size mismatch");
  BoundaryTrace tr;
  for (const FaceInfo& fi : g.faces) {
    for (const BoundaryCell& bc : fi.cells) {
      BoundaryTrace::Entry e{fi.face, bc.cell, {}, bc.dec.lambda_minus(), bc.area_weight};
      e.split = split_state(y.segment(bc.cell * g.N(), g.N()), bc.dec);
      tr.entries.push_back(std::move(e));
    }
  }
  return tr;
}

}  // namespace hypctl
