#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypctl/system.hpp"

namespace hypctl {

namespace detail {

inline Eigen::MatrixXd matrix_sqrt_spd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("matrix_sqrt_spd: matrix not positive definite");
  return es.operatorSqrt();
}

}  // namespace detail

/// Scalar advection with unit speed on [0, 1]; the smallest meaningful
/// configuration and the reference case for the control tests.
inline SystemSpec make_scalar_transport(double speed = 1.0) {
  SystemSpec s;
  s.label = "scalar-transport";
  s.state_dim = 1;
  s.space_dim = 1;
  s.domain = {1, {0.0, 0.0}, {1.0, 1.0}};
  Eigen::MatrixXd a(1, 1);
  a << speed;
  s.A = {MatrixPolyField::constant(a, 1)};
  s.B1 = MatrixPolyField::zero(1, 1, 2);
  s.B2 = MatrixPolyField::zero(1, 1, 2);
  s.B3 = MatrixPolyField::zero(1, 1, 2);
  return s;
}

/// Age-structured epidemic model, linearized around an endemic state: three
/// compartments advected in age with unit speed, coupled through the drift and
/// perturbed by multiplicative noise.
inline SystemSpec make_sir_age() {
  SystemSpec s;
  s.label = "sir-age";
  s.state_dim = 3;
  s.space_dim = 1;
  s.domain = {1, {0.0, 0.0}, {1.0, 1.0}};
  s.A = {MatrixPolyField::constant(Eigen::MatrixXd::Identity(3, 3), 1)};
  Eigen::MatrixXd b1(3, 3);
  // Transmission / recovery / mortality couplings at the linearization point.
  b1 << -0.4, -0.3, 0.0,
         0.3,  0.0, 0.0,
         0.0,  0.2, -0.1;
  s.B1 = MatrixPolyField::constant(b1, 2);
  s.B2 = MatrixPolyField::constant(0.05 * Eigen::MatrixXd::Identity(3, 3), 2);
  s.B3 = MatrixPolyField::zero(3, 3, 2);
  return s;
}

/// Linearized traffic flow in symmetrizing variables. The raw quasilinear
/// system is pushed through the congruence with the square root of the
/// symmetrizer, which makes the flux matrix symmetric with eigenvalues
/// {v0, v0 - rho0 P'(rho0)}.
inline SystemSpec make_traffic_free(double rho0 = 1.0, double v0 = 1.0, double dp = 0.5,
                                    double dv = -0.5, double tau = 1.0) {
  if (!(v0 - rho0 * dp > 0.0))
    throw std::invalid_argument("make_traffic_free: free-flow regime requires v0 > rho0 P'(rho0)");
  Eigen::MatrixXd a0(2, 2), a1(2, 2), b1(2, 2);
  a0 << dp, 1.0, 1.0, 2.0 / dp;              // symmetrizer
  a1 << v0, 1.0, 0.0, v0 - rho0 * dp;        // raw flux
  b1 << 0.0, 0.0, dv / tau, -1.0 / tau;      // relaxation toward the desired speed
  Eigen::MatrixXd r = detail::matrix_sqrt_spd(a0);
  Eigen::MatrixXd rinv = r.inverse();
  Eigen::MatrixXd at = r * a1 * rinv;
  at = 0.5 * (at + at.transpose());  // symmetric up to roundoff by construction
  SystemSpec s;
  s.label = "traffic-free";
  s.state_dim = 2;
  s.space_dim = 1;
  s.domain = {1, {0.0, 0.0}, {1.0, 1.0}};
  s.A = {MatrixPolyField::constant(at, 1)};
  s.B1 = MatrixPolyField::constant(r * b1 * rinv, 2);
  s.B2 = MatrixPolyField::constant(0.02 * Eigen::MatrixXd::Identity(2, 2), 2);
  s.B3 = MatrixPolyField::zero(2, 2, 2);
  return s;
}

/// Linearized shallow water equations around a uniform flow (U0, V0) with
/// wave speed sqrt(g H0). Torrential (supercritical) flow has
/// U0^2 + V0^2 > g H0.
inline SystemSpec make_shallow_water(double u0, double v0, double g, double h0,
                                     const std::string& label) {
  const double c = std::sqrt(g * h0);
  Eigen::MatrixXd a1(3, 3), a2(3, 3);
  a1 << u0, c, 0.0,
        c, u0, 0.0,
        0.0, 0.0, u0;
  a2 << v0, 0.0, c,
        0.0, v0, 0.0,
        c, 0.0, v0;
  SystemSpec s;
  s.label = label;
  s.state_dim = 3;
  s.space_dim = 2;
  s.domain = {2, {0.0, 0.0}, {1.0, 1.0}};
  s.A = {MatrixPolyField::constant(a1, 2), MatrixPolyField::constant(a2, 2)};
  s.B1 = MatrixPolyField::zero(3, 3, 3);
  s.B2 = MatrixPolyField::constant(0.05 * Eigen::MatrixXd::Identity(3, 3), 3);
  s.B3 = MatrixPolyField::zero(3, 3, 3);
  return s;
}

inline SystemSpec make_shallow_water_torrential() {
  return make_shallow_water(2.0, 0.0, 10.0, 0.1, "shallow-water-torrential");
}

inline SystemSpec make_shallow_water_subcritical() {
  return make_shallow_water(0.5, 0.0, 10.0, 0.1, "shallow-water-subcritical");
}

/// Linearized isentropic gas flow around a uniform supersonic velocity field
/// u0 with sound speed c0; state is (pressure-like, velocity..., entropy-like).
inline SystemSpec make_gas_supersonic(double rho0 = 1.0, double c0 = 1.0, double u01 = 2.0,
                                      double u02 = 0.0) {
  if (u01 * u01 + u02 * u02 <= c0 * c0)
    throw std::invalid_argument("make_gas_supersonic: flow must be supersonic");
  const int n = 2;
  const int N = n + 2;
  auto block = [&](double ui, int axis) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(N, N);
    a(0, 0) = ui / (rho0 * c0 * c0);
    a(0, 1 + axis) = 1.0;
    a(1 + axis, 0) = 1.0;
    a.block(1, 1, n, n) = rho0 * ui * Eigen::MatrixXd::Identity(n, n);
    a(N - 1, N - 1) = ui;
    return a;
  };
  SystemSpec s;
  s.label = "gas-supersonic";
  s.state_dim = N;
  s.space_dim = 2;
  s.domain = {2, {0.0, 0.0}, {1.0, 1.0}};
  s.A = {MatrixPolyField::constant(block(u01, 0), 2),
         MatrixPolyField::constant(block(u02, 1), 2)};
  s.B1 = MatrixPolyField::constant(0.05 * Eigen::MatrixXd::Identity(N, N), 3);
  s.B2 = MatrixPolyField::constant(0.02 * Eigen::MatrixXd::Identity(N, N), 3);
  s.B3 = MatrixPolyField::zero(N, N, 3);
  return s;
}

inline std::vector<std::string> registry_labels() {
  return {"scalar-transport", "sir-age", "traffic-free", "shallow-water-torrential",
          "shallow-water-subcritical", "gas-supersonic"};
}

inline SystemSpec make_system(const std::string& label) {
  if (label == "scalar-transport") return make_scalar_transport();
  if (label == "sir-age") return make_sir_age();
  if (label == "traffic-free") return make_traffic_free();
  if (label == "shallow-water-torrential") return make_shallow_water_torrential();
  if (label == "shallow-water-subcritical") return make_shallow_water_subcritical();
  if (label == "gas-supersonic") return make_gas_supersonic();
  throw std::invalid_argument("make_system: unknown label '" + label + "'");
}

}  // namespace hypctl
