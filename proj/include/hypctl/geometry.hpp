#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hypctl/poly.hpp"
#include "hypctl/system.hpp"

namespace hypctl {

/// Candidate weight function eta(x) (polynomial, degree <= 2) together with
/// its certified transversality constant and exact extrema over the domain.
struct WeightCandidate {
  Polynomial eta;
  std::vector<Polynomial> grad_eta;
  double c0 = 0.0;
  double eta_min = 0.0;
  double eta_max = 0.0;
  bool certified = false;
};

/// Outcome of the grid-plus-Lipschitz certification of the transversality
/// condition lambda_min(-sum A_i d_i eta) >= c0 > 0.
struct CertifyResult {
  bool ok = false;
  double c0 = 0.0;           ///< certified lower bound (grid minimum minus Lipschitz slack).
  double grid_min = 0.0;     ///< smallest sampled eigenvalue.
  double lipschitz_slack = 0.0;
  std::array<double, 2> witness{};  ///< sample point attaining the grid minimum.
};

/// Symbolic matrix field M(x) = -sum_i A_i(x) * d eta / d x_i(x); the
/// certification below asks for a uniformly positive smallest eigenvalue.
inline MatrixPolyField transversality_matrix(const SystemSpec& spec, const Polynomial& eta) {
  const int N = spec.state_dim;
  const int n = spec.space_dim;
  MatrixPolyField m(N, N, n, 0);
  bool started = false;
  for (int i = 0; i < n; ++i) {
    Polynomial gi = eta.derivative(i);
    for (int r = 0; r < N; ++r)
      for (int c = 0; c < N; ++c) {
        Polynomial term = spec.A[i].at(r, c) * gi * (-1.0);
        m.at(r, c) = started ? (m.at(r, c) + term) : term;
      }
    started = true;
  }
  return m;
}

/// Certifies the transversality condition by sampling lambda_min on a dense
/// grid (vertices included) and subtracting a certified Lipschitz slack
/// derived from coefficient bounds of the matrix entries.
inline CertifyResult certify_condition(const SystemSpec& spec, const Polynomial& eta,
                                       int points_per_dim = 64) {
  if (eta.vars() != spec.space_dim)
    throw std::invalid_argument("certify_condition: eta variable count mismatch");
  if (eta.degree() > 2)
    throw std::invalid_argument("certify_condition: eta must have degree <= 2");
  if (points_per_dim < 2) throw std::invalid_argument("certify_condition: needs >= 2 points per dim");

  const int n = spec.space_dim;
  MatrixPolyField m = transversality_matrix(spec, eta);

  // Lipschitz constant of lambda_min via the Frobenius bound on grad M.
  double frob_sq = 0.0;
  std::array<double, 2> lo{spec.domain.lower[0], spec.domain.lower[1]};
  std::array<double, 2> hi{spec.domain.upper[0], spec.domain.upper[1]};
  std::span<const double> los(lo.data(), static_cast<std::size_t>(n));
  std::span<const double> his(hi.data(), static_cast<std::size_t>(n));
  for (int r = 0; r < spec.state_dim; ++r)
    for (int c = 0; c < spec.state_dim; ++c)
      for (int v = 0; v < n; ++v) {
        double b = m.at(r, c).derivative_bound_on_box(v, los, his);
        frob_sq += b * b;
      }
  const double lipschitz = std::sqrt(frob_sq);

  // Covering radius of the sample grid (vertices are grid points).
  double cover_sq = 0.0;
  for (int d = 0; d < n; ++d) {
    double sp = spec.domain.extent(d) / (points_per_dim - 1);
    cover_sq += 0.25 * sp * sp;
  }
  const double cover = std::sqrt(cover_sq);

  CertifyResult res;
  res.lipschitz_slack = lipschitz * cover;
  double min_eig = std::numeric_limits<double>::infinity();
  const int total = n == 1 ? points_per_dim : points_per_dim * points_per_dim;
  std::vector<double> x(n, 0.0);
  for (int s = 0; s < total; ++s) {
    int rem = s;
    for (int d = 0; d < n; ++d) {
      int id = rem % points_per_dim;
      rem /= points_per_dim;
      x[d] = spec.domain.lower[d] + spec.domain.extent(d) * id / double(points_per_dim - 1);
    }
    Eigen::MatrixXd mx = m.eval(x);
    mx = 0.5 * (mx + mx.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mx, Eigen::EigenvaluesOnly);
    double lam = es.eigenvalues().minCoeff();
    if (lam < min_eig) {
      min_eig = lam;
      for (int d = 0; d < n; ++d) res.witness[static_cast<std::size_t>(d)] = x[d];
    }
  }
  res.grid_min = min_eig;
  res.c0 = min_eig - res.lipschitz_slack;
  res.ok = res.c0 > 0.0;
  return res;
}

/// Builds a WeightCandidate from eta, attaching the certified constant and
/// the exact extrema of eta over the box.
inline WeightCandidate make_weight(const SystemSpec& spec, const Polynomial& eta,
                                   int points_per_dim = 64) {
  CertifyResult cr = certify_condition(spec, eta, points_per_dim);
  WeightCandidate w;
  w.eta = eta;
  for (int i = 0; i < spec.space_dim; ++i) w.grad_eta.push_back(eta.derivative(i));
  std::array<double, 2> lo{spec.domain.lower[0], spec.domain.lower[1]};
  std::array<double, 2> hi{spec.domain.upper[0], spec.domain.upper[1]};
  BoxExtrema ex = extrema_on_box(eta, std::span<const double>(lo.data(), spec.space_dim),
                                 std::span<const double>(hi.data(), spec.space_dim));
  w.eta_min = ex.min_value;
  w.eta_max = ex.max_value;
  w.c0 = cr.c0;
  w.certified = cr.ok;
  return w;
}

/// Minimal control horizon (eta_max - eta_min) / c0 for a certified weight.
inline double minimal_time(const WeightCandidate& w) {
  if (!w.certified || w.c0 <= 0.0)
    throw std::invalid_argument("minimal_time: weight is not certified");
  return (w.eta_max - w.eta_min) / w.c0;
}

namespace detail {

inline Polynomial linear_eta(int n, std::span<const double> alpha) {
  std::vector<double> c(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = -alpha[i];
  return Polynomial::linear(n, 0.0, c);
}

}  // namespace detail

struct LinearEtaSearch {
  bool found = false;
  std::array<double, 2> alpha{};  ///< unit direction, eta = -alpha . x.
  WeightCandidate weight;         ///< best candidate even when not certified.
  double best_c0 = -std::numeric_limits<double>::infinity();
};

/// Searches eta = -alpha . x over unit directions: a sign scan in 1-D, a
/// coarse angular scan refined by golden-section search in 2-D.
inline LinearEtaSearch search_linear_eta(const SystemSpec& spec, int points_per_dim = 64,
                                         int coarse_angles = 128) {
  LinearEtaSearch out;
  const int n = spec.space_dim;
  auto c0_of = [&](std::span<const double> alpha) {
    return certify_condition(spec, detail::linear_eta(n, alpha), points_per_dim).c0;
  };
  if (n == 1) {
    for (double s : {1.0, -1.0}) {
      double a[1] = {s};
      double c0 = c0_of(a);
      if (c0 > out.best_c0) {
        out.best_c0 = c0;
        out.alpha = {s, 0.0};
      }
    }
  } else {
    const double two_pi = 2.0 * M_PI;
    auto c0_phi = [&](double phi) {
      double a[2] = {std::cos(phi), std::sin(phi)};
      return c0_of(a);
    };
    double best_phi = 0.0;
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < coarse_angles; ++k) {
      double phi = two_pi * k / coarse_angles;
      double v = c0_phi(phi);
      if (v > best) {
        best = v;
        best_phi = phi;
      }
    }
    // Golden-section refinement on the bracketing arc around the coarse best.
    double a = best_phi - two_pi / coarse_angles;
    double b = best_phi + two_pi / coarse_angles;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = c0_phi(x1), f2 = c0_phi(x2);
    for (int it = 0; it < 60 && (b - a) > 1e-12; ++it) {
      if (f1 < f2) {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + gr * (b - a);
        f2 = c0_phi(x2);
      } else {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - gr * (b - a);
        f1 = c0_phi(x1);
      }
    }
    best_phi = 0.5 * (a + b);
    out.best_c0 = c0_phi(best_phi);
    out.alpha = {std::cos(best_phi), std::sin(best_phi)};
  }
  std::span<const double> alpha(out.alpha.data(), static_cast<std::size_t>(n));
  if (n == 1) out.best_c0 = c0_of(alpha);
  out.weight = make_weight(spec, detail::linear_eta(n, alpha), points_per_dim);
  out.found = out.weight.certified;
  return out;
}

/// One sample along a bicharacteristic ray.
struct RaySample {
  double s = 0.0;
  std::array<double, 2> x{};
  std::array<double, 2> p{};  ///< covector (frequency) variable.
  double lambda = 0.0;
  double eta = 0.0;
};

/// A traced ray for one characteristic branch; exit_time is the first sample
/// parameter at which the ray left the closed domain (unset if it never did
/// within the horizon).
struct Ray {
  int branch = 0;
  std::vector<RaySample> samples;
  std::optional<double> exit_time;
  bool branch_ambiguous = false;  ///< eigenvector continuation dropped below the overlap threshold.
  double min_overlap = 1.0;
  bool momentum_out_of_range = false;  ///< |p| left [0.5, 2] x initial magnitude.
};

struct RaySeed {
  std::array<double, 2> x{};
  std::array<double, 2> p{};  ///< must be unit length.
  int branch = 1;             ///< 1-based, eigenvalues in descending order.
};

struct RayOptions {
  double dt = 1e-3;
  double horizon = 1.0;
  double overlap_threshold = 0.9;
};

namespace detail {

struct BranchState {
  double lambda = 0.0;
  Eigen::VectorXd r;  ///< unit representative eigenvector.
  double overlap = 1.0;
};

/// Eigen-decomposition of sum p_i A_i(x) with eigenvalues descending.
inline void symbol_eigen(const SystemSpec& spec, std::span<const double> x,
                         std::span<const double> p, Eigen::VectorXd& vals, Eigen::MatrixXd& vecs) {
  const int N = spec.state_dim;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(N, N);
  for (int i = 0; i < spec.space_dim; ++i) h += p[i] * spec.A[i].eval(x);
  h = 0.5 * (h + h.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  // Descending order.
  vals.resize(N);
  vecs.resize(N, N);
  for (int i = 0; i < N; ++i) {
    vals(i) = es.eigenvalues()(N - 1 - i);
    vecs.col(i) = es.eigenvectors().col(N - 1 - i);
  }
}

/// Continues a branch through possibly degenerate spectra: eigenvalues are
/// clustered, the previous representative is projected onto each cluster's
/// eigenspace, and the cluster with the largest projection wins. The overlap
/// reported is the projection norm, which is robust under multiplicity.
inline BranchState continue_branch(const SystemSpec& spec, std::span<const double> x,
                                   std::span<const double> p, const Eigen::VectorXd& r_prev) {
  Eigen::VectorXd vals;
  Eigen::MatrixXd vecs;
  symbol_eigen(spec, x, p, vals, vecs);
  const int N = spec.state_dim;
  const double ctol = 1e-8 * std::max(1.0, vals.cwiseAbs().maxCoeff());
  BranchState best;
  best.overlap = -1.0;
  int i = 0;
  while (i < N) {
    int j = i;
    while (j + 1 < N && std::abs(vals(j + 1) - vals(i)) <= ctol) ++j;
    Eigen::VectorXd proj = Eigen::VectorXd::Zero(N);
    double mean = 0.0;
    for (int k = i; k <= j; ++k) {
      proj += vecs.col(k).dot(r_prev) * vecs.col(k);
      mean += vals(k);
    }
    mean /= (j - i + 1);
    double nrm = proj.norm();
    if (nrm > best.overlap) {
      best.overlap = nrm;
      best.lambda = mean;
      best.r = nrm > 0.0 ? Eigen::VectorXd(proj / nrm) : Eigen::VectorXd(vecs.col(i));
    }
    i = j + 1;
  }
  return best;
}

}  // namespace detail

/// Traces the bicharacteristic ray dx/ds = grad_p lambda_k, dp/ds = -grad_x
/// lambda_k with a classical RK4 integrator. Gradients use the
/// Hellmann-Feynman identities with the continued eigenvector representative.
inline Ray trace_ray(const SystemSpec& spec, const WeightCandidate& weight, const RaySeed& seed,
                     const RayOptions& opt = {}) {
  const int n = spec.space_dim;
  const int N = spec.state_dim;
  if (seed.branch < 1 || seed.branch > N) throw std::invalid_argument("trace_ray: branch out of range");
  double p_initial_norm = 0.0;
  for (int i = 0; i < n; ++i)
    p_initial_norm += seed.p[static_cast<std::size_t>(i)] * seed.p[static_cast<std::size_t>(i)];
  p_initial_norm = std::sqrt(p_initial_norm);
  if (std::abs(p_initial_norm - 1.0) > 1e-9)
    throw std::invalid_argument("trace_ray: seed covector must have unit length");
  Ray ray;
  ray.branch = seed.branch;

  // Precompute the coefficient derivative fields d A_i / d x_j.
  std::vector<std::vector<MatrixPolyField>> dA(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) dA[static_cast<std::size_t>(i)].push_back(spec.A[i].derivative(j));

  Eigen::VectorXd vals;
  Eigen::MatrixXd vecs;
  std::span<const double> x0(seed.x.data(), static_cast<std::size_t>(n));
  std::span<const double> p0(seed.p.data(), static_cast<std::size_t>(n));
  detail::symbol_eigen(spec, x0, p0, vals, vecs);
  Eigen::VectorXd r_ref = vecs.col(seed.branch - 1);

  auto rhs = [&](const std::array<double, 2>& x, const std::array<double, 2>& p,
                 std::array<double, 2>& dx, std::array<double, 2>& dp, double& lambda) {
    std::span<const double> xs(x.data(), static_cast<std::size_t>(n));
    std::span<const double> ps(p.data(), static_cast<std::size_t>(n));
    detail::BranchState bs = detail::continue_branch(spec, xs, ps, r_ref);
    ray.min_overlap = std::min(ray.min_overlap, bs.overlap);
    lambda = bs.lambda;
    for (int j = 0; j < n; ++j) {
      // d lambda / d p_j = <r, A_j r>.
      Eigen::MatrixXd aj = spec.A[j].eval(xs);
      dx[static_cast<std::size_t>(j)] = bs.r.dot(0.5 * (aj + aj.transpose()) * bs.r);
      // d lambda / d x_j = <r, sum_i p_i dA_i/dx_j r>.
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(N, N);
      for (int i = 0; i < n; ++i) g += p[static_cast<std::size_t>(i)] * dA[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].eval(xs);
      g = 0.5 * (g + g.transpose());
      dp[static_cast<std::size_t>(j)] = -bs.r.dot(g * bs.r);
    }
    return bs;
  };

  std::array<double, 2> x = seed.x, p = seed.p;
  double s = 0.0;
  auto record = [&](double lambda) {
    RaySample smp;
    smp.s = s;
    smp.x = x;
    smp.p = p;
    smp.lambda = lambda;
    smp.eta = weight.eta.eval(std::span<const double>(x.data(), static_cast<std::size_t>(n)));
    ray.samples.push_back(smp);
  };

  {
    std::array<double, 2> dx{}, dp{};
    double lambda;
    rhs(x, p, dx, dp, lambda);
    record(lambda);
  }

  const int max_steps = static_cast<int>(std::ceil(opt.horizon / opt.dt));
  for (int step = 0; step < max_steps; ++step) {
    std::array<double, 2> k1x{}, k1p{}, k2x{}, k2p{}, k3x{}, k3p{}, k4x{}, k4p{};
    std::array<double, 2> xt{}, pt{};
    double lam;
    rhs(x, p, k1x, k1p, lam);
    for (int i = 0; i < n; ++i) {
      xt[i] = x[i] + 0.5 * opt.dt * k1x[i];
      pt[i] = p[i] + 0.5 * opt.dt * k1p[i];
    }
    rhs(xt, pt, k2x, k2p, lam);
    for (int i = 0; i < n; ++i) {
      xt[i] = x[i] + 0.5 * opt.dt * k2x[i];
      pt[i] = p[i] + 0.5 * opt.dt * k2p[i];
    }
    rhs(xt, pt, k3x, k3p, lam);
    for (int i = 0; i < n; ++i) {
      xt[i] = x[i] + opt.dt * k3x[i];
      pt[i] = p[i] + opt.dt * k3p[i];
    }
    rhs(xt, pt, k4x, k4p, lam);
    for (int i = 0; i < n; ++i) {
      x[i] += opt.dt / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
      p[i] += opt.dt / 6.0 * (k1p[i] + 2.0 * k2p[i] + 2.0 * k3p[i] + k4p[i]);
    }
    s += opt.dt;

    // Refresh the reference eigenvector at the accepted point.
    std::array<double, 2> dxe{}, dpe{};
    double lambda_new;
    detail::BranchState bs = rhs(x, p, dxe, dpe, lambda_new);
    r_ref = bs.r;
    record(lambda_new);

    double pn = 0.0;
    for (int i = 0; i < n; ++i) pn += p[i] * p[i];
    pn = std::sqrt(pn);
    if (pn < 0.5 * p_initial_norm || pn > 2.0 * p_initial_norm) ray.momentum_out_of_range = true;

    if (!spec.domain.contains(std::span<const double>(x.data(), static_cast<std::size_t>(n)))) {
      ray.exit_time = s;
      break;
    }
  }
  ray.branch_ambiguous = ray.min_overlap < opt.overlap_threshold;
  return ray;
}

inline std::vector<Ray> trace_rays(const SystemSpec& spec, const WeightCandidate& weight,
                                   const std::vector<RaySeed>& seeds, const RayOptions& opt = {}) {
  std::vector<Ray> rays;
  rays.reserve(seeds.size());
  for (const RaySeed& s : seeds) rays.push_back(trace_ray(spec, weight, s, opt));
  return rays;
}

}  // namespace hypctl
