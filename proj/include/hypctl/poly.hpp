#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hypctl {

/// Maximum number of polynomial variables used anywhere in the toolkit:
/// up to two space coordinates plus time.
inline constexpr int kMaxVars = 3;

using Exponents = std::array<int, kMaxVars>;

namespace detail {

inline void enumerate_monomials_rec(int vars, int var, int remaining, Exponents& cur,
                                    std::vector<Exponents>& out) {
  if (var == vars - 1) {
    cur[var] = remaining;
    out.push_back(cur);
    return;
  }
  for (int p = remaining; p >= 0; --p) {
    cur[var] = p;
    enumerate_monomials_rec(vars, var + 1, remaining - p, cur, out);
  }
}

}  // namespace detail

/// Canonical monomial ordering: graded (total degree ascending), and within a
/// degree the leading variable carries the highest power first, e.g. for two
/// variables: 1, x1, x2, x1^2, x1*x2, x2^2.
inline std::vector<Exponents> monomial_basis(int vars, int degree) {
  if (vars < 1 || vars > kMaxVars) throw std::invalid_argument("monomial_basis: bad variable count");
  if (degree < 0) throw std::invalid_argument("monomial_basis: negative degree");
  std::vector<Exponents> out;
  Exponents cur{};
  for (int d = 0; d <= degree; ++d) detail::enumerate_monomials_rec(vars, 0, d, cur, out);
  return out;
}

/// Dense multivariate polynomial with a fixed variable count and total-degree
/// cap. Coefficients are stored in the canonical monomial ordering.
class Polynomial {
 public:
  Polynomial() = default;

  Polynomial(int vars, int degree)
      : vars_(vars), degree_(degree), basis_(monomial_basis(vars, degree)),
        coeffs_(basis_.size(), 0.0) {}

  static Polynomial constant(int vars, double value) {
    Polynomial p(vars, 0);
    p.coeffs_[0] = value;
    return p;
  }

  /// Builds c0 + sum_i c[i] * x_i.
  static Polynomial linear(int vars, double c0, std::span<const double> c) {
    if (static_cast<int>(c.size()) != vars) throw std::invalid_argument("Polynomial::linear: size mismatch");
    Polynomial p(vars, 1);
    p.coeffs_[0] = c0;
    for (int i = 0; i < vars; ++i) {
      Exponents e{};
      e[i] = 1;
      p.set_coefficient(e, c[i]);
    }
    return p;
  }

  static Polynomial from_coefficients(int vars, int degree, std::span<const double> coeffs) {
    Polynomial p(vars, degree);
    if (coeffs.size() != p.coeffs_.size())
      throw std::invalid_argument("Polynomial::from_coefficients: coefficient count mismatch");
    std::copy(coeffs.begin(), coeffs.end(), p.coeffs_.begin());
    return p;
  }

  int vars() const { return vars_; }
  int degree() const { return degree_; }
  const std::vector<Exponents>& basis() const { return basis_; }
  const std::vector<double>& coefficients() const { return coeffs_; }

  int index_of(const Exponents& e) const {
    for (std::size_t i = 0; i < basis_.size(); ++i)
      if (basis_[i] == e) return static_cast<int>(i);
    throw std::invalid_argument("Polynomial: exponent tuple outside basis");
  }

  void set_coefficient(const Exponents& e, double c) { coeffs_[index_of(e)] = c; }
  double coefficient(const Exponents& e) const { return coeffs_[index_of(e)]; }

  bool is_zero() const {
    return std::all_of(coeffs_.begin(), coeffs_.end(), [](double c) { return c == 0.0; });
  }

  double eval(std::span<const double> x) const {
    if (static_cast<int>(x.size()) < vars_) throw std::invalid_argument("Polynomial::eval: too few coordinates");
    double acc = 0.0;
    for (std::size_t i = 0; i < basis_.size(); ++i) {
      if (coeffs_[i] == 0.0) continue;
      double m = coeffs_[i];
      for (int v = 0; v < vars_; ++v)
        for (int k = 0; k < basis_[i][v]; ++k) m *= x[v];
      acc += m;
    }
    return acc;
  }

  /// Exact partial derivative; the result keeps the same variable count.
  Polynomial derivative(int var) const {
    if (var < 0 || var >= vars_) throw std::invalid_argument("Polynomial::derivative: bad variable");
    Polynomial out(vars_, std::max(0, degree_ - 1));
    for (std::size_t i = 0; i < basis_.size(); ++i) {
      const Exponents& e = basis_[i];
      if (e[var] == 0 || coeffs_[i] == 0.0) continue;
      Exponents d = e;
      d[var] -= 1;
      out.coeffs_[out.index_of(d)] += coeffs_[i] * e[var];
    }
    return out;
  }

  Polynomial operator+(const Polynomial& rhs) const {
    check_same_vars(rhs);
    Polynomial out(vars_, std::max(degree_, rhs.degree_));
    for (std::size_t i = 0; i < basis_.size(); ++i) out.coeffs_[out.index_of(basis_[i])] += coeffs_[i];
    for (std::size_t i = 0; i < rhs.basis_.size(); ++i)
      out.coeffs_[out.index_of(rhs.basis_[i])] += rhs.coeffs_[i];
    return out;
  }

  Polynomial operator*(const Polynomial& rhs) const {
    check_same_vars(rhs);
    Polynomial out(vars_, degree_ + rhs.degree_);
    for (std::size_t i = 0; i < basis_.size(); ++i) {
      if (coeffs_[i] == 0.0) continue;
      for (std::size_t j = 0; j < rhs.basis_.size(); ++j) {
        if (rhs.coeffs_[j] == 0.0) continue;
        Exponents e{};
        for (int v = 0; v < vars_; ++v) e[v] = basis_[i][v] + rhs.basis_[j][v];
        out.coeffs_[out.index_of(e)] += coeffs_[i] * rhs.coeffs_[j];
      }
    }
    return out;
  }

  Polynomial operator*(double s) const {
    Polynomial out = *this;
    for (double& c : out.coeffs_) c *= s;
    return out;
  }

  /// Upper bound for |d p / d x_var| over the box [lo, hi], obtained from the
  /// triangle inequality with each monomial bounded by its extreme coordinate
  /// magnitudes. Conservative but certified.
  double derivative_bound_on_box(int var, std::span<const double> lo, std::span<const double> hi) const {
    Polynomial d = derivative(var);
    double bound = 0.0;
    for (std::size_t i = 0; i < d.basis_.size(); ++i) {
      if (d.coeffs_[i] == 0.0) continue;
      double m = std::abs(d.coeffs_[i]);
      for (int v = 0; v < vars_; ++v) {
        double mag = std::max(std::abs(lo[v]), std::abs(hi[v]));
        for (int k = 0; k < d.basis_[i][v]; ++k) m *= mag;
      }
      bound += m;
    }
    return bound;
  }

 private:
  void check_same_vars(const Polynomial& rhs) const {
    if (vars_ != rhs.vars_) throw std::invalid_argument("Polynomial: variable count mismatch");
  }

  int vars_ = 1;
  int degree_ = 0;
  std::vector<Exponents> basis_ = monomial_basis(1, 0);
  std::vector<double> coeffs_ = {0.0};
};

struct BoxExtrema {
  double min_value = 0.0;
  double max_value = 0.0;
  std::array<double, 2> argmin{};
  std::array<double, 2> argmax{};
};

namespace detail {

inline void extrema_candidate(const Polynomial& p, std::span<const double> x, BoxExtrema& ex, bool& first) {
  double v = p.eval(x);
  if (first || v < ex.min_value) {
    ex.min_value = v;
    for (std::size_t i = 0; i < x.size() && i < 2; ++i) ex.argmin[i] = x[i];
  }
  if (first || v > ex.max_value) {
    ex.max_value = v;
    for (std::size_t i = 0; i < x.size() && i < 2; ++i) ex.argmax[i] = x[i];
  }
  first = false;
}

/// Critical point of a univariate quadratic restriction a + b t + c t^2 on
/// [lo, hi]; pushes it into the candidate set when it lies inside.
inline void quadratic_interior_candidates(double b, double c, double lo, double hi,
                                          std::vector<double>& out) {
  if (c != 0.0) {
    double t = -b / (2.0 * c);
    if (t > lo && t < hi) out.push_back(t);
  }
}

}  // namespace detail

/// Exact extrema of a polynomial of total degree <= 2 over a box in one or two
/// variables (vertices, edge critical points, interior stationary point).
inline BoxExtrema extrema_on_box(const Polynomial& p, std::span<const double> lo,
                                 std::span<const double> hi) {
  if (p.degree() > 2)
    throw std::invalid_argument("extrema_on_box: exact extrema implemented for degree <= 2 only");
  BoxExtrema ex;
  bool first = true;
  if (p.vars() == 1) {
    std::vector<double> cands = {lo[0], hi[0]};
    Exponents e1{};
    e1[0] = 1;
    Exponents e2{};
    e2[0] = 2;
    double b = p.degree() >= 1 ? p.coefficient(e1) : 0.0;
    double c = p.degree() >= 2 ? p.coefficient(e2) : 0.0;
    detail::quadratic_interior_candidates(b, c, lo[0], hi[0], cands);
    for (double t : cands) {
      double x[1] = {t};
      detail::extrema_candidate(p, x, ex, first);
    }
    return ex;
  }
  if (p.vars() != 2) throw std::invalid_argument("extrema_on_box: expected 1 or 2 variables");

  auto coeff = [&](int i, int j) {
    Exponents e{};
    e[0] = i;
    e[1] = j;
    return (i + j <= p.degree()) ? p.coefficient(e) : 0.0;
  };
  const double b1 = coeff(1, 0), b2 = coeff(0, 1);
  const double q11 = coeff(2, 0), q12 = coeff(1, 1), q22 = coeff(0, 2);

  // Vertices.
  for (double x0 : {lo[0], hi[0]})
    for (double x1 : {lo[1], hi[1]}) {
      double x[2] = {x0, x1};
      detail::extrema_candidate(p, x, ex, first);
    }
  // Edges x0 fixed: restriction is quadratic in x1.
  for (double x0 : {lo[0], hi[0]}) {
    std::vector<double> ts;
    detail::quadratic_interior_candidates(b2 + q12 * x0, q22, lo[1], hi[1], ts);
    for (double t : ts) {
      double x[2] = {x0, t};
      detail::extrema_candidate(p, x, ex, first);
    }
  }
  // Edges x1 fixed.
  for (double x1 : {lo[1], hi[1]}) {
    std::vector<double> ts;
    detail::quadratic_interior_candidates(b1 + q12 * x1, q11, lo[0], hi[0], ts);
    for (double t : ts) {
      double x[2] = {t, x1};
      detail::extrema_candidate(p, x, ex, first);
    }
  }
  // Interior stationary point: solve grad p = 0 for the quadratic part.
  const double det = 4.0 * q11 * q22 - q12 * q12;
  if (det != 0.0) {
    double x0 = (-2.0 * q22 * b1 + q12 * b2) / det;
    double x1 = (-2.0 * q11 * b2 + q12 * b1) / det;
    if (x0 > lo[0] && x0 < hi[0] && x1 > lo[1] && x1 < hi[1]) {
      double x[2] = {x0, x1};
      detail::extrema_candidate(p, x, ex, first);
    }
  }
  return ex;
}

}  // namespace hypctl
