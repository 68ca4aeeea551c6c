#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypctl/poly.hpp"

namespace hypctl {

/// Axis-aligned interval (1-D) or box (2-D) domain.
struct Domain {
  int dim = 1;
  std::array<double, 2> lower{0.0, 0.0};
  std::array<double, 2> upper{1.0, 1.0};

  void validate() const {
    if (dim < 1 || dim > 2) throw std::invalid_argument("Domain: dim must be 1 or 2");
    for (int i = 0; i < dim; ++i)
      if (!(lower[i] < upper[i])) throw std::invalid_argument("Domain: lower must be < upper");
  }

  bool contains(std::span<const double> x, double tol = 0.0) const {
    for (int i = 0; i < dim; ++i)
      if (x[i] < lower[i] - tol || x[i] > upper[i] + tol) return false;
    return true;
  }

  double extent(int i) const { return upper[i] - lower[i]; }
};

/// Identifier for a boundary face of the domain; a 1-D interval has Left and
/// Right only.
enum class Face { Left = 0, Right = 1, Bottom = 2, Top = 3 };

inline const char* face_name(Face f) {
  switch (f) {
    case Face::Left: return "left";
    case Face::Right: return "right";
    case Face::Bottom: return "bottom";
    case Face::Top: return "top";
  }
  return "?";
}

/// Outward unit normal of a face (2 components; the second is unused in 1-D).
inline std::array<double, 2> face_normal(Face f) {
  switch (f) {
    case Face::Left: return {-1.0, 0.0};
    case Face::Right: return {1.0, 0.0};
    case Face::Bottom: return {0.0, -1.0};
    case Face::Top: return {0.0, 1.0};
  }
  return {0.0, 0.0};
}

/// Matrix-valued polynomial field; every entry is a Polynomial over the same
/// variables (space only for the flux matrices, space plus time for the
/// zeroth-order coefficients).
class MatrixPolyField {
 public:
  MatrixPolyField() = default;
  MatrixPolyField(int rows, int cols, int vars, int degree)
      : rows_(rows), cols_(cols), entries_(static_cast<std::size_t>(rows) * cols,
                                           Polynomial(vars, degree)) {}

  static MatrixPolyField constant(const Eigen::MatrixXd& m, int vars) {
    MatrixPolyField f(static_cast<int>(m.rows()), static_cast<int>(m.cols()), vars, 0);
    for (int i = 0; i < f.rows_; ++i)
      for (int j = 0; j < f.cols_; ++j) f.at(i, j) = Polynomial::constant(vars, m(i, j));
    return f;
  }

  static MatrixPolyField zero(int rows, int cols, int vars) {
    return MatrixPolyField(rows, cols, vars, 0);
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int vars() const { return entries_.empty() ? 0 : entries_.front().vars(); }

  Polynomial& at(int i, int j) { return entries_[static_cast<std::size_t>(i) * cols_ + j]; }
  const Polynomial& at(int i, int j) const {
    return entries_[static_cast<std::size_t>(i) * cols_ + j];
  }

  bool is_zero() const {
    for (const Polynomial& p : entries_)
      if (!p.is_zero()) return false;
    return true;
  }

  Eigen::MatrixXd eval(std::span<const double> x) const {
    Eigen::MatrixXd m(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) m(i, j) = at(i, j).eval(x);
    return m;
  }

  /// Entry-wise partial derivative field.
  MatrixPolyField derivative(int var) const {
    MatrixPolyField out = *this;
    for (Polynomial& p : out.entries_) p = p.derivative(var);
    return out;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Polynomial> entries_;
};

/// Full description of one first-order system: state dimension, domain,
/// symmetric flux matrices A_i(x) and zeroth-order coefficients B1, B2, B3
/// (functions of space and time; B2 multiplies the state in the noise term,
/// B3 routes the distributed control into the drift).
struct SystemSpec {
  std::string label;
  int state_dim = 1;
  int space_dim = 1;
  Domain domain;
  std::vector<MatrixPolyField> A;  ///< space_dim matrices, entries polynomial in x.
  MatrixPolyField B1, B2, B3;      ///< entries polynomial in (x, t); may be all-zero.

  void validate_shapes() const {
    domain.validate();
    if (state_dim < 1) throw std::invalid_argument("SystemSpec: state_dim must be positive");
    if (space_dim != domain.dim) throw std::invalid_argument("SystemSpec: space_dim/domain mismatch");
    if (static_cast<int>(A.size()) != space_dim)
      throw std::invalid_argument("SystemSpec: expected one flux matrix per space dimension");
    for (const MatrixPolyField& a : A)
      if (a.rows() != state_dim || a.cols() != state_dim)
        throw std::invalid_argument("SystemSpec: flux matrix shape mismatch");
    for (const MatrixPolyField* b : {&B1, &B2, &B3})
      if (b->rows() != state_dim || b->cols() != state_dim)
        throw std::invalid_argument("SystemSpec: coefficient matrix shape mismatch");
  }
};

/// Pointwise values of all coefficient fields. Flux matrices are symmetrized;
/// the largest asymmetry encountered is reported so callers can warn.
struct Coefficients {
  std::vector<Eigen::MatrixXd> A;
  Eigen::MatrixXd B1, B2, B3;
  double max_asymmetry = 0.0;
};

/// Asymmetry above this threshold indicates an invalid flux field.
inline constexpr double kSymmetryTol = 1e-12;

inline Coefficients evaluate_coefficients(const SystemSpec& spec, std::span<const double> x,
                                          double t) {
  if (!spec.domain.contains(x, 1e-12))
    throw std::domain_error("evaluate_coefficients: point outside the domain");
  Coefficients c;
  c.A.reserve(spec.A.size());
  for (const MatrixPolyField& f : spec.A) {
    Eigen::MatrixXd m = f.eval(x);
    c.max_asymmetry = std::max(c.max_asymmetry, (m - m.transpose()).cwiseAbs().maxCoeff());
    c.A.push_back(0.5 * (m + m.transpose()));
  }
  std::array<double, kMaxVars> xt{};
  for (int i = 0; i < spec.space_dim; ++i) xt[static_cast<std::size_t>(i)] = x[i];
  xt[static_cast<std::size_t>(spec.space_dim)] = t;
  std::span<const double> xts(xt.data(), static_cast<std::size_t>(spec.space_dim) + 1);
  c.B1 = spec.B1.eval(xts);
  c.B2 = spec.B2.eval(xts);
  c.B3 = spec.B3.eval(xts);
  return c;
}

/// Characteristic decomposition of a boundary flux matrix sum(nu_i A_i):
/// orthogonal Pi whose columns are eigenvectors ordered positive block first
/// (descending), then the zero block, then the negative block (descending).
struct BoundaryDecomposition {
  Eigen::MatrixXd Pi;           ///< orthogonal, columns in block order.
  Eigen::VectorXd eigenvalues;  ///< same ordering as the columns of Pi.
  int n_plus = 0, n_zero = 0, n_minus = 0;

  Eigen::VectorXd lambda_plus() const { return eigenvalues.head(n_plus); }
  Eigen::VectorXd lambda_minus() const { return eigenvalues.tail(n_minus); }
};

/// Tolerance below which an eigenvalue is classified as a zero characteristic.
inline constexpr double kZeroEigenvalueTol = 1e-9;

inline BoundaryDecomposition boundary_decomposition(const Eigen::MatrixXd& m,
                                                    double zero_tol = kZeroEigenvalueTol) {
  if (m.rows() != m.cols()) throw std::invalid_argument("boundary_decomposition: matrix not square");
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10) throw std::invalid_argument("boundary_decomposition: matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success)
    throw std::runtime_error("boundary_decomposition: eigendecomposition failed");

  const int n = static_cast<int>(m.rows());
  struct Pair {
    double value;
    Eigen::VectorXd vec;
    int cls;  // 0 = positive, 1 = zero, 2 = negative
  };
  std::vector<Pair> pairs;
  pairs.reserve(n);
  for (int i = 0; i < n; ++i) {
    double v = es.eigenvalues()(i);
    int cls = std::abs(v) <= zero_tol ? 1 : (v > 0.0 ? 0 : 2);
    pairs.push_back({v, es.eigenvectors().col(i), cls});
  }
  // Blocks in order positive/zero/negative, each sorted descending; the sort
  // is stable so equal eigenvalues keep the solver's deterministic order.
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.cls != b.cls) return a.cls < b.cls;
    return a.value > b.value;
  });

  BoundaryDecomposition dec;
  dec.Pi.resize(n, n);
  dec.eigenvalues.resize(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v = pairs[i].vec;
    // Deterministic sign: make the first non-negligible component positive.
    const double scale = v.cwiseAbs().maxCoeff();
    for (int r = 0; r < n; ++r) {
      if (std::abs(v(r)) > 1e-12 * scale) {
        if (v(r) < 0.0) v = -v;
        break;
      }
    }
    dec.Pi.col(i) = v;
    dec.eigenvalues(i) = pairs[i].value;
    switch (pairs[i].cls) {
      case 0: ++dec.n_plus; break;
      case 1: ++dec.n_zero; break;
      default: ++dec.n_minus; break;
    }
  }
  return dec;
}

/// Identifies the unique face containing a boundary point; corner points (on
/// two faces at once) are rejected.
inline Face face_of_boundary_point(const Domain& dom, std::span<const double> x,
                                   double tol = 1e-12) {
  std::vector<Face> hits;
  auto scaled = [&](int i) { return tol * std::max(1.0, dom.extent(i)); };
  if (std::abs(x[0] - dom.lower[0]) <= scaled(0)) hits.push_back(Face::Left);
  if (std::abs(x[0] - dom.upper[0]) <= scaled(0)) hits.push_back(Face::Right);
  if (dom.dim == 2) {
    if (std::abs(x[1] - dom.lower[1]) <= scaled(1)) hits.push_back(Face::Bottom);
    if (std::abs(x[1] - dom.upper[1]) <= scaled(1)) hits.push_back(Face::Top);
  }
  if (hits.empty()) throw std::invalid_argument("face_of_boundary_point: not a boundary point");
  if (hits.size() > 1) throw std::invalid_argument("face_of_boundary_point: corner points have no unique normal");
  return hits.front();
}

/// Boundary flux matrix sum(nu_i A_i(x)) at a boundary point x.
inline Eigen::MatrixXd boundary_flux_matrix(const SystemSpec& spec, std::span<const double> x,
                                            double tol = 1e-12) {
  Face f = face_of_boundary_point(spec.domain, x, tol);
  auto nu = face_normal(f);
  Coefficients c = evaluate_coefficients(spec, x, 0.0);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(spec.state_dim, spec.state_dim);
  for (int i = 0; i < spec.space_dim; ++i) m += nu[static_cast<std::size_t>(i)] * c.A[i];
  return m;
}

/// State split into characteristic blocks: zeta = Pi^T y.
struct CharacteristicSplit {
  Eigen::VectorXd plus, zero, minus;
};

inline CharacteristicSplit split_state(const Eigen::VectorXd& y, const BoundaryDecomposition& dec) {
  if (y.size() != dec.Pi.rows()) throw std::invalid_argument("split_state: dimension mismatch");
  Eigen::VectorXd zeta = dec.Pi.transpose() * y;
  CharacteristicSplit s;
  s.plus = zeta.head(dec.n_plus);
  s.zero = zeta.segment(dec.n_plus, dec.n_zero);
  s.minus = zeta.tail(dec.n_minus);
  return s;
}

inline Eigen::VectorXd recompose_state(const CharacteristicSplit& s,
                                       const BoundaryDecomposition& dec) {
  Eigen::VectorXd zeta(dec.Pi.rows());
  zeta.head(dec.n_plus) = s.plus;
  zeta.segment(dec.n_plus, dec.n_zero) = s.zero;
  zeta.tail(dec.n_minus) = s.minus;
  return dec.Pi * zeta;
}

/// Result of sampling-based validation of a SystemSpec.
struct SpecValidation {
  bool ok = true;
  double max_asymmetry = 0.0;
  bool has_zero_characteristics = false;   ///< some face has n_zero > 0.
  std::vector<std::string> failures;       ///< invariant violations; non-empty iff !ok.
  std::vector<std::string> warnings;       ///< informational findings.
};

/// Samples the flux fields over the domain and the boundary decompositions on
/// every face; collects warnings (zero characteristics) and hard failures
/// (asymmetry, non-finite entries).
inline SpecValidation validate_spec(const SystemSpec& spec, int samples_per_dim = 9) {
  spec.validate_shapes();
  SpecValidation v;
  const int n = spec.space_dim;
  std::vector<int> idx(n, 0);
  std::vector<double> x(n, 0.0);
  const int total = n == 1 ? samples_per_dim : samples_per_dim * samples_per_dim;
  for (int s = 0; s < total; ++s) {
    int rem = s;
    for (int d = 0; d < n; ++d) {
      idx[d] = rem % samples_per_dim;
      rem /= samples_per_dim;
      x[d] = spec.domain.lower[d] +
             spec.domain.extent(d) * idx[d] / static_cast<double>(samples_per_dim - 1);
    }
    Coefficients c = evaluate_coefficients(spec, x, 0.0);
    v.max_asymmetry = std::max(v.max_asymmetry, c.max_asymmetry);
    for (const Eigen::MatrixXd& a : c.A)
      if (!a.allFinite()) {
        v.ok = false;
        v.failures.push_back("non-finite flux entries");
      }
  }
  if (v.max_asymmetry > kSymmetryTol) {
    v.ok = false;
    v.failures.push_back("flux matrices exceed the symmetry tolerance");
  }
  // Face decompositions at face midpoints.
  std::vector<Face> faces = {Face::Left, Face::Right};
  if (n == 2) {
    faces.push_back(Face::Bottom);
    faces.push_back(Face::Top);
  }
  for (Face f : faces) {
    std::vector<double> p(n, 0.0);
    for (int d = 0; d < n; ++d) p[d] = 0.5 * (spec.domain.lower[d] + spec.domain.upper[d]);
    auto nu = face_normal(f);
    for (int d = 0; d < n; ++d)
      if (nu[static_cast<std::size_t>(d)] != 0.0)
        p[d] = nu[static_cast<std::size_t>(d)] < 0 ? spec.domain.lower[d] : spec.domain.upper[d];
    BoundaryDecomposition dec = boundary_decomposition(boundary_flux_matrix(spec, p));
    if (dec.n_zero > 0) {
      v.has_zero_characteristics = true;
      v.warnings.push_back(std::string("face ") + face_name(f) +
                           " carries zero characteristics; those components are uncontrolled");
    }
  }
  return v;
}

}  // namespace hypctl
