#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hypctl {

/// Exhaustive binary scenario tree for a Brownian driver: every node at level
/// l has two children reached by increments +/- sqrt(dt), so each of the 2^M
/// leaf paths carries probability 2^-M and the one-step moments E[dW] = 0,
/// E[dW^2] = dt hold exactly.
struct ScenarioTree {
  int depth = 1;     ///< number of time steps M.
  double horizon = 1.0;

  ScenarioTree() = default;
  ScenarioTree(int m, double t) : depth(m), horizon(t) {
    if (m < 1 || m > 24) throw std::invalid_argument("ScenarioTree: depth must be in [1, 24]");
    if (!(t > 0.0)) throw std::invalid_argument("ScenarioTree: horizon must be positive");
  }

  double dt() const { return horizon / depth; }
  double sqrt_dt() const { return std::sqrt(dt()); }

  int num_levels() const { return depth + 1; }
  std::int64_t nodes_at(int level) const { return std::int64_t{1} << level; }
  std::int64_t num_leaves() const { return nodes_at(depth); }
  std::int64_t num_nodes() const { return (std::int64_t{2} << depth) - 1; }

  /// Node ids are level-order: id = 2^level - 1 + path.
  std::int64_t node_id(int level, std::int64_t path) const {
    return (std::int64_t{1} << level) - 1 + path;
  }
  std::int64_t child(std::int64_t id, int sign_bit) const { return 2 * id + 1 + sign_bit; }
  std::int64_t parent(std::int64_t id) const { return (id - 1) / 2; }

  static int level_of(std::int64_t id) {
    int l = 0;
    while ((std::int64_t{2} << l) - 1 <= id) ++l;
    return l;
  }
  std::int64_t path_of(std::int64_t id) const { return id - ((std::int64_t{1} << level_of(id)) - 1); }

  /// Brownian increment carried by the edge into a child node.
  double increment_into(std::int64_t child_id) const {
    return (child_id % 2 == 0) ? sqrt_dt() : -sqrt_dt();
  }

  double probability(int level) const { return std::ldexp(1.0, -level); }

  /// Brownian value at a node (sum of the increments along its path).
  double brownian_at(std::int64_t id) const {
    double w = 0.0;
    std::int64_t cur = id;
    while (cur > 0) {
      w += increment_into(cur);
      cur = parent(cur);
    }
    return w;
  }

  /// Path encoding as a string of increment signs, root = empty string.
  std::string path_string(std::int64_t id) const {
    std::string s;
    std::int64_t cur = id;
    while (cur > 0) {
      s.push_back(cur % 2 == 0 ? '+' : '-');
      cur = parent(cur);
    }
    std::reverse(s.begin(), s.end());
    return s;
  }
};

/// Vector-valued process defined on tree nodes for levels [0, max_level].
struct AdaptedProcess {
  AdaptedProcess() = default;
  AdaptedProcess(const ScenarioTree& tree, int max_level, int dim)
      : max_level(max_level), dim(dim),
        values(static_cast<std::size_t>(tree.node_id(max_level, 0) + tree.nodes_at(max_level)),
               Eigen::VectorXd::Zero(dim)) {}

  int max_level = 0;
  int dim = 0;
  std::vector<Eigen::VectorXd> values;

  Eigen::VectorXd& at(std::int64_t id) { return values[static_cast<std::size_t>(id)]; }
  const Eigen::VectorXd& at(std::int64_t id) const { return values[static_cast<std::size_t>(id)]; }
};

/// Expectation across a level, computed by a hierarchical pairwise reduction
/// toward the root. The reduction keeps floating-point cancellation tight
/// (errors stay near machine epsilon times the depth) and matches the
/// conditional-expectation structure of the tree.
inline Eigen::VectorXd level_expectation(const ScenarioTree& tree, const AdaptedProcess& p,
                                         int level) {
  if (level > p.max_level) throw std::invalid_argument("level_expectation: level out of range");
  std::vector<Eigen::VectorXd> buf;
  buf.reserve(static_cast<std::size_t>(tree.nodes_at(level)));
  for (std::int64_t k = 0; k < tree.nodes_at(level); ++k)
    buf.push_back(p.at(tree.node_id(level, k)));
  while (buf.size() > 1) {
    for (std::size_t i = 0; i + 1 < buf.size(); i += 2) buf[i / 2] = 0.5 * (buf[i] + buf[i + 1]);
    buf.resize(buf.size() / 2);
  }
  return buf.empty() ? Eigen::VectorXd() : buf.front();
}

/// Direct probability-weighted expectation across a level (flat summation);
/// used to cross-check the hierarchical reduction.
inline Eigen::VectorXd level_expectation_flat(const ScenarioTree& tree, const AdaptedProcess& p,
                                              int level) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(p.dim);
  const double w = tree.probability(level);
  for (std::int64_t k = 0; k < tree.nodes_at(level); ++k) acc += w * p.at(tree.node_id(level, k));
  return acc;
}

/// Probability-weighted expectation of squared norms at a level (with an
/// optional per-component weight vector applied pointwise).
inline double level_expected_sqnorm(const ScenarioTree& tree, const AdaptedProcess& p, int level) {
  double acc = 0.0;
  const double w = tree.probability(level);
  for (std::int64_t k = 0; k < tree.nodes_at(level); ++k)
    acc += w * p.at(tree.node_id(level, k)).squaredNorm();
  return acc;
}

}  // namespace hypctl
