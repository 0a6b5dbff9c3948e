#pragma once

#include <vector>

#include <Eigen/Dense>

namespace bddm {

struct AssignmentResult {
  std::vector<int> row_to_col;
  double total_cost = 0.0;
  /// Dual potentials with u_i + v_j <= c_ij everywhere and equality on the matching.
  Eigen::VectorXd u;
  Eigen::VectorXd v;
};

/// Minimum-cost perfect matching of a square cost matrix (shortest augmenting
/// paths with potentials, O(n^3)).
AssignmentResult solve_assignment(const Eigen::MatrixXd& cost);

}  // namespace bddm
