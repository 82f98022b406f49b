#pragma once

#include <Eigen/Core>

#include <span>
#include <utility>
#include <vector>

#include "hybridtrack/state.hpp"

namespace hybridtrack {

/// Rows are trajectory priors, columns are detections.
struct CostMatrix {
  Eigen::MatrixXd values;

  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }
  double operator()(int r, int c) const { return values(r, c); }
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (row, column), ascending by row
  std::vector<int> unmatched_rows;
  std::vector<int> unmatched_cols;

  /// Sum of matched costs.
  double total_cost(const CostMatrix& costs) const;
};

CostMatrix build_cost_matrix(std::span<const StateVector> priors,
                             std::span<const Detection> detections, CostFunction which);

/// Repeatedly commits the globally cheapest remaining entry while its cost is
/// <= threshold. Ties go to the lower row, then the lower column.
MatchResult greedy_match(const CostMatrix& costs, double threshold);

/// Minimum-cost assignment on the zero-padded square matrix (O(n^3)). Every
/// row is matched when rows <= cols and vice versa.
MatchResult hungarian_match(const CostMatrix& costs);

}  // namespace hybridtrack
