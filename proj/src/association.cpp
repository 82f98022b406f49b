#include "hybridtrack/association.hpp"

#include <algorithm>
#include <limits>
#include <tuple>

#include "hybridtrack/errors.hpp"
#include "hybridtrack/geometry.hpp"

namespace hybridtrack {

namespace {

void require_finite(const CostMatrix& costs) {
  if (!costs.values.allFinite()) throw InvalidValueError("cost matrix has non-finite entries");
}

MatchResult finish(std::vector<std::pair<int, int>> pairs, int rows, int cols) {
  MatchResult out;
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> row_used(rows, false);
  std::vector<bool> col_used(cols, false);
  for (const auto& [r, c] : pairs) {
    row_used[r] = true;
    col_used[c] = true;
  }
  for (int r = 0; r < rows; ++r) {
    if (!row_used[r]) out.unmatched_rows.push_back(r);
  }
  for (int c = 0; c < cols; ++c) {
    if (!col_used[c]) out.unmatched_cols.push_back(c);
  }
  out.pairs = std::move(pairs);
  return out;
}

}  // namespace

double MatchResult::total_cost(const CostMatrix& costs) const {
  double sum = 0.0;
  for (const auto& [r, c] : pairs) sum += costs(r, c);
  return sum;
}

CostMatrix build_cost_matrix(std::span<const StateVector> priors,
                             std::span<const Detection> detections, CostFunction which) {
  CostMatrix m;
  m.values.resize(static_cast<Eigen::Index>(priors.size()),
                  static_cast<Eigen::Index>(detections.size()));
  for (std::size_t j = 0; j < priors.size(); ++j) {
    for (std::size_t i = 0; i < detections.size(); ++i) {
      m.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
          geometry::cost(priors[j], detections[i].state, which);
    }
  }
  return m;
}

MatchResult greedy_match(const CostMatrix& costs, double threshold) {
  require_finite(costs);
  const int rows = costs.rows();
  const int cols = costs.cols();
  // Visiting admissible entries in (cost, row, col) order and committing
  // whenever both sides are free is the same as repeatedly taking the global
  // minimum of the shrinking matrix.
  std::vector<std::tuple<double, int, int>> entries;
  entries.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (costs(r, c) <= threshold) entries.emplace_back(costs(r, c), r, c);
    }
  }
  std::sort(entries.begin(), entries.end());
  std::vector<bool> row_used(rows, false);
  std::vector<bool> col_used(cols, false);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [cost, r, c] : entries) {
    if (row_used[r] || col_used[c]) continue;
    row_used[r] = true;
    col_used[c] = true;
    pairs.emplace_back(r, c);
  }
  return finish(std::move(pairs), rows, cols);
}

MatchResult hungarian_match(const CostMatrix& costs) {
  require_finite(costs);
  const int rows = costs.rows();
  const int cols = costs.cols();
  const int n = std::max(rows, cols);
  if (n == 0) return {};
  auto at = [&](int r, int c) { return (r < rows && c < cols) ? costs(r, c) : 0.0; };

  // Shortest augmenting path with potentials; 1-based with a sentinel column 0.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0);
  std::vector<double> v(n + 1, 0.0);
  std::vector<int> match_of_col(n + 1, 0);
  std::vector<int> way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match_of_col[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = match_of_col[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_of_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_of_col[j0] != 0);
    do {
      const int j1 = way[j0];
      match_of_col[j0] = match_of_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::pair<int, int>> pairs;
  for (int j = 1; j <= n; ++j) {
    const int r = match_of_col[j] - 1;
    const int c = j - 1;
    if (r >= 0 && r < rows && c < cols) pairs.emplace_back(r, c);
  }
  return finish(std::move(pairs), rows, cols);
}

}  // namespace hybridtrack
