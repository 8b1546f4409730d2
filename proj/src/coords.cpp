#include "kinr/coords.hpp"

#include "kinr/error.hpp"

#include <cmath>

namespace kinr {

double normalize_index(int index, int extent) { return (2.0 * index - extent) / static_cast<double>(extent); }

CoordGrid CoordGrid::dense(int rows, int cols)
{
  if (rows <= 0 || cols <= 0) {
    throw ShapeError("dense coordinate grid needs positive extents");
  }
  CoordGrid g;
  g.coords.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    double const u = normalize_index(r, rows);
    for (int c = 0; c < cols; ++c) {
      g.coords.push_back({u, normalize_index(c, cols)});
    }
  }
  g.shape_hint = std::make_pair(rows, cols);
  return g;
}

CoordGrid CoordGrid::central(int rows, int cols, int parent_rows, int parent_cols)
{
  if (rows <= 0 || cols <= 0 || rows > parent_rows || cols > parent_cols) {
    throw ShapeError("central block must be non-empty and fit inside its parent grid");
  }
  int const dr = parent_rows / 2 - rows / 2;
  int const dc = parent_cols / 2 - cols / 2;
  CoordGrid g;
  g.coords.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    double const u = normalize_index(r + dr, parent_rows);
    for (int c = 0; c < cols; ++c) {
      g.coords.push_back({u, normalize_index(c + dc, parent_cols)});
    }
  }
  g.shape_hint = std::make_pair(rows, cols);
  return g;
}

void validate_coords(CoordGrid const &grid)
{
  for (auto const &[u, v] : grid.coords) {
    if (!(std::abs(u) <= 1.0) || !(std::abs(v) <= 1.0)) {
      throw DomainError("coordinate outside [-1, 1]^2");
    }
  }
}

} // namespace kinr
