#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

namespace kinr {

// Normalized k-space coordinates in [-1, 1]^2. Axis index n of a grid of length N maps to
// (2n - N) / N, so the zero-frequency index N/2 maps to 0 and the grid covers [-1, 1 - 2/N].
struct CoordGrid
{
  std::vector<std::array<double, 2>> coords;
  // (rows, cols) when the grid enumerates a dense lattice row-major.
  std::optional<std::pair<int, int>> shape_hint;

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }

  static CoordGrid dense(int rows, int cols);
  // The rows x cols lattice of frequencies centered on DC, expressed in the normalization of
  // an enclosing parent_rows x parent_cols grid. A low-resolution grid queried this way lands
  // on the same physical frequencies as the matching full-resolution points.
  static CoordGrid central(int rows, int cols, int parent_rows, int parent_cols);
};

double normalize_index(int index, int extent);

// Throws DomainError if any coordinate lies outside [-1, 1].
void validate_coords(CoordGrid const &grid);

} // namespace kinr
