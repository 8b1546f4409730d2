#pragma once

#include "kinr/kspace.hpp"
#include "kinr/nn/autograd.hpp"

#include <algorithm>

// Conversions between double-precision grids and [2 x H x W] tensors.
namespace kinr::nn {

template <typename T>
Var<T> grid_constant(ComplexGrid const &g)
{
  std::vector<T> v(g.data().begin(), g.data().end());
  return Var<T>::constant({2, g.height(), g.width()}, std::move(v));
}

template <typename G, typename T>
G to_grid(Var<T> const &x)
{
  G g(x.dim(1), x.dim(2));
  std::copy(x.value().begin(), x.value().end(), g.data().begin());
  return g;
}

} // namespace kinr::nn
