#pragma once
#include <vector>

#include "pcscnet/sparse.hpp"

namespace pcsc {

// Reference convolutions over a zero-filled dense grid, evaluated with plain
// nested loops. Deliberately independent of the rulebook machinery; used to
// cross-check it and to time the dense-vs-sparse comparison.

// Submanifold reference: dense conv with centered offsets, evaluated at the
// active sites only.
Matrix dense_submanifold_reference(const std::vector<VoxelCoord>& coords, const Matrix& feats,
                                   const std::vector<Param>& w, const Matrix& bias, int kernel_size);

// Strided reference: out[o] = bias + sum over window offsets d in
// {0..k-1}^3 of dense[o*stride + d] * W[d], evaluated at `out_coords`.
Matrix dense_strided_reference(const std::vector<VoxelCoord>& coords, const Matrix& feats,
                               const std::vector<Param>& w, const Matrix& bias, int kernel_size, int stride,
                               const std::vector<VoxelCoord>& out_coords);

// Full dense convolution over every cell of a grid_dim^3 grid, with no
// sparsity shortcuts. Returns a checksum so the work cannot be elided; used
// by the dense-vs-sparse timing comparison.
double dense_full_grid_conv(int grid_dim, const std::vector<VoxelCoord>& coords, const Matrix& feats,
                            const std::vector<Param>& w, const Matrix& bias, int kernel_size);

} // namespace pcsc
