// Brute-force reference implementations used to cross-check the engine.
// These deliberately avoid the hashing / bucketing machinery they verify.
#pragma once
#include <vector>

#include "pcscnet/geometry.hpp"
#include "pcscnet/sparse.hpp"

namespace oracle {

// O(N^2) exact k nearest neighbors, ties to the lower index.
pcsc::KnnGraph knn_bruteforce(const pcsc::PointCloud& cloud, int k);

// O(N^2) boundary counting via the brute-force neighbor sets.
std::vector<int> n_diff_bruteforce(const pcsc::PointCloud& cloud, const std::vector<int>& labels, int k);

// All-pairs rule enumeration with linear coordinate scans.
pcsc::Rulebook rulebook_submanifold_bruteforce(const std::vector<pcsc::VoxelCoord>& coords, int kernel_size);
pcsc::Rulebook rulebook_strided_bruteforce(const std::vector<pcsc::VoxelCoord>& coords, int kernel_size, int stride);

bool same_rules(const pcsc::Rulebook& a, const pcsc::Rulebook& b);

// Deterministic random sparse patterns for conv tests.
std::vector<pcsc::VoxelCoord> random_pattern(int grid_dim, double occupancy, uint64_t seed);
pcsc::Matrix random_matrix(int rows, int cols, uint64_t seed, double scale = 1.0);

} // namespace oracle
