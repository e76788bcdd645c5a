#pragma once
#include <array>
#include <random>
#include <string>
#include <vector>

#include "pcscnet/geometry.hpp"
#include "pcscnet/matrix.hpp"
#include "pcscnet/nn.hpp"

namespace pcsc {

// Correlation between a point (relative to its voxel center) and a kernel
// point: max(0, 1 - |x - k| / sigma). Zero at and beyond distance sigma.
double correlation(const std::array<double, 3>& x_rel, const std::array<double, 3>& kernel_point, double sigma);

// Fixed kernel-point positions inside the voxel plus one weight matrix per
// kernel point. Positions are rigid; only the weights train.
struct KernelPointSet {
    int k = 0;
    std::vector<std::array<double, 3>> positions; // K x 3, relative to voxel center
    double sigma = 0.0;
    std::vector<Param> weights; // K matrices, each O x O

    void collect(std::vector<Param*>& out);
};

// Deterministic symmetric layouts for K in {1, 9, 15, 27};
// sigma = max(voxel_size * 0.75 / cbrt(K), voxel_size / 4).
void make_kernel_points(int k, double voxel_size, std::vector<std::array<double, 3>>& positions, double& sigma);

KernelPointSet make_kernel_point_set(const std::string& name, int k, double voxel_size, int width,
                                     std::mt19937_64& rng);

// Lifts per-point features with an MLP, then aggregates each voxel's points
// into one voxel feature: v = sum_k (sum_i h(x_i - x_c, k) f_i) W_k.
struct ExtractionOutput {
    Matrix point_feats; // N x O
    Matrix voxel_feats; // A x O, row-aligned with VoxelMap.coords
};

struct ExtractContext {
    MlpContext mlp;
    Matrix point_feats;                                 // F, N x O
    std::vector<std::vector<std::pair<int, double>>> h; // per point: (kernel index, h > 0)
    std::vector<Matrix> kernel_sums;                    // K matrices, A x O (the s_k rows)
};

ExtractionOutput extract(const PointCloud& cloud, const VoxelMap& vmap, const Matrix& input_feats, const Mlp& mlp,
                         const KernelPointSet& kernel, ExtractContext& ctx);

// upstream_point: N x O gradient on the lifted point features;
// upstream_voxel: A x O gradient on the voxel features. Accumulates into the
// MLP params and every W_k.
void extract_backward(const VoxelMap& vmap, Mlp& mlp, KernelPointSet& kernel, ExtractContext& ctx,
                      const Matrix& upstream_point, const Matrix& upstream_voxel);

} // namespace pcsc
