#pragma once
#include <array>
#include <cstdint>
#include <vector>

#include "pcscnet/matrix.hpp"

namespace pcsc {

struct PointCloud {
    Matrix xyz;                    // N x 3, meters
    std::vector<double> intensity; // size N or empty
    std::vector<int> labels;       // size N or empty; -1 marks ignored points

    int size() const { return xyz.rows; }
    bool has_intensity() const { return !intensity.empty(); }
    bool has_labels() const { return !labels.empty(); }
};

using VoxelCoord = std::array<int, 3>;

// Bidirectional point<->voxel index at a fixed resolution. Voxel rows are
// lexicographically sorted by coordinate and every voxel is non-empty.
struct VoxelMap {
    double voxel_size = 0.0;
    std::vector<VoxelCoord> coords;               // A x 3, unique, sorted
    std::vector<int> point_to_voxel;              // N
    std::vector<std::vector<int>> voxel_to_points; // A

    int num_voxels() const { return int(coords.size()); }
};

// Floor convention: point p lands in voxel floor(xyz[p]/voxel_size) per axis.
VoxelMap voxelize(const PointCloud& cloud, double voxel_size);

std::array<double, 3> voxel_center(const VoxelCoord& c, double voxel_size);

// xyz[p] - center(voxel of p); every component lies in [-voxel_size/2, voxel_size/2].
Matrix relative_coords(const PointCloud& cloud, const VoxelMap& vmap);

struct KnnGraph {
    int k = 0;
    std::vector<int> indices; // N x k row-major, each row sorted by (distance, index)

    int neighbor(int point, int j) const { return indices[std::size_t(point) * k + j]; }
};

// Exact Euclidean k nearest neighbors via uniform-grid bucketing.
// Ties break toward the lower point index; a point never lists itself.
KnnGraph knn(const PointCloud& cloud, int k);

} // namespace pcsc
