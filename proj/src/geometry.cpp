#include "pcscnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace pcsc {

namespace {

constexpr int kCoordBits = 21;
constexpr int kCoordMax = (1 << (kCoordBits - 1)) - 1;

uint64_t pack3(int x, int y, int z) {
    const uint64_t off = 1u << (kCoordBits - 1);
    return ((uint64_t(x) + off) << (2 * kCoordBits)) | ((uint64_t(y) + off) << kCoordBits) | (uint64_t(z) + off);
}

} // namespace

VoxelMap voxelize(const PointCloud& cloud, double voxel_size) {
    if (voxel_size <= 0.0) throw std::invalid_argument("voxelize: voxel_size must be > 0");
    const int n = cloud.size();
    if (n == 0) throw std::invalid_argument("voxelize: empty cloud");

    std::vector<VoxelCoord> per_point(n);
    for (int p = 0; p < n; ++p) {
        const double* xyz = cloud.xyz.row(p);
        for (int a = 0; a < 3; ++a) {
            if (!std::isfinite(xyz[a]))
                throw std::invalid_argument("voxelize: non-finite coordinate at point " + std::to_string(p));
            const double q = std::floor(xyz[a] / voxel_size);
            if (q < -double(kCoordMax) || q > double(kCoordMax))
                throw std::invalid_argument("voxelize: coordinate out of range at point " + std::to_string(p));
            per_point[p][a] = int(q);
        }
    }

    std::vector<VoxelCoord> uniq = per_point;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    std::unordered_map<uint64_t, int> row_of;
    row_of.reserve(uniq.size() * 2);
    for (int r = 0; r < int(uniq.size()); ++r) row_of[pack3(uniq[r][0], uniq[r][1], uniq[r][2])] = r;

    VoxelMap vm;
    vm.voxel_size = voxel_size;
    vm.coords = std::move(uniq);
    vm.point_to_voxel.resize(n);
    vm.voxel_to_points.resize(vm.coords.size());
    for (int p = 0; p < n; ++p) {
        const int r = row_of.at(pack3(per_point[p][0], per_point[p][1], per_point[p][2]));
        vm.point_to_voxel[p] = r;
        vm.voxel_to_points[r].push_back(p);
    }
    return vm;
}

std::array<double, 3> voxel_center(const VoxelCoord& c, double voxel_size) {
    return {(c[0] + 0.5) * voxel_size, (c[1] + 0.5) * voxel_size, (c[2] + 0.5) * voxel_size};
}

Matrix relative_coords(const PointCloud& cloud, const VoxelMap& vmap) {
    const int n = cloud.size();
    if (int(vmap.point_to_voxel.size()) != n)
        throw std::invalid_argument("relative_coords: voxel map was built from a different cloud");
    Matrix rel(n, 3);
    for (int p = 0; p < n; ++p) {
        const auto c = voxel_center(vmap.coords[vmap.point_to_voxel[p]], vmap.voxel_size);
        const double* xyz = cloud.xyz.row(p);
        double* r = rel.row(p);
        for (int a = 0; a < 3; ++a) r[a] = xyz[a] - c[a];
    }
    return rel;
}

namespace {

struct Candidate {
    double d2;
    int idx;
    bool operator<(const Candidate& o) const { return d2 != o.d2 ? d2 < o.d2 : idx < o.idx; }
};

} // namespace

KnnGraph knn(const PointCloud& cloud, int k) {
    const int n = cloud.size();
    if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
    if (n <= k) throw std::invalid_argument("knn: need more than k=" + std::to_string(k) + " points, got " +
                                            std::to_string(n));

    double lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::numeric_limits<double>::infinity();
        hi[a] = -std::numeric_limits<double>::infinity();
    }
    for (int p = 0; p < n; ++p) {
        const double* xyz = cloud.xyz.row(p);
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], xyz[a]);
            hi[a] = std::max(hi[a], xyz[a]);
        }
    }
    // Bucket size aimed at ~k points per cell so the ring search stays local.
    const double vol = std::max((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]), 1e-12);
    double cell = std::cbrt(vol * double(k) / double(n));
    if (!(cell > 0.0) || !std::isfinite(cell)) cell = 1.0;

    auto cell_of = [&](const double* xyz, int a) { return int(std::floor((xyz[a] - lo[a]) / cell)); };

    std::unordered_map<uint64_t, std::vector<int>> buckets;
    buckets.reserve(std::size_t(n) * 2);
    std::vector<std::array<int, 3>> pcell(n);
    for (int p = 0; p < n; ++p) {
        const double* xyz = cloud.xyz.row(p);
        pcell[p] = {cell_of(xyz, 0), cell_of(xyz, 1), cell_of(xyz, 2)};
        buckets[pack3(pcell[p][0], pcell[p][1], pcell[p][2])].push_back(p);
    }

    int max_ring = 1;
    for (int a = 0; a < 3; ++a) max_ring = std::max(max_ring, int((hi[a] - lo[a]) / cell) + 2);

    KnnGraph g;
    g.k = k;
    g.indices.resize(std::size_t(n) * k);

#pragma omp parallel for schedule(dynamic, 64)
    for (int p = 0; p < n; ++p) {
        const double* xp = cloud.xyz.row(p);
        std::vector<Candidate> best;
        best.reserve(std::size_t(k) * 2);

        auto scan_cell = [&](int cx, int cy, int cz) {
            auto it = buckets.find(pack3(cx, cy, cz));
            if (it == buckets.end()) return;
            for (int q : it->second) {
                if (q == p) continue;
                const double* xq = cloud.xyz.row(q);
                const double dx = xp[0] - xq[0], dy = xp[1] - xq[1], dz = xp[2] - xq[2];
                best.push_back({dx * dx + dy * dy + dz * dz, q});
            }
        };

        for (int ring = 0; ring <= max_ring; ++ring) {
            if (ring == 0) {
                scan_cell(pcell[p][0], pcell[p][1], pcell[p][2]);
            } else {
                const int cx = pcell[p][0], cy = pcell[p][1], cz = pcell[p][2];
                for (int dx = -ring; dx <= ring; ++dx)
                    for (int dy = -ring; dy <= ring; ++dy)
                        for (int dz = -ring; dz <= ring; ++dz) {
                            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                            scan_cell(cx + dx, cy + dy, cz + dz);
                        }
            }
            if (int(best.size()) >= k) {
                std::nth_element(best.begin(), best.begin() + (k - 1), best.end());
                const double kth = best[k - 1].d2;
                // Cells on ring r+1 are at least r*cell away from any point in
                // the home cell; strict inequality keeps distance ties exact.
                const double safe = double(ring) * cell;
                if (kth < safe * safe) break;
            }
        }

        std::sort(best.begin(), best.end());
        for (int j = 0; j < k; ++j) g.indices[std::size_t(p) * k + j] = best[j].idx;
    }
    return g;
}

} // namespace pcsc
