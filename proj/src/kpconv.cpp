#include "pcscnet/kpconv.hpp"

#include <cmath>
#include <stdexcept>

namespace pcsc {

double correlation(const std::array<double, 3>& x_rel, const std::array<double, 3>& kernel_point, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("correlation: sigma must be > 0");
    const double dx = x_rel[0] - kernel_point[0];
    const double dy = x_rel[1] - kernel_point[1];
    const double dz = x_rel[2] - kernel_point[2];
    const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
    return std::max(0.0, 1.0 - d / sigma);
}

void make_kernel_points(int k, double voxel_size, std::vector<std::array<double, 3>>& positions, double& sigma) {
    positions.clear();
    const double r = voxel_size / 4.0;
    switch (k) {
        case 1:
            positions.push_back({0.0, 0.0, 0.0});
            break;
        case 9:
            positions.push_back({0.0, 0.0, 0.0});
            for (int sx = -1; sx <= 1; sx += 2)
                for (int sy = -1; sy <= 1; sy += 2)
                    for (int sz = -1; sz <= 1; sz += 2) positions.push_back({sx * r, sy * r, sz * r});
            break;
        case 15: {
            positions.push_back({0.0, 0.0, 0.0});
            // 6 face directions at radius r
            for (int a = 0; a < 3; ++a)
                for (int s = -1; s <= 1; s += 2) {
                    std::array<double, 3> p{0.0, 0.0, 0.0};
                    p[a] = s * r;
                    positions.push_back(p);
                }
            // 8 vertex directions at radius r
            const double c = r / std::sqrt(3.0);
            for (int sx = -1; sx <= 1; sx += 2)
                for (int sy = -1; sy <= 1; sy += 2)
                    for (int sz = -1; sz <= 1; sz += 2) positions.push_back({sx * c, sy * c, sz * c});
            break;
        }
        case 27:
            for (int ix = -1; ix <= 1; ++ix)
                for (int iy = -1; iy <= 1; ++iy)
                    for (int iz = -1; iz <= 1; ++iz) positions.push_back({ix * r, iy * r, iz * r});
            break;
        default:
            throw std::invalid_argument("make_kernel_points: unsupported K=" + std::to_string(k) +
                                        " (supported: 1, 9, 15, 27)");
    }
    sigma = std::max(voxel_size * 0.75 / std::cbrt(double(k)), voxel_size / 4.0);
}

KernelPointSet make_kernel_point_set(const std::string& name, int k, double voxel_size, int width,
                                     std::mt19937_64& rng) {
    KernelPointSet set;
    set.k = k;
    make_kernel_points(k, voxel_size, set.positions, set.sigma);
    set.weights.reserve(k);
    for (int i = 0; i < k; ++i)
        set.weights.emplace_back(name + ".w" + std::to_string(i), glorot_uniform(width, width, rng, 1.0 / double(k)));
    return set;
}

void KernelPointSet::collect(std::vector<Param*>& out) {
    for (auto& w : weights) out.push_back(&w);
}

ExtractionOutput extract(const PointCloud& cloud, const VoxelMap& vmap, const Matrix& input_feats, const Mlp& mlp,
                         const KernelPointSet& kernel, ExtractContext& ctx) {
    const int n = cloud.size();
    if (input_feats.rows != n) throw std::invalid_argument("extract: feature rows != point count");
    if (mlp.layers.front().in_dim() != input_feats.cols)
        throw std::invalid_argument("extract: MLP input width " + std::to_string(mlp.layers.front().in_dim()) +
                                    " vs features " + input_feats.shape_str());

    ctx.point_feats = mlp.forward(input_feats, ctx.mlp);
    const int width = ctx.point_feats.cols;
    const int a = vmap.num_voxels();
    const int k = kernel.k;

    // Correlations depend on geometry only; store the nonzero ones per point.
    Matrix rel = relative_coords(cloud, vmap);
    ctx.h.assign(n, {});
    for (int p = 0; p < n; ++p) {
        const std::array<double, 3> x{rel.at(p, 0), rel.at(p, 1), rel.at(p, 2)};
        for (int j = 0; j < k; ++j) {
            const double hij = correlation(x, kernel.positions[j], kernel.sigma);
            if (hij > 0.0) ctx.h[p].emplace_back(j, hij);
        }
    }

    // s_k[v] = sum over points in v of h(p,k) * F[p], then v = sum_k s_k W_k.
    ctx.kernel_sums.assign(k, Matrix(a, width, 0.0));
#pragma omp parallel for schedule(dynamic, 32)
    for (int v = 0; v < a; ++v) {
        for (int p : vmap.voxel_to_points[v]) {
            const double* fp = ctx.point_feats.row(p);
            for (const auto& [j, hij] : ctx.h[p]) {
                double* s = ctx.kernel_sums[j].row(v);
                for (int c = 0; c < width; ++c) s[c] += hij * fp[c];
            }
        }
    }

    ExtractionOutput out;
    out.point_feats = ctx.point_feats;
    out.voxel_feats = Matrix(a, width, 0.0);
    for (int j = 0; j < k; ++j) matmul_acc(ctx.kernel_sums[j], kernel.weights[j].value, out.voxel_feats);
    return out;
}

void extract_backward(const VoxelMap& vmap, Mlp& mlp, KernelPointSet& kernel, ExtractContext& ctx,
                      const Matrix& upstream_point, const Matrix& upstream_voxel) {
    if (ctx.kernel_sums.empty() || ctx.point_feats.rows == 0)
        throw std::invalid_argument("extract_backward: missing saved activations");
    const int k = kernel.k;
    const int n = ctx.point_feats.rows;
    const int width = ctx.point_feats.cols;
    require_shape(upstream_voxel, vmap.num_voxels(), width, "extract_backward upstream_voxel");
    require_shape(upstream_point, n, width, "extract_backward upstream_point");

    // dW_k = s_k^T * U ; ds_k = U * W_k^T
    std::vector<Matrix> d_sums(k);
    for (int j = 0; j < k; ++j) {
        matmul_at_b_acc(ctx.kernel_sums[j], upstream_voxel, kernel.weights[j].grad);
        d_sums[j] = matmul_a_bt(upstream_voxel, kernel.weights[j].value);
    }

    // dF[p] = upstream_point[p] + sum_k h(p,k) * ds_k[voxel(p)]
    Matrix d_f = upstream_point;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < n; ++p) {
        const int v = vmap.point_to_voxel[p];
        double* dp = d_f.row(p);
        for (const auto& [j, hij] : ctx.h[p]) {
            const double* ds = d_sums[j].row(v);
            for (int c = 0; c < width; ++c) dp[c] += hij * ds[c];
        }
    }
    mlp.backward(ctx.mlp, d_f);
}

} // namespace pcsc
