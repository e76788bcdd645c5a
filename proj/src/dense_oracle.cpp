#include "pcscnet/dense_oracle.hpp"

#include <limits>
#include <stdexcept>

namespace pcsc {

namespace {

struct DenseGrid {
    int lo[3]{}, dim[3]{};
    int channels = 0;
    std::vector<double> values; // dim0*dim1*dim2*channels, zero-filled

    DenseGrid(const std::vector<VoxelCoord>& coords, const Matrix& feats, int pad) {
        int hi[3];
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::numeric_limits<int>::max();
            hi[a] = std::numeric_limits<int>::min();
        }
        for (const auto& c : coords)
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], c[a]);
                hi[a] = std::max(hi[a], c[a]);
            }
        for (int a = 0; a < 3; ++a) {
            lo[a] -= pad;
            dim[a] = hi[a] - lo[a] + 1 + 2 * pad;
        }
        channels = feats.cols;
        values.assign(std::size_t(dim[0]) * dim[1] * dim[2] * channels, 0.0);
        for (int i = 0; i < int(coords.size()); ++i) {
            double* dst = cell(coords[i][0], coords[i][1], coords[i][2]);
            for (int c = 0; c < channels; ++c) dst[c] = feats.at(i, c);
        }
    }

    bool in_range(int x, int y, int z) const {
        return x >= lo[0] && x < lo[0] + dim[0] && y >= lo[1] && y < lo[1] + dim[1] && z >= lo[2] &&
               z < lo[2] + dim[2];
    }
    double* cell(int x, int y, int z) {
        const std::size_t idx =
            ((std::size_t(x - lo[0]) * dim[1] + (y - lo[1])) * dim[2] + (z - lo[2])) * channels;
        return values.data() + idx;
    }
    const double* cell(int x, int y, int z) const {
        return const_cast<DenseGrid*>(this)->cell(x, y, z);
    }
};

} // namespace

Matrix dense_submanifold_reference(const std::vector<VoxelCoord>& coords, const Matrix& feats,
                                   const std::vector<Param>& w, const Matrix& bias, int kernel_size) {
    const int r = kernel_size / 2;
    const int c_out = bias.cols;
    DenseGrid grid(coords, feats, r);
    Matrix out(int(coords.size()), c_out, 0.0);
    for (int i = 0; i < int(coords.size()); ++i) {
        double* oi = out.row(i);
        for (int c = 0; c < c_out; ++c) oi[c] = bias.v[c];
        int wi = 0;
        for (int dx = -r; dx <= r; ++dx)
            for (int dy = -r; dy <= r; ++dy)
                for (int dz = -r; dz <= r; ++dz, ++wi) {
                    const int x = coords[i][0] + dx, y = coords[i][1] + dy, z = coords[i][2] + dz;
                    if (!grid.in_range(x, y, z)) continue;
                    const double* in = grid.cell(x, y, z);
                    const Matrix& wm = w[wi].value;
                    for (int ci = 0; ci < wm.rows; ++ci) {
                        if (in[ci] == 0.0) continue;
                        const double* wrow = wm.row(ci);
                        for (int co = 0; co < c_out; ++co) oi[co] += in[ci] * wrow[co];
                    }
                }
    }
    return out;
}

double dense_full_grid_conv(int grid_dim, const std::vector<VoxelCoord>& coords, const Matrix& feats,
                            const std::vector<Param>& w, const Matrix& bias, int kernel_size) {
    const int r = kernel_size / 2;
    const int c_in = feats.cols, c_out = bias.cols;
    const std::size_t cells = std::size_t(grid_dim) * grid_dim * grid_dim;
    std::vector<double> grid(cells * c_in, 0.0);
    auto cell = [&](int x, int y, int z) {
        return grid.data() + ((std::size_t(x) * grid_dim + y) * grid_dim + z) * c_in;
    };
    for (int i = 0; i < int(coords.size()); ++i) {
        double* dst = cell(coords[i][0], coords[i][1], coords[i][2]);
        for (int c = 0; c < c_in; ++c) dst[c] = feats.at(i, c);
    }

    double checksum = 0.0;
    std::vector<double> acc(c_out);
    for (int x = 0; x < grid_dim; ++x)
        for (int y = 0; y < grid_dim; ++y)
            for (int z = 0; z < grid_dim; ++z) {
                for (int c = 0; c < c_out; ++c) acc[c] = bias.v[c];
                int wi = 0;
                for (int dx = -r; dx <= r; ++dx)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dz = -r; dz <= r; ++dz, ++wi) {
                            const int nx = x + dx, ny = y + dy, nz = z + dz;
                            if (nx < 0 || nx >= grid_dim || ny < 0 || ny >= grid_dim || nz < 0 || nz >= grid_dim)
                                continue;
                            const double* in = cell(nx, ny, nz);
                            const Matrix& wm = w[wi].value;
                            for (int ci = 0; ci < c_in; ++ci) {
                                const double* wrow = wm.row(ci);
                                const double v = in[ci];
                                for (int co = 0; co < c_out; ++co) acc[co] += v * wrow[co];
                            }
                        }
                for (int c = 0; c < c_out; ++c) checksum += acc[c];
            }
    return checksum;
}

Matrix dense_strided_reference(const std::vector<VoxelCoord>& coords, const Matrix& feats,
                               const std::vector<Param>& w, const Matrix& bias, int kernel_size, int stride,
                               const std::vector<VoxelCoord>& out_coords) {
    const int c_out = bias.cols;
    DenseGrid grid(coords, feats, kernel_size);
    Matrix out(int(out_coords.size()), c_out, 0.0);
    for (int o = 0; o < int(out_coords.size()); ++o) {
        double* oo = out.row(o);
        for (int c = 0; c < c_out; ++c) oo[c] = bias.v[c];
        int wi = 0;
        for (int dx = 0; dx < kernel_size; ++dx)
            for (int dy = 0; dy < kernel_size; ++dy)
                for (int dz = 0; dz < kernel_size; ++dz, ++wi) {
                    const int x = out_coords[o][0] * stride + dx;
                    const int y = out_coords[o][1] * stride + dy;
                    const int z = out_coords[o][2] * stride + dz;
                    if (!grid.in_range(x, y, z)) continue;
                    const double* in = grid.cell(x, y, z);
                    const Matrix& wm = w[wi].value;
                    for (int ci = 0; ci < wm.rows; ++ci) {
                        if (in[ci] == 0.0) continue;
                        const double* wrow = wm.row(ci);
                        for (int co = 0; co < c_out; ++co) oo[co] += in[ci] * wrow[co];
                    }
                }
    }
    return out;
}

} // namespace pcsc
