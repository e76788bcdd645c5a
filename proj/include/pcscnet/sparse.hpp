#pragma once
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pcscnet/geometry.hpp"
#include "pcscnet/matrix.hpp"
#include "pcscnet/nn.hpp"

namespace pcsc {

// Packs a voxel coordinate into a 63-bit key (21 bits per axis, offset
// binary). Throws when any component leaves the representable range.
uint64_t pack_coord(const VoxelCoord& c);

// Exact-match coordinate -> row index.
struct CoordHash {
    std::unordered_map<uint64_t, int> map;

    int lookup(const VoxelCoord& c) const {
        auto it = map.find(pack_coord(c));
        return it == map.end() ? -1 : it->second;
    }
};

// Throws on a duplicate coordinate, naming it.
CoordHash build_hash(const std::vector<VoxelCoord>& coords);

// Active-site list with one feature row per site. Coordinates at stride
// level s are expressed in units of s * voxel_size (already divided).
struct SparseTensor {
    std::vector<VoxelCoord> coords; // unique, lexicographically sorted
    Matrix feats;                   // A x C
    int stride_level = 1;
    CoordHash hash;

    int num_sites() const { return int(coords.size()); }
    int channels() const { return feats.cols; }
};

SparseTensor make_sparse_tensor(std::vector<VoxelCoord> coords, Matrix feats, int stride_level = 1);

// Per-kernel-offset (input row, output row) pairs driving gather-scatter
// execution. Submanifold rulebooks use centered offsets {-r..r}^3 with the
// relation coord(in) = coord(out) + delta; strided rulebooks use window
// offsets {0..k-1}^3 anchored at coord(out)*stride.
struct Rulebook {
    int kernel_size = 3;
    int stride = 1;
    int in_stride_level = 1;
    int out_stride_level = 1;
    std::vector<VoxelCoord> offsets;                      // kernel_size^3
    std::vector<std::vector<std::pair<int, int>>> rules;  // per offset
    std::vector<VoxelCoord> in_coords;
    std::vector<VoxelCoord> out_coords;

    std::size_t total_rules() const;
};

Rulebook build_rulebook_submanifold(const SparseTensor& st, int kernel_size);
Rulebook build_rulebook_strided(const SparseTensor& st, int kernel_size, int stride);
// Exact transpose of an encoder rulebook: output sites are the encoder's
// input sites, rules are swapped per offset.
Rulebook build_rulebook_deconv(const Rulebook& downsample);

enum class ConvVariant { submanifold, strided, deconv };

struct SparseConv {
    ConvVariant variant = ConvVariant::submanifold;
    int kernel_size = 3;
    int stride = 2;
    std::vector<Param> w; // kernel_size^3 matrices, each C_in x C_out
    Param b;              // 1 x C_out

    SparseConv() = default;
    SparseConv(const std::string& name, ConvVariant variant, int c_in, int c_out, int kernel_size, int stride,
               std::mt19937_64& rng);

    int in_channels() const { return w.empty() ? 0 : w[0].value.rows; }
    int out_channels() const { return b.value.cols; }

    // out[o] = bias + sum over rules (i,o) of feats[i] * W[delta].
    SparseTensor forward(const SparseTensor& in, const Rulebook& rb) const;
    // Returns d_in matching in_feats; accumulates dW and db.
    Matrix backward(const Matrix& in_feats, const Rulebook& rb, const Matrix& upstream);
    void collect(std::vector<Param*>& out);
};

// Two submanifold convs with relu, identity skip added after the branch.
struct ResidualBlock {
    SparseConv conv_a, conv_b;

    struct Ctx {
        Matrix in, z_a, act_a, z_b;
    };

    ResidualBlock() = default;
    ResidualBlock(const std::string& name, int channels, int kernel_size, std::mt19937_64& rng);
    SparseTensor forward(const SparseTensor& in, const Rulebook& rb, Ctx& ctx) const;
    Matrix backward(const Ctx& ctx, const Rulebook& rb, const Matrix& upstream);
    void collect(std::vector<Param*>& out);
};

// Three-level encoder/decoder over sparse tensors. Every decoder stage
// restores its matching encoder level's coordinate set exactly, so the
// output sites equal the input sites by construction.
struct UNetConfig {
    int in_width = 32;
    std::array<int, 3> enc_widths{32, 64, 128};
    int out_width = 32;
    int kernel_size = 3;
    int stride = 2;
};

struct UNet {
    UNetConfig cfg;
    SparseConv down1, down2, down3;
    ResidualBlock res1, res2, res3;
    SparseConv up3, up2, up1;
    SparseConv fuse3, fuse2, fuse1;

    struct Ctx {
        Rulebook sub0, sub1, sub2, sub3;  // submanifold rulebooks per level
        Rulebook str1, str2, str3;        // encoder strided rulebooks
        Rulebook dec1, dec2, dec3;        // their transposes
        Matrix x0, d1_in, d2_in, d3_in;   // inputs to the strided convs
        ResidualBlock::Ctx r1, r2, r3;
        Matrix u3_in, u2_in, u1_in;       // inputs to the deconvs
        Matrix cat3, cat2, cat1;          // concat inputs to the fuse convs
    };

    UNet() = default;
    UNet(const std::string& name, const UNetConfig& cfg, std::mt19937_64& rng);
    SparseTensor forward(const SparseTensor& x0, Ctx& ctx) const;
    Matrix backward(Ctx& ctx, const Matrix& upstream); // d x0 feats
    void collect(std::vector<Param*>& out);
};

// Feature concatenation for tensors over the identical coordinate list.
Matrix concat_cols(const Matrix& a, const Matrix& b);

} // namespace pcsc
