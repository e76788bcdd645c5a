#include "pcscnet/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pcsc {

namespace {
constexpr int kCoordBits = 21;
constexpr int kCoordMax = (1 << (kCoordBits - 1)) - 1;

int floor_div(int a, int s) {
    int q = a / s;
    if (a % s != 0 && a < 0) --q;
    return q;
}

std::string coord_str(const VoxelCoord& c) {
    return "(" + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]) + ")";
}
} // namespace

uint64_t pack_coord(const VoxelCoord& c) {
    for (int a = 0; a < 3; ++a)
        if (c[a] < -kCoordMax || c[a] > kCoordMax)
            throw std::invalid_argument("pack_coord: component out of range: " + coord_str(c));
    const uint64_t off = 1u << (kCoordBits - 1);
    return ((uint64_t(c[0]) + off) << (2 * kCoordBits)) | ((uint64_t(c[1]) + off) << kCoordBits) |
           (uint64_t(c[2]) + off);
}

CoordHash build_hash(const std::vector<VoxelCoord>& coords) {
    CoordHash h;
    h.map.reserve(coords.size() * 2);
    for (int r = 0; r < int(coords.size()); ++r) {
        auto [it, inserted] = h.map.emplace(pack_coord(coords[r]), r);
        if (!inserted) throw std::invalid_argument("build_hash: duplicate coordinate " + coord_str(coords[r]));
    }
    return h;
}

SparseTensor make_sparse_tensor(std::vector<VoxelCoord> coords, Matrix feats, int stride_level) {
    if (int(coords.size()) != feats.rows)
        throw std::invalid_argument("make_sparse_tensor: " + std::to_string(coords.size()) + " coords vs " +
                                    feats.shape_str() + " feats");
    SparseTensor st;
    st.hash = build_hash(coords);
    st.coords = std::move(coords);
    st.feats = std::move(feats);
    st.stride_level = stride_level;
    return st;
}

std::size_t Rulebook::total_rules() const {
    std::size_t n = 0;
    for (const auto& r : rules) n += r.size();
    return n;
}

Rulebook build_rulebook_submanifold(const SparseTensor& st, int kernel_size) {
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw std::invalid_argument("build_rulebook_submanifold: kernel_size must be odd");
    const int r = kernel_size / 2;

    Rulebook rb;
    rb.kernel_size = kernel_size;
    rb.stride = 1;
    rb.in_stride_level = st.stride_level;
    rb.out_stride_level = st.stride_level;
    rb.in_coords = st.coords;
    rb.out_coords = st.coords;
    for (int dx = -r; dx <= r; ++dx)
        for (int dy = -r; dy <= r; ++dy)
            for (int dz = -r; dz <= r; ++dz) rb.offsets.push_back({dx, dy, dz});
    rb.rules.resize(rb.offsets.size());

    const int a = st.num_sites();
    for (std::size_t oi = 0; oi < rb.offsets.size(); ++oi) {
        const VoxelCoord d = rb.offsets[oi];
        auto& out = rb.rules[oi];
        for (int o = 0; o < a; ++o) {
            const VoxelCoord probe{st.coords[o][0] + d[0], st.coords[o][1] + d[1], st.coords[o][2] + d[2]};
            const int i = st.hash.lookup(probe);
            if (i >= 0) out.emplace_back(i, o);
        }
    }
    return rb;
}

Rulebook build_rulebook_strided(const SparseTensor& st, int kernel_size, int stride) {
    if (stride < 2) throw std::invalid_argument("build_rulebook_strided: stride must be >= 2");
    if (kernel_size < 1) throw std::invalid_argument("build_rulebook_strided: kernel_size must be >= 1");

    Rulebook rb;
    rb.kernel_size = kernel_size;
    rb.stride = stride;
    rb.in_stride_level = st.stride_level;
    rb.out_stride_level = st.stride_level * stride;
    rb.in_coords = st.coords;

    std::vector<VoxelCoord> out = st.coords;
    for (auto& c : out)
        for (int a = 0; a < 3; ++a) c[a] = floor_div(c[a], stride);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    rb.out_coords = std::move(out);

    for (int dx = 0; dx < kernel_size; ++dx)
        for (int dy = 0; dy < kernel_size; ++dy)
            for (int dz = 0; dz < kernel_size; ++dz) rb.offsets.push_back({dx, dy, dz});
    rb.rules.resize(rb.offsets.size());

    const int b = int(rb.out_coords.size());
    for (std::size_t oi = 0; oi < rb.offsets.size(); ++oi) {
        const VoxelCoord d = rb.offsets[oi];
        auto& out_rules = rb.rules[oi];
        for (int o = 0; o < b; ++o) {
            const VoxelCoord probe{rb.out_coords[o][0] * stride + d[0], rb.out_coords[o][1] * stride + d[1],
                                   rb.out_coords[o][2] * stride + d[2]};
            const int i = st.hash.lookup(probe);
            if (i >= 0) out_rules.emplace_back(i, o);
        }
    }
    return rb;
}

Rulebook build_rulebook_deconv(const Rulebook& downsample) {
    if (downsample.stride < 2)
        throw std::invalid_argument("build_rulebook_deconv: expected a strided rulebook");
    Rulebook rb;
    rb.kernel_size = downsample.kernel_size;
    rb.stride = downsample.stride;
    rb.in_stride_level = downsample.out_stride_level;
    rb.out_stride_level = downsample.in_stride_level;
    rb.in_coords = downsample.out_coords;
    rb.out_coords = downsample.in_coords;
    rb.offsets = downsample.offsets;
    rb.rules.resize(downsample.rules.size());
    for (std::size_t oi = 0; oi < downsample.rules.size(); ++oi) {
        rb.rules[oi].reserve(downsample.rules[oi].size());
        for (const auto& [i, o] : downsample.rules[oi]) rb.rules[oi].emplace_back(o, i);
    }
    return rb;
}

SparseConv::SparseConv(const std::string& name, ConvVariant variant_, int c_in, int c_out, int kernel_size_,
                       int stride_, std::mt19937_64& rng)
    : variant(variant_), kernel_size(kernel_size_), stride(stride_) {
    const int kv = kernel_size * kernel_size * kernel_size;
    const double scale = 1.0 / std::sqrt(double(kv));
    w.reserve(kv);
    for (int i = 0; i < kv; ++i)
        w.emplace_back(name + ".w" + std::to_string(i), glorot_uniform(c_in, c_out, rng, scale));
    b = Param(name + ".b", Matrix(1, c_out, 0.0));
}

SparseTensor SparseConv::forward(const SparseTensor& in, const Rulebook& rb) const {
    if (in.channels() != in_channels())
        throw std::invalid_argument("sparse_conv_forward: feature width " + std::to_string(in.channels()) +
                                    " does not match kernel " + w[0].value.shape_str());
    if (in.stride_level != rb.in_stride_level)
        throw std::invalid_argument("sparse_conv_forward: tensor stride level " + std::to_string(in.stride_level) +
                                    " vs rulebook " + std::to_string(rb.in_stride_level));
    if (rb.rules.size() != w.size())
        throw std::invalid_argument("sparse_conv_forward: rulebook offset count mismatch");

    const int b_rows = int(rb.out_coords.size());
    const int c_out = out_channels();
    Matrix out(b_rows, c_out, 0.0);
    add_row_vector(out, b.value);

    for (std::size_t oi = 0; oi < rb.rules.size(); ++oi) {
        const auto& rules = rb.rules[oi];
        if (rules.empty()) continue;
        const int r = int(rules.size());
        Matrix gathered(r, in.feats.cols);
        for (int t = 0; t < r; ++t) {
            const double* src = in.feats.row(rules[t].first);
            std::copy(src, src + in.feats.cols, gathered.row(t));
        }
        Matrix partial = matmul(gathered, w[oi].value);
        // Scatter-add in rule order; rules are sorted by output row, so the
        // accumulation order per row is fixed.
        for (int t = 0; t < r; ++t) {
            double* dst = out.row(rules[t].second);
            const double* src = partial.row(t);
            for (int j = 0; j < c_out; ++j) dst[j] += src[j];
        }
    }

    SparseTensor result = make_sparse_tensor(rb.out_coords, std::move(out), rb.out_stride_level);
    return result;
}

Matrix SparseConv::backward(const Matrix& in_feats, const Rulebook& rb, const Matrix& upstream) {
    if (in_feats.rows != int(rb.in_coords.size()) || upstream.rows != int(rb.out_coords.size()))
        throw std::invalid_argument("sparse_conv_backward: saved state does not match rulebook");
    const int c_out = out_channels();
    require_shape(b.value, 1, upstream.cols, "sparse_conv_backward bias");

    Matrix db = col_sums(upstream);
    axpy(1.0, db, b.grad);

    Matrix d_in(in_feats.rows, in_feats.cols, 0.0);
    for (std::size_t oi = 0; oi < rb.rules.size(); ++oi) {
        const auto& rules = rb.rules[oi];
        if (rules.empty()) continue;
        const int r = int(rules.size());
        Matrix x_g(r, in_feats.cols);
        Matrix u_g(r, c_out);
        for (int t = 0; t < r; ++t) {
            const double* xs = in_feats.row(rules[t].first);
            std::copy(xs, xs + in_feats.cols, x_g.row(t));
            const double* us = upstream.row(rules[t].second);
            std::copy(us, us + c_out, u_g.row(t));
        }
        matmul_at_b_acc(x_g, u_g, w[oi].grad);
        Matrix d_g = matmul_a_bt(u_g, w[oi].value);
        for (int t = 0; t < r; ++t) {
            double* dst = d_in.row(rules[t].first);
            const double* src = d_g.row(t);
            for (int j = 0; j < in_feats.cols; ++j) dst[j] += src[j];
        }
    }
    return d_in;
}

void SparseConv::collect(std::vector<Param*>& out) {
    for (auto& wi : w) out.push_back(&wi);
    out.push_back(&b);
}

ResidualBlock::ResidualBlock(const std::string& name, int channels, int kernel_size, std::mt19937_64& rng)
    : conv_a(name + ".a", ConvVariant::submanifold, channels, channels, kernel_size, 1, rng),
      conv_b(name + ".b", ConvVariant::submanifold, channels, channels, kernel_size, 1, rng) {}

SparseTensor ResidualBlock::forward(const SparseTensor& in, const Rulebook& rb, Ctx& ctx) const {
    if (in.channels() != conv_a.in_channels())
        throw std::invalid_argument("residual_block: width mismatch: " + std::to_string(in.channels()) + " vs " +
                                    std::to_string(conv_a.in_channels()));
    ctx.in = in.feats;
    SparseTensor za = conv_a.forward(in, rb);
    ctx.z_a = za.feats;
    za.feats = relu(za.feats);
    ctx.act_a = za.feats;
    SparseTensor zb = conv_b.forward(za, rb);
    ctx.z_b = zb.feats;
    zb.feats = relu(zb.feats);
    axpy(1.0, ctx.in, zb.feats); // identity skip after the branch
    return zb;
}

Matrix ResidualBlock::backward(const Ctx& ctx, const Rulebook& rb, const Matrix& upstream) {
    if (ctx.in.rows == 0) throw std::invalid_argument("residual_block backward: missing saved activations");
    Matrix d = relu_backward(ctx.z_b, upstream);
    d = conv_b.backward(ctx.act_a, rb, d);
    d = relu_backward(ctx.z_a, d);
    d = conv_a.backward(ctx.in, rb, d);
    axpy(1.0, upstream, d); // skip path
    return d;
}

void ResidualBlock::collect(std::vector<Param*>& out) {
    conv_a.collect(out);
    conv_b.collect(out);
}

UNet::UNet(const std::string& name, const UNetConfig& cfg_, std::mt19937_64& rng) : cfg(cfg_) {
    const auto [e1, e2, e3] = cfg.enc_widths;
    const int ks = cfg.kernel_size, s = cfg.stride;
    down1 = SparseConv(name + ".down1", ConvVariant::strided, cfg.in_width, e1, ks, s, rng);
    res1 = ResidualBlock(name + ".res1", e1, ks, rng);
    down2 = SparseConv(name + ".down2", ConvVariant::strided, e1, e2, ks, s, rng);
    res2 = ResidualBlock(name + ".res2", e2, ks, rng);
    down3 = SparseConv(name + ".down3", ConvVariant::strided, e2, e3, ks, s, rng);
    res3 = ResidualBlock(name + ".res3", e3, ks, rng);
    up3 = SparseConv(name + ".up3", ConvVariant::deconv, e3, e2, ks, s, rng);
    fuse3 = SparseConv(name + ".fuse3", ConvVariant::submanifold, 2 * e2, e2, ks, 1, rng);
    up2 = SparseConv(name + ".up2", ConvVariant::deconv, e2, e1, ks, s, rng);
    fuse2 = SparseConv(name + ".fuse2", ConvVariant::submanifold, 2 * e1, e1, ks, 1, rng);
    up1 = SparseConv(name + ".up1", ConvVariant::deconv, e1, cfg.in_width, ks, s, rng);
    fuse1 = SparseConv(name + ".fuse1", ConvVariant::submanifold, 2 * cfg.in_width, cfg.out_width, ks, 1, rng);
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw std::invalid_argument("concat_cols: row mismatch: " + a.shape_str() + " vs " + b.shape_str());
    Matrix c(a.rows, a.cols + b.cols);
    for (int i = 0; i < a.rows; ++i) {
        std::copy(a.row(i), a.row(i) + a.cols, c.row(i));
        std::copy(b.row(i), b.row(i) + b.cols, c.row(i) + a.cols);
    }
    return c;
}

SparseTensor UNet::forward(const SparseTensor& x0, Ctx& ctx) const {
    if (x0.channels() != cfg.in_width)
        throw std::invalid_argument("unet_forward: input width " + std::to_string(x0.channels()) + ", expected " +
                                    std::to_string(cfg.in_width));
    const int ks = cfg.kernel_size, s = cfg.stride;
    ctx.x0 = x0.feats;

    // Encoder
    ctx.str1 = build_rulebook_strided(x0, ks, s);
    ctx.d1_in = x0.feats;
    SparseTensor t1 = down1.forward(x0, ctx.str1);
    ctx.sub1 = build_rulebook_submanifold(t1, ks);
    SparseTensor x1 = res1.forward(t1, ctx.sub1, ctx.r1);

    ctx.str2 = build_rulebook_strided(x1, ks, s);
    ctx.d2_in = x1.feats;
    SparseTensor t2 = down2.forward(x1, ctx.str2);
    ctx.sub2 = build_rulebook_submanifold(t2, ks);
    SparseTensor x2 = res2.forward(t2, ctx.sub2, ctx.r2);

    ctx.str3 = build_rulebook_strided(x2, ks, s);
    ctx.d3_in = x2.feats;
    SparseTensor t3 = down3.forward(x2, ctx.str3);
    ctx.sub3 = build_rulebook_submanifold(t3, ks);
    SparseTensor x3 = res3.forward(t3, ctx.sub3, ctx.r3);

    // Decoder: deconv, concat the skip at that level, fuse.
    ctx.dec3 = build_rulebook_deconv(ctx.str3);
    ctx.u3_in = x3.feats;
    SparseTensor d3 = up3.forward(x3, ctx.dec3);
    if (d3.coords != x2.coords)
        throw std::runtime_error("unet_forward: decoder level 3 coords diverged from the skip tensor");
    ctx.cat3 = concat_cols(d3.feats, x2.feats);
    SparseTensor y2 = fuse3.forward(make_sparse_tensor(d3.coords, ctx.cat3, d3.stride_level), ctx.sub2);

    ctx.dec2 = build_rulebook_deconv(ctx.str2);
    ctx.u2_in = y2.feats;
    SparseTensor d2 = up2.forward(y2, ctx.dec2);
    if (d2.coords != x1.coords)
        throw std::runtime_error("unet_forward: decoder level 2 coords diverged from the skip tensor");
    ctx.cat2 = concat_cols(d2.feats, x1.feats);
    SparseTensor y1 = fuse2.forward(make_sparse_tensor(d2.coords, ctx.cat2, d2.stride_level), ctx.sub1);

    ctx.dec1 = build_rulebook_deconv(ctx.str1);
    ctx.u1_in = y1.feats;
    SparseTensor d1 = up1.forward(y1, ctx.dec1);
    if (d1.coords != x0.coords)
        throw std::runtime_error("unet_forward: decoder level 1 coords diverged from the input tensor");
    ctx.sub0 = build_rulebook_submanifold(d1, ks);
    ctx.cat1 = concat_cols(d1.feats, x0.feats);
    SparseTensor y0 = fuse1.forward(make_sparse_tensor(d1.coords, ctx.cat1, d1.stride_level), ctx.sub0);
    return y0;
}

Matrix UNet::backward(Ctx& ctx, const Matrix& upstream) {
    if (ctx.x0.rows == 0) throw std::invalid_argument("unet backward: missing saved activations");
    const int e1 = cfg.enc_widths[0], e2 = cfg.enc_widths[1];

    // Level 0
    Matrix d_cat1 = fuse1.backward(ctx.cat1, ctx.sub0, upstream);
    Matrix d_d1(d_cat1.rows, cfg.in_width);
    Matrix d_x0(d_cat1.rows, cfg.in_width);
    for (int i = 0; i < d_cat1.rows; ++i) {
        std::copy(d_cat1.row(i), d_cat1.row(i) + cfg.in_width, d_d1.row(i));
        std::copy(d_cat1.row(i) + cfg.in_width, d_cat1.row(i) + 2 * cfg.in_width, d_x0.row(i));
    }
    Matrix d_y1 = up1.backward(ctx.u1_in, ctx.dec1, d_d1);

    // Level 1
    Matrix d_cat2 = fuse2.backward(ctx.cat2, ctx.sub1, d_y1);
    Matrix d_d2(d_cat2.rows, e1);
    Matrix d_x1(d_cat2.rows, e1);
    for (int i = 0; i < d_cat2.rows; ++i) {
        std::copy(d_cat2.row(i), d_cat2.row(i) + e1, d_d2.row(i));
        std::copy(d_cat2.row(i) + e1, d_cat2.row(i) + 2 * e1, d_x1.row(i));
    }
    Matrix d_y2 = up2.backward(ctx.u2_in, ctx.dec2, d_d2);

    // Level 2
    Matrix d_cat3 = fuse3.backward(ctx.cat3, ctx.sub2, d_y2);
    Matrix d_d3(d_cat3.rows, e2);
    Matrix d_x2(d_cat3.rows, e2);
    for (int i = 0; i < d_cat3.rows; ++i) {
        std::copy(d_cat3.row(i), d_cat3.row(i) + e2, d_d3.row(i));
        std::copy(d_cat3.row(i) + e2, d_cat3.row(i) + 2 * e2, d_x2.row(i));
    }
    Matrix d_x3 = up3.backward(ctx.u3_in, ctx.dec3, d_d3);

    // Encoder, deepest first. Skip gradients join before each strided conv's
    // backward via the residual/stage inputs.
    Matrix d_t3 = res3.backward(ctx.r3, ctx.sub3, d_x3);
    Matrix d_x2_enc = down3.backward(ctx.d3_in, ctx.str3, d_t3);
    axpy(1.0, d_x2_enc, d_x2);

    Matrix d_t2 = res2.backward(ctx.r2, ctx.sub2, d_x2);
    Matrix d_x1_enc = down2.backward(ctx.d2_in, ctx.str2, d_t2);
    axpy(1.0, d_x1_enc, d_x1);

    Matrix d_t1 = res1.backward(ctx.r1, ctx.sub1, d_x1);
    Matrix d_x0_enc = down1.backward(ctx.d1_in, ctx.str1, d_t1);
    axpy(1.0, d_x0_enc, d_x0);

    return d_x0;
}

void UNet::collect(std::vector<Param*>& out) {
    down1.collect(out);
    res1.collect(out);
    down2.collect(out);
    res2.collect(out);
    down3.collect(out);
    res3.collect(out);
    up3.collect(out);
    fuse3.collect(out);
    up2.collect(out);
    fuse2.collect(out);
    up1.collect(out);
    fuse1.collect(out);
}

} // namespace pcsc
