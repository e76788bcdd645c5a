#include "pcscnet/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "pcscnet/checkpoint.hpp"

namespace pcsc {

void ModelConfig::validate() const {
    if (voxel_size <= 0.0) throw std::invalid_argument("config: voxel_size must be > 0");
    if (classes < 2) throw std::invalid_argument("config: classes must be >= 2");
    if (mlp_layers < 1) throw std::invalid_argument("config: mlp_layers must be >= 1");
    if (extract_width < 1 || decoder_width < 1 || head_hidden < 1)
        throw std::invalid_argument("config: widths must be >= 1");
}

Matrix build_input_features(const PointCloud& cloud, const VoxelMap& vmap, bool use_intensity) {
    const int n = cloud.size();
    const bool with_int = use_intensity && cloud.has_intensity();
    const int width = with_int ? 5 : 4;
    Matrix rel = relative_coords(cloud, vmap);
    Matrix f(n, width);
    for (int p = 0; p < n; ++p) {
        double* fp = f.row(p);
        fp[0] = rel.at(p, 0);
        fp[1] = rel.at(p, 1);
        fp[2] = rel.at(p, 2);
        if (with_int) fp[3] = cloud.intensity[p];
        fp[width - 1] = 1.0;
    }
    return f;
}

Scan prepare_scan(PointCloud cloud, double voxel_size, bool use_intensity, int knn_k) {
    Scan s;
    s.vmap = voxelize(cloud, voxel_size);
    s.feats = build_input_features(cloud, s.vmap, use_intensity);
    if (knn_k > 0 && cloud.has_labels()) {
        KnnGraph g = knn(cloud, knn_k);
        s.boundary = compute_n_diff(cloud.labels, g);
    }
    s.cloud = std::move(cloud);
    return s;
}

Model::Model(const ModelConfig& cfg_) : cfg(cfg_) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);

    std::vector<int> lift_widths{cfg.input_width()};
    for (int i = 0; i < cfg.mlp_layers; ++i) lift_widths.push_back(cfg.extract_width);
    lift = Mlp("lift", lift_widths, rng);
    kernel = make_kernel_point_set("kpconv", cfg.kernel_points, cfg.voxel_size, cfg.extract_width, rng);

    UNetConfig ucfg;
    ucfg.in_width = cfg.extract_width;
    ucfg.enc_widths = cfg.unet_widths;
    ucfg.out_width = cfg.decoder_width;
    unet = UNet("unet", ucfg, rng);

    head = Mlp("head", {cfg.extract_width + cfg.decoder_width, cfg.head_hidden, cfg.classes}, rng);
}

std::vector<Param*> Model::params() {
    std::vector<Param*> out;
    lift.collect(out);
    kernel.collect(out);
    unet.collect(out);
    head.collect(out);
    return out;
}

std::vector<const Param*> Model::params() const {
    auto mutable_params = const_cast<Model*>(this)->params();
    return {mutable_params.begin(), mutable_params.end()};
}

void Model::zero_grads() {
    for (Param* p : params()) p->zero_grad();
}

Matrix devoxelize_concat(const Matrix& point_feats, const Matrix& voxel_feats, const VoxelMap& vmap) {
    if (point_feats.rows != int(vmap.point_to_voxel.size()) || voxel_feats.rows != vmap.num_voxels())
        throw std::invalid_argument("devoxelize_concat: row misalignment: points " + point_feats.shape_str() +
                                    ", voxels " + voxel_feats.shape_str());
    Matrix out(point_feats.rows, point_feats.cols + voxel_feats.cols);
    for (int p = 0; p < point_feats.rows; ++p) {
        double* dst = out.row(p);
        std::copy(point_feats.row(p), point_feats.row(p) + point_feats.cols, dst);
        const double* vf = voxel_feats.row(vmap.point_to_voxel[p]);
        std::copy(vf, vf + voxel_feats.cols, dst + point_feats.cols);
    }
    return out;
}

void devoxelize_concat_backward(const Matrix& upstream, const VoxelMap& vmap, int point_width, Matrix& d_point,
                                Matrix& d_voxel) {
    const int n = upstream.rows;
    const int voxel_width = upstream.cols - point_width;
    d_point = Matrix(n, point_width);
    d_voxel = Matrix(vmap.num_voxels(), voxel_width, 0.0);
    for (int p = 0; p < n; ++p) {
        const double* u = upstream.row(p);
        std::copy(u, u + point_width, d_point.row(p));
        double* dv = d_voxel.row(vmap.point_to_voxel[p]);
        for (int j = 0; j < voxel_width; ++j) dv[j] += u[point_width + j];
    }
}

Matrix Model::forward(const Scan& scan, ForwardContext& ctx) const {
    if (scan.cloud.size() == 0) throw std::invalid_argument("forward: empty cloud");
    if (scan.feats.cols != cfg.input_width())
        throw std::invalid_argument("forward: input feature width " + std::to_string(scan.feats.cols) +
                                    ", config expects " + std::to_string(cfg.input_width()));

    ExtractionOutput ex = extract(scan.cloud, scan.vmap, scan.feats, lift, kernel, ctx.extract);
    SparseTensor st0 = make_sparse_tensor(scan.vmap.coords, ex.voxel_feats, 1);
    SparseTensor y0 = unet.forward(st0, ctx.unet);
    ctx.unet_out = y0.feats;

    ctx.concat = devoxelize_concat(ex.point_feats, y0.feats, scan.vmap);
    ctx.logits = head.forward(ctx.concat, ctx.head);
    ctx.probs = softmax_rows(ctx.logits);
    return ctx.probs;
}

void Model::backward(const Scan& scan, ForwardContext& ctx, const Matrix& d_logits) {
    Matrix d_concat = head.backward(ctx.head, d_logits);
    Matrix d_point, d_voxel;
    devoxelize_concat_backward(d_concat, scan.vmap, cfg.extract_width, d_point, d_voxel);
    Matrix d_st0 = unet.backward(ctx.unet, d_voxel);
    extract_backward(scan.vmap, const_cast<Mlp&>(lift), kernel, ctx.extract, d_point, d_st0);
}

std::vector<int> predict(const Matrix& probs) {
    std::vector<int> labels(probs.rows);
    for (int i = 0; i < probs.rows; ++i) {
        const double* p = probs.row(i);
        int best = 0;
        for (int j = 1; j < probs.cols; ++j)
            if (p[j] > p[best]) best = j;
        labels[i] = best;
    }
    return labels;
}

std::string ForwardContext::norm_summary() const {
    std::ostringstream os;
    os << "point_feats=" << extract.point_feats.frob_norm() << " unet_out=" << unet_out.frob_norm()
       << " logits=" << logits.frob_norm();
    return os.str();
}

void Model::save(const std::string& path, const std::vector<const Param*>& extra) const {
    std::vector<const Param*> all = params();
    all.insert(all.end(), extra.begin(), extra.end());
    save_checkpoint(path, all);
}

std::vector<Param> Model::load(const std::string& path) {
    std::vector<Param> entries = load_checkpoint(path);
    std::unordered_map<std::string, Param*> by_name;
    for (auto& e : entries) by_name[e.name] = &e;

    std::vector<Param> extras;
    for (Param* p : params()) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: missing param '" + p->name + "' in " + path);
        if (!it->second->value.same_shape(p->value))
            throw std::runtime_error("checkpoint: shape mismatch for '" + p->name + "': file " +
                                     it->second->value.shape_str() + ", model " + p->value.shape_str());
        p->value = it->second->value;
        by_name.erase(it);
    }
    for (auto& e : entries)
        if (by_name.count(e.name)) extras.push_back(std::move(e));
    return extras;
}

TrainStepResult train_step(const std::vector<const Scan*>& batch, Model& model, AdamState& adam,
                           const LossConfig& loss_cfg) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const double inv_b = 1.0 / double(batch.size());
    TrainStepResult r;
    for (const Scan* scan : batch) {
        if (!scan->cloud.has_labels()) throw std::invalid_argument("train_step: scan has no labels");
        if (scan->boundary.n_diff.empty())
            throw std::invalid_argument("train_step: scan prepared without boundary info");
        ForwardContext ctx;
        Matrix probs = model.forward(*scan, ctx);
        LossResult loss = combined_loss(probs, scan->cloud.labels, scan->boundary, loss_cfg);
        if (!std::isfinite(loss.value))
            throw std::runtime_error("train_step: non-finite loss; stage norms: " + ctx.norm_summary());
        r.loss += loss.value * inv_b;
        const std::vector<int> pred = predict(probs);
        for (int p = 0; p < int(pred.size()); ++p) {
            if (scan->cloud.labels[p] < 0) continue;
            ++r.labeled;
            if (pred[p] == scan->cloud.labels[p]) ++r.correct;
        }
        if (batch.size() > 1)
            for (auto& g : loss.d_logits.v) g *= inv_b;
        model.backward(*scan, ctx, loss.d_logits);
    }
    auto params = model.params();
    adam_step(params, adam);
    model.zero_grads();
    return r;
}

} // namespace pcsc
