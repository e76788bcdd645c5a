#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pcscnet/geometry.hpp"
#include "pcscnet/kpconv.hpp"
#include "pcscnet/loss.hpp"
#include "pcscnet/nn.hpp"
#include "pcscnet/sparse.hpp"

namespace pcsc {

struct ModelConfig {
    double voxel_size = 0.1;
    int kernel_points = 15;
    int mlp_layers = 2;       // point-lift MLP depth (I -> O ... -> O)
    int extract_width = 32;   // O
    std::array<int, 3> unet_widths{32, 64, 128};
    int decoder_width = 32;   // O_dec
    int head_hidden = 64;
    int classes = 2;          // C
    bool use_intensity = true;
    uint64_t seed = 1;

    int input_width() const { return use_intensity ? 5 : 4; }
    void validate() const;
};

// Per point: relative x, y, z inside the voxel, intensity when present, and a
// constant 1. Integer-voxel translations of the cloud leave these unchanged.
Matrix build_input_features(const PointCloud& cloud, const VoxelMap& vmap, bool use_intensity);

// A cloud with its per-run derived geometry, computed once at load.
struct Scan {
    PointCloud cloud;
    VoxelMap vmap;
    Matrix feats;       // N x I
    BoundaryInfo boundary; // empty unless labels present and knn_k > 0
};

Scan prepare_scan(PointCloud cloud, double voxel_size, bool use_intensity, int knn_k);

struct ForwardContext {
    ExtractContext extract;
    UNet::Ctx unet;
    Matrix unet_out;  // A x O_dec
    Matrix concat;    // N x (O + O_dec)
    MlpContext head;
    Matrix logits;    // N x C
    Matrix probs;     // N x C

    std::string norm_summary() const; // stage norms for diagnostics
};

struct Model {
    ModelConfig cfg;
    Mlp lift;
    KernelPointSet kernel;
    UNet unet;
    Mlp head;

    explicit Model(const ModelConfig& cfg);

    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    void zero_grads();

    Matrix forward(const Scan& scan, ForwardContext& ctx) const; // probabilities N x C
    void backward(const Scan& scan, ForwardContext& ctx, const Matrix& d_logits);

    void save(const std::string& path, const std::vector<const Param*>& extra = {}) const;
    // Loads value matrices by name; entries named adam.* / train.* are
    // ignored here and returned for the caller.
    std::vector<Param> load(const std::string& path);
};

// row p = [point_feats[p] | voxel_feats[voxel of p]]
Matrix devoxelize_concat(const Matrix& point_feats, const Matrix& voxel_feats, const VoxelMap& vmap);
// Splits an upstream over the concat: left part per point, right part
// scatter-added per voxel.
void devoxelize_concat_backward(const Matrix& upstream, const VoxelMap& vmap, int point_width, Matrix& d_point,
                                Matrix& d_voxel);

std::vector<int> predict(const Matrix& probs); // argmax per row, ties to the lower class

struct TrainStepResult {
    double loss = 0.0;
    long long correct = 0; // pre-step argmax hits over labeled points
    long long labeled = 0;
};

// forward -> combined loss -> backward -> adam -> zero grads over a batch of
// scans (losses averaged). Returns the pre-step loss. Aborts with stage norm
// diagnostics when the loss goes non-finite.
TrainStepResult train_step(const std::vector<const Scan*>& batch, Model& model, AdamState& adam,
                           const LossConfig& loss_cfg);

} // namespace pcsc
