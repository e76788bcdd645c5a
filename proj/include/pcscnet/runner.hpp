#pragma once
#include <string>
#include <utility>
#include <vector>

#include "pcscnet/config.hpp"
#include "pcscnet/metrics.hpp"
#include "pcscnet/model.hpp"

namespace pcsc {

struct TrainOutcome {
    int epochs_run = 0;
    double final_loss = 0.0;
    double final_train_acc = 0.0;
    double best_val_miou = -1.0;
    std::vector<double> epoch_losses;
};

struct EvalStats {
    EvalReport report;
    long long boundary_correct = 0;
    long long boundary_total = 0;
    double boundary_acc() const { return boundary_total > 0 ? double(boundary_correct) / double(boundary_total) : 0.0; }
};

struct BenchOutcome {
    double scans_per_sec = 0.0;
    double voxelize_ms = 0.0, extract_ms = 0.0, unet_ms = 0.0, head_ms = 0.0, total_ms = 0.0;
    double sparse_ms = 0.0, dense_ms = 0.0, sparse_dense_ratio = 0.0;
};

struct GradcheckOutcome {
    std::vector<std::pair<std::string, double>> components; // name, max rel err
    bool pass = false;
    double seconds = 0.0;
};

struct AblateVoxelOutcome {
    std::vector<std::pair<double, double>> rows; // voxel size, mean mIoU over seeds
};

struct AblateLossOutcome {
    double miou_ce = 0.0, miou_combined = 0.0;
    double boundary_acc_ce = 0.0, boundary_acc_combined = 0.0;
};

// Shared plumbing, also used by the acceptance suite.
std::vector<Scan> load_scans(const RunConfig& cfg, bool val_split);
EvalStats evaluate_scans(const Model& model, const std::vector<Scan>& scans, int classes);

void cmd_make_synth(const RunConfig& cfg);
TrainOutcome cmd_train(const RunConfig& cfg);
EvalStats cmd_eval(const RunConfig& cfg);
void cmd_infer(const RunConfig& cfg);
AblateVoxelOutcome cmd_ablate_voxel(const RunConfig& cfg);
AblateLossOutcome cmd_ablate_loss(const RunConfig& cfg);
BenchOutcome cmd_bench(const RunConfig& cfg);
GradcheckOutcome cmd_gradcheck(const RunConfig& cfg);

} // namespace pcsc
