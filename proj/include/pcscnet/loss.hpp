#pragma once
#include <vector>

#include "pcscnet/geometry.hpp"
#include "pcscnet/matrix.hpp"

namespace pcsc {

struct LossConfig {
    double w_ce = 1.0;
    double w_pa = 1.5;
    int k = 10; // neighbors for boundary counting
};

// n_diff[p] = how many of p's k nearest neighbors carry a different label.
struct BoundaryInfo {
    std::vector<int> n_diff;
};

struct LossResult {
    double value = 0.0;
    Matrix d_logits; // gradient wrt the pre-softmax logits (fused with softmax)
};

// Mean over non-ignored points of -log(probs[p][target_p]); targets of -1 are
// ignored. Probabilities are clamped to >= 1e-12 before the log; the gradient
// uses the fused softmax form (probs - onehot) / M.
LossResult cross_entropy(const Matrix& probs, const std::vector<int>& targets);

BoundaryInfo compute_n_diff(const std::vector<int>& labels, const KnnGraph& g);

// Per point (w_ce + w_pa * n_diff_p) * ce_p, averaged over non-ignored points.
LossResult combined_loss(const Matrix& probs, const std::vector<int>& targets, const BoundaryInfo& boundary,
                         const LossConfig& cfg);

} // namespace pcsc
