#include "pcscnet/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace pcsc {

namespace {

LossResult weighted_cross_entropy(const Matrix& probs, const std::vector<int>& targets,
                                  const std::vector<double>& scale) {
    const int n = probs.rows, c = probs.cols;
    if (int(targets.size()) != n)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                    std::to_string(n) + " rows");
    int valid = 0;
    for (int p = 0; p < n; ++p) {
        if (targets[p] < 0) continue;
        if (targets[p] >= c)
            throw std::invalid_argument("cross_entropy: target " + std::to_string(targets[p]) + " >= classes " +
                                        std::to_string(c) + " at point " + std::to_string(p));
        ++valid;
    }
    if (valid == 0) throw std::invalid_argument("cross_entropy: no labeled points");

    LossResult res;
    res.d_logits = Matrix(n, c, 0.0);
    const double inv = 1.0 / double(valid);
    double total = 0.0;
    for (int p = 0; p < n; ++p) {
        const int t = targets[p];
        if (t < 0) continue;
        const double* pr = probs.row(p);
        const double w = scale.empty() ? 1.0 : scale[p];
        total += w * -std::log(std::max(pr[t], 1e-12));
        double* d = res.d_logits.row(p);
        for (int j = 0; j < c; ++j) d[j] = w * pr[j] * inv;
        d[t] -= w * inv;
    }
    res.value = total * inv;
    return res;
}

} // namespace

LossResult cross_entropy(const Matrix& probs, const std::vector<int>& targets) {
    return weighted_cross_entropy(probs, targets, {});
}

BoundaryInfo compute_n_diff(const std::vector<int>& labels, const KnnGraph& g) {
    if (labels.empty()) throw std::invalid_argument("compute_n_diff: labels missing");
    const int n = int(labels.size());
    if (g.indices.size() != std::size_t(n) * g.k)
        throw std::invalid_argument("compute_n_diff: knn graph size mismatch");
    BoundaryInfo info;
    info.n_diff.resize(n, 0);
    for (int p = 0; p < n; ++p) {
        int count = 0;
        for (int j = 0; j < g.k; ++j)
            if (labels[g.neighbor(p, j)] != labels[p]) ++count;
        info.n_diff[p] = count;
    }
    return info;
}

LossResult combined_loss(const Matrix& probs, const std::vector<int>& targets, const BoundaryInfo& boundary,
                         const LossConfig& cfg) {
    if (boundary.n_diff.size() != std::size_t(probs.rows))
        throw std::invalid_argument("combined_loss: boundary info length " + std::to_string(boundary.n_diff.size()) +
                                    " != points " + std::to_string(probs.rows));
    std::vector<double> scale(probs.rows);
    for (int p = 0; p < probs.rows; ++p) scale[p] = cfg.w_ce + cfg.w_pa * double(boundary.n_diff[p]);
    return weighted_cross_entropy(probs, targets, scale);
}

} // namespace pcsc
