#pragma once
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcscnet/matrix.hpp"

namespace pcsc {

// Trainable tensor. Gradients accumulate across backward calls; callers zero
// them explicitly between optimizer steps (shared parameters rely on this).
struct Param {
    std::string name;
    Matrix value;
    Matrix grad;

    Param() = default;
    Param(std::string n, Matrix val)
        : name(std::move(n)), value(std::move(val)), grad(value.rows, value.cols, 0.0) {}
    void zero_grad() { grad.fill(0.0); }
};

Matrix glorot_uniform(int rows, int cols, std::mt19937_64& rng, double scale = 1.0);

// y = x*W + b
struct Linear {
    Param W; // in x out
    Param b; // 1 x out

    Linear() = default;
    Linear(const std::string& name, int in, int out, std::mt19937_64& rng);
    int in_dim() const { return W.value.rows; }
    int out_dim() const { return W.value.cols; }

    Matrix forward(const Matrix& x) const;
    // Returns dX; accumulates into W.grad and b.grad.
    Matrix backward(const Matrix& x, const Matrix& upstream);
};

Matrix relu(const Matrix& x);
// Masks upstream where x <= 0 (subgradient 0 at exactly 0).
Matrix relu_backward(const Matrix& x, const Matrix& upstream);

// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& x);

// Per-channel affine y[i][j] = x[i][j]*scale[j] + shift[j].
// Present for configs that want it; the default model leaves it disabled.
struct ScaleShift {
    Param scale; // 1 x C, init 1
    Param shift; // 1 x C, init 0

    ScaleShift() = default;
    ScaleShift(const std::string& name, int channels);
    Matrix forward(const Matrix& x) const;
    Matrix backward(const Matrix& x, const Matrix& upstream);
};

// Stack of Linear layers with relu between them (none after the last).
struct MlpContext {
    std::vector<Matrix> lin_inputs; // input to each linear
    std::vector<Matrix> preacts;    // pre-relu output of each non-final linear
};

struct Mlp {
    std::vector<Linear> layers;

    Mlp() = default;
    // widths = {in, h1, ..., out}
    Mlp(const std::string& name, const std::vector<int>& widths, std::mt19937_64& rng);
    Matrix forward(const Matrix& x, MlpContext& ctx) const;
    Matrix backward(const MlpContext& ctx, const Matrix& upstream); // returns dX
    void collect(std::vector<Param*>& out);
};

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long t = 0;

    struct Moments {
        Matrix m, v;
    };
    std::unordered_map<std::string, Moments> slots;

    void register_params(const std::vector<Param*>& params);
};

// One bias-corrected Adam update over all params. Grads are left untouched.
// Throws if a param has no registered moment slot.
void adam_step(const std::vector<Param*>& params, AdamState& state);

// Central finite differences against the analytic gradient.
// loss_fn(true) must zero grads, run forward+backward and return the loss;
// loss_fn(false) returns the loss only. Throws on a non-finite loss.
// denom_floor bounds the relative-error denominator from below: mismatches on
// coordinates whose gradient magnitude sits under the finite-difference noise
// floor would otherwise read as large relative errors.
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int worst_index = -1;
};
GradCheckReport grad_check(const std::function<double(bool)>& loss_fn,
                           const std::vector<Param*>& params, double h = 1e-6, double denom_floor = 1e-6);

} // namespace pcsc
