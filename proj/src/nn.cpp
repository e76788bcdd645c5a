#include "pcscnet/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace pcsc {

Matrix glorot_uniform(int rows, int cols, std::mt19937_64& rng, double scale) {
    const double a = std::sqrt(6.0 / double(rows + cols));
    std::uniform_real_distribution<double> dist(-a, a);
    Matrix m(rows, cols);
    for (auto& e : m.v) e = dist(rng) * scale;
    return m;
}

Linear::Linear(const std::string& name, int in, int out, std::mt19937_64& rng)
    : W(name + ".W", glorot_uniform(in, out, rng)), b(name + ".b", Matrix(1, out, 0.0)) {}

Matrix Linear::forward(const Matrix& x) const {
    if (x.cols != W.value.rows)
        throw std::invalid_argument("linear_forward(" + W.name + "): shape mismatch: X is " + x.shape_str() +
                                    ", W is " + W.value.shape_str());
    Matrix y = matmul(x, W.value);
    add_row_vector(y, b.value);
    return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& upstream) {
    if (x.cols != W.value.rows || upstream.cols != W.value.cols || upstream.rows != x.rows)
        throw std::invalid_argument("linear_backward(" + W.name + "): shape mismatch: X is " + x.shape_str() +
                                    ", upstream is " + upstream.shape_str() + ", W is " + W.value.shape_str());
    matmul_at_b_acc(x, upstream, W.grad);
    Matrix db = col_sums(upstream);
    axpy(1.0, db, b.grad);
    return matmul_a_bt(upstream, W.value);
}

Matrix relu(const Matrix& x) {
    Matrix y = x;
    for (auto& e : y.v)
        if (e < 0.0) e = 0.0;
    return y;
}

Matrix relu_backward(const Matrix& x, const Matrix& upstream) {
    if (!x.same_shape(upstream))
        throw std::invalid_argument("relu_backward: shape mismatch: " + x.shape_str() + " vs " + upstream.shape_str());
    Matrix d = upstream;
    for (std::size_t i = 0; i < d.v.size(); ++i)
        if (x.v[i] <= 0.0) d.v[i] = 0.0;
    return d;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix y(x.rows, x.cols);
#pragma omp parallel for schedule(static) if (x.size() > 16384)
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* yi = y.row(i);
        double mx = xi[0];
        for (int j = 1; j < x.cols; ++j) mx = std::max(mx, xi[j]);
        double sum = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < x.cols; ++j) yi[j] *= inv;
    }
    return y;
}

ScaleShift::ScaleShift(const std::string& name, int channels)
    : scale(name + ".scale", Matrix(1, channels, 1.0)), shift(name + ".shift", Matrix(1, channels, 0.0)) {}

Matrix ScaleShift::forward(const Matrix& x) const {
    require_shape(scale.value, 1, x.cols, "scale_shift(" + scale.name + ")");
    Matrix y = x;
    for (int i = 0; i < y.rows; ++i) {
        double* yi = y.row(i);
        for (int j = 0; j < y.cols; ++j) yi[j] = yi[j] * scale.value.v[j] + shift.value.v[j];
    }
    return y;
}

Matrix ScaleShift::backward(const Matrix& x, const Matrix& upstream) {
    if (!x.same_shape(upstream))
        throw std::invalid_argument("scale_shift backward: shape mismatch: " + x.shape_str() + " vs " +
                                    upstream.shape_str());
    Matrix dx(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        const double* ui = upstream.row(i);
        double* di = dx.row(i);
        for (int j = 0; j < x.cols; ++j) {
            scale.grad.v[j] += ui[j] * xi[j];
            shift.grad.v[j] += ui[j];
            di[j] = ui[j] * scale.value.v[j];
        }
    }
    return dx;
}

Mlp::Mlp(const std::string& name, const std::vector<int>& widths, std::mt19937_64& rng) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least in/out widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        layers.emplace_back(name + "." + std::to_string(i), widths[i], widths[i + 1], rng);
}

Matrix Mlp::forward(const Matrix& x, MlpContext& ctx) const {
    ctx.lin_inputs.clear();
    ctx.preacts.clear();
    Matrix a = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        ctx.lin_inputs.push_back(a);
        Matrix z = layers[i].forward(a);
        if (i + 1 < layers.size()) {
            ctx.preacts.push_back(z);
            a = relu(z);
        } else {
            a = std::move(z);
        }
    }
    return a;
}

Matrix Mlp::backward(const MlpContext& ctx, const Matrix& upstream) {
    if (ctx.lin_inputs.size() != layers.size())
        throw std::invalid_argument("Mlp::backward: missing saved activations");
    Matrix d = upstream;
    for (int i = int(layers.size()) - 1; i >= 0; --i) {
        if (i + 1 < int(layers.size())) d = relu_backward(ctx.preacts[i], d);
        d = layers[i].backward(ctx.lin_inputs[i], d);
    }
    return d;
}

void Mlp::collect(std::vector<Param*>& out) {
    for (auto& l : layers) {
        out.push_back(&l.W);
        out.push_back(&l.b);
    }
}

void AdamState::register_params(const std::vector<Param*>& params) {
    for (const Param* p : params) {
        Moments mo;
        mo.m = Matrix(p->value.rows, p->value.cols, 0.0);
        mo.v = Matrix(p->value.rows, p->value.cols, 0.0);
        slots[p->name] = std::move(mo);
    }
}

void adam_step(const std::vector<Param*>& params, AdamState& state) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (Param* p : params) {
        auto it = state.slots.find(p->name);
        if (it == state.slots.end())
            throw std::invalid_argument("adam_step: no state registered for param '" + p->name + "'");
        Matrix& m = it->second.m;
        Matrix& v = it->second.v;
        if (!m.same_shape(p->value))
            throw std::invalid_argument("adam_step: state shape mismatch for '" + p->name + "'");
        const std::size_t n = p->value.v.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = p->grad.v[i];
            m.v[i] = state.beta1 * m.v[i] + (1.0 - state.beta1) * g;
            v.v[i] = state.beta2 * v.v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m.v[i] / bc1;
            const double vhat = v.v[i] / bc2;
            p->value.v[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

GradCheckReport grad_check(const std::function<double(bool)>& loss_fn,
                           const std::vector<Param*>& params, double h, double denom_floor) {
    const double base = loss_fn(true);
    if (!std::isfinite(base)) throw std::runtime_error("grad_check: non-finite loss");

    // Snapshot analytic grads before finite-difference evaluations touch anything.
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (const Param* p : params) analytic.push_back(p->grad);

    GradCheckReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        for (std::size_t i = 0; i < p->value.v.size(); ++i) {
            const double saved = p->value.v[i];
            p->value.v[i] = saved + h;
            const double fp = loss_fn(false);
            p->value.v[i] = saved - h;
            const double fm = loss_fn(false);
            p->value.v[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) throw std::runtime_error("grad_check: non-finite loss");
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi].v[i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), denom_floor});
            const double err = std::fabs(a - numeric) / denom;
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_param = p->name;
                rep.worst_index = int(i);
            }
        }
    }
    // Leave the analytic grads in place for the caller.
    for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
    return rep;
}

} // namespace pcsc
