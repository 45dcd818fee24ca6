#pragma once

// Adam update rule and the softmax / binary cross-entropy objective.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "scalelab/tensor.hpp"

namespace scalelab {

struct AdamHyper {
    float learning_rate = 1e-4f;
    float beta1 = 0.9f;   // first-moment decay
    float beta2 = 0.999f; // second-moment decay
    float epsilon = 1e-7f;
    // Denominator sqrt(v_hat + eps) when true, sqrt(v_hat) + eps when false.
    // The two differ only near v_hat ~ 0.
    bool epsilon_inside_sqrt = true;

    void validate() const {
        if (!(learning_rate >= 0.0f)) throw ValueError("adam: learning rate must be >= 0");
        if (!(beta1 >= 0.0f && beta1 < 1.0f)) throw ValueError("adam: beta1 must be in [0,1)");
        if (!(beta2 >= 0.0f && beta2 < 1.0f)) throw ValueError("adam: beta2 must be in [0,1)");
        if (!(epsilon > 0.0f)) throw ValueError("adam: epsilon must be > 0");
    }
};

// Per-parameter-tensor moment accumulators. step counts completed updates.
struct AdamState {
    Tensor first_moment;
    Tensor second_moment;
    std::int64_t step = 0;

    static AdamState for_param(const Tensor& param) {
        AdamState s;
        s.first_moment = Tensor(param.shape());
        s.second_moment = Tensor(param.shape());
        return s;
    }
};

// One Adam update, computed per element in float64 and stored back as
// float32:
//   m <- b1*m + (1-b1)*g         v <- b2*v + (1-b2)*g^2
//   m_hat = m/(1-b1^t)           v_hat = v/(1-b2^t)
//   w <- w - lr * m_hat / sqrt(v_hat + eps)
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamHyper& hyper) {
    hyper.validate();
    if (!param.same_shape(grad) || !param.same_shape(state.first_moment) || !param.same_shape(state.second_moment))
        throw ShapeError("adam_step: param/grad/moment shapes disagree");
    if (state.step >= (std::int64_t{1} << 31)) throw StateError("adam_step: step counter overflow");

    const std::int64_t t = ++state.step;
    const double b1 = static_cast<double>(hyper.beta1);
    const double b2 = static_cast<double>(hyper.beta2);
    const double lr = static_cast<double>(hyper.learning_rate);
    const double eps = static_cast<double>(hyper.epsilon);
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t));

    float* w = param.data();
    const float* g = grad.data();
    float* m = state.first_moment.data();
    float* v = state.second_moment.data();
    for (std::int64_t i = 0; i < param.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
        const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        const double m_hat = mi / bias1;
        const double v_hat = vi / bias2;
        const double denom = hyper.epsilon_inside_sqrt ? std::sqrt(v_hat + eps) : std::sqrt(v_hat) + eps;
        w[i] = static_cast<float>(static_cast<double>(w[i]) - lr * m_hat / denom);
    }
}

// Row-wise softmax with max subtraction; math in float64, stored as float32.
inline Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: expected (N,C) logits, got " + shape_to_string(logits.shape()));
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    Tensor out(logits.shape());
    const float* in = logits.data();
    float* o = out.data();
    for (std::int64_t r = 0; r < n; ++r, in += c, o += c) {
        double hi = static_cast<double>(in[0]);
        for (std::int64_t j = 1; j < c; ++j) hi = std::max(hi, static_cast<double>(in[j]));
        if (!std::isfinite(hi)) throw NumericError("softmax: non-finite logit in row " + std::to_string(r));
        double sum = 0.0;
        std::vector<double> e(static_cast<size_t>(c));
        for (std::int64_t j = 0; j < c; ++j) {
            if (!std::isfinite(static_cast<double>(in[j])))
                throw NumericError("softmax: non-finite logit in row " + std::to_string(r));
            e[static_cast<size_t>(j)] = std::exp(static_cast<double>(in[j]) - hi);
            sum += e[static_cast<size_t>(j)];
        }
        for (std::int64_t j = 0; j < c; ++j) o[j] = static_cast<float>(e[static_cast<size_t>(j)] / sum);
    }
    return out;
}

struct LossValue {
    double loss = 0.0;    // batch mean, >= 0
    Tensor grad_logits;   // (p - onehot(y)) / N; rows sum to 0
};

inline constexpr double kProbabilityFloor = 1e-12;

// Batch-mean cross entropy of softmax(logits) against {0,1} labels, with the
// logit gradient. Probabilities are floored before the log so saturated rows
// cannot produce an infinite loss.
inline LossValue cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.dim(1) != 2)
        throw ShapeError("cross_entropy_loss: expected (N,2) logits, got " + shape_to_string(logits.shape()));
    const std::int64_t n = logits.dim(0);
    if (static_cast<std::int64_t>(labels.size()) != n)
        throw ValueError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " rows");
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != 0 && labels[i] != 1)
            throw ValueError("cross_entropy_loss: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                             " outside {0,1}");

    LossValue result;
    result.grad_logits = Tensor(logits.shape());
    const float* in = logits.data();
    float* g = result.grad_logits.data();
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::int64_t r = 0; r < n; ++r, in += 2, g += 2) {
        const double a = static_cast<double>(in[0]), b = static_cast<double>(in[1]);
        if (!std::isfinite(a) || !std::isfinite(b))
            throw NumericError("cross_entropy_loss: non-finite logit in row " + std::to_string(r));
        const double hi = std::max(a, b);
        const double ea = std::exp(a - hi), eb = std::exp(b - hi);
        const double sum = ea + eb;
        const double p0 = ea / sum, p1 = eb / sum;
        const int y = labels[static_cast<size_t>(r)];
        total -= std::log(std::max(y == 0 ? p0 : p1, kProbabilityFloor));
        g[0] = static_cast<float>((p0 - (y == 0 ? 1.0 : 0.0)) * inv_n);
        g[1] = static_cast<float>((p1 - (y == 1 ? 1.0 : 0.0)) * inv_n);
    }
    result.loss = total * inv_n;
    return result;
}

// Same objective written as sigmoid binary cross-entropy on the logit
// difference; algebraically identical to the softmax form for two classes.
inline double cross_entropy_loss_sigmoid_form(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.dim(1) != 2)
        throw ShapeError("cross_entropy_loss_sigmoid_form: expected (N,2) logits");
    const std::int64_t n = logits.dim(0);
    if (static_cast<std::int64_t>(labels.size()) != n) throw ValueError("cross_entropy_loss_sigmoid_form: label count");
    const float* in = logits.data();
    double total = 0.0;
    for (std::int64_t r = 0; r < n; ++r, in += 2) {
        const int y = labels[static_cast<size_t>(r)];
        if (y != 0 && y != 1) throw ValueError("cross_entropy_loss_sigmoid_form: label outside {0,1}");
        const double diff = static_cast<double>(in[1]) - static_cast<double>(in[0]);
        // -log sigma(diff) = log(1 + exp(-diff)), evaluated stably.
        const double log1p_exp = diff > 0.0 ? std::log1p(std::exp(-diff)) : -diff + std::log1p(std::exp(diff));
        const double loss_pos = log1p_exp;          // -log p1
        const double loss_neg = log1p_exp + diff;   // -log p0
        total += std::min(y == 1 ? loss_pos : loss_neg, -std::log(kProbabilityFloor));
    }
    return total / static_cast<double>(n);
}

}  // namespace scalelab
