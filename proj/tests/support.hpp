#pragma once

// Shared test helpers: finite-difference gradient checking, independent
// brute-force oracles, and temp-directory plumbing. Everything here stays
// independent of the library's backward/metric code paths it is used to
// check.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "scalelab/tensor.hpp"

namespace testsupport {

inline bool close(double a, double b, double rtol, double atol) {
    return std::abs(a - b) <= atol + rtol * std::max(std::abs(a), std::abs(b));
}

// Central differences on every element of `param`. eval() must return the
// objective as a double. The denominator uses the actually-realized float32
// step so quantization of x +- h cancels out.
template <typename Eval>
std::vector<double> fd_gradient(scalelab::Tensor& param, Eval&& eval, float step = 1e-3f) {
    std::vector<double> grad(static_cast<size_t>(param.size()));
    for (std::int64_t i = 0; i < param.size(); ++i) {
        const float orig = param[i];
        const float plus = orig + step;
        const float minus = orig - step;
        param[i] = plus;
        const double lp = eval();
        param[i] = minus;
        const double lm = eval();
        param[i] = orig;
        grad[static_cast<size_t>(i)] = (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
    }
    return grad;
}

struct GradCheckResult {
    bool ok = true;
    double worst_abs_diff = 0.0;
    std::int64_t worst_index = -1;
};

inline GradCheckResult compare_gradients(const std::vector<double>& fd, const scalelab::Tensor& backprop,
                                         double rtol = 1e-3, double atol = 5e-4) {
    GradCheckResult result;
    for (std::int64_t i = 0; i < backprop.size(); ++i) {
        const double a = fd[static_cast<size_t>(i)];
        const double b = static_cast<double>(backprop[i]);
        const double diff = std::abs(a - b);
        if (diff > result.worst_abs_diff) {
            result.worst_abs_diff = diff;
            result.worst_index = i;
        }
        if (!close(a, b, rtol, atol)) result.ok = false;
    }
    return result;
}

// Objective used for layer-level checks: sum of output * probe, accumulated
// in float64. The gradient of this objective w.r.t. the output is `probe`.
inline double dot_probe(const scalelab::Tensor& out, const scalelab::Tensor& probe) {
    double sum = 0.0;
    for (std::int64_t i = 0; i < out.size(); ++i)
        sum += static_cast<double>(out[i]) * static_cast<double>(probe[i]);
    return sum;
}

// Finite differences across a ReLU kink or a pooling argmax switch are
// meaningless, so instances are regenerated until every pre-activation and
// every pooling gap clears this margin.
inline constexpr double kKinkMargin = 8e-3;

inline bool away_from_zero(const scalelab::Tensor& pre, double margin = kKinkMargin) {
    for (std::int64_t i = 0; i < pre.size(); ++i)
        if (std::abs(static_cast<double>(pre[i])) < margin) return false;
    return true;
}

// Requires the top-2 gap in every pooling window to exceed the margin.
inline bool pool_gaps_ok(const scalelab::Tensor& input, int pool, double margin = kKinkMargin) {
    const int n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    const int ho = (h - pool) / pool + 1, wo = (w - pool) / pool + 1;
    for (int b = 0; b < n; ++b) {
        for (int i = 0; i < ho; ++i) {
            for (int j = 0; j < wo; ++j) {
                for (int ch = 0; ch < c; ++ch) {
                    double best = -1e300, second = -1e300;
                    for (int di = 0; di < pool; ++di) {
                        for (int dj = 0; dj < pool; ++dj) {
                            const double v = input(b, i * pool + di, j * pool + dj, ch);
                            if (v > best) {
                                second = best;
                                best = v;
                            } else if (v > second) {
                                second = v;
                            }
                        }
                    }
                    if (best - second < margin) return false;
                }
            }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Independent convolution oracle: direct six-nested-loop evaluation in
// float64. Valid padding, stride 1, NHWC input, (K,K,Cin,Cout) kernels.
// ---------------------------------------------------------------------------

inline scalelab::Tensor conv2d_oracle(const scalelab::Tensor& input, const scalelab::Tensor& weights,
                                      const scalelab::Tensor& bias, bool relu) {
    const int n = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
    const int k = weights.dim(0), cout = weights.dim(3);
    const int ho = h - k + 1, wo = w - k + 1;
    scalelab::Tensor out(scalelab::Shape{n, ho, wo, cout});
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j)
                for (int f = 0; f < cout; ++f) {
                    double acc = static_cast<double>(bias[f]);
                    for (int di = 0; di < k; ++di)
                        for (int dj = 0; dj < k; ++dj)
                            for (int ch = 0; ch < cin; ++ch)
                                acc += static_cast<double>(input(b, i + di, j + dj, ch)) *
                                       static_cast<double>(weights(di, dj, ch, f));
                    if (relu && acc < 0.0) acc = 0.0;
                    out(b, i, j, f) = static_cast<float>(acc);
                }
    return out;
}

// Mann-Whitney pair-counting AUC: fraction of (positive, negative) pairs
// ranked correctly, ties counted 1/2.
inline double auc_pair_oracle(const std::vector<float>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// Scratch directories.
// ---------------------------------------------------------------------------

class TempDir {
public:
    explicit TempDir(const std::string& prefix) {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                (prefix + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testsupport
