#pragma once

// Dense float32 tensor (row-major, NHWC for images) and the deterministic
// counter-based random number generator everything else draws from.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "scalelab/errors.hpp"
#include "scalelab/runtime.hpp"

namespace scalelab {

using Shape = std::vector<int>;

inline std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

// Validated element count; every dimension must be >= 1.
inline std::int64_t shape_size(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 1) throw ShapeError("invalid shape " + shape_to_string(shape) + ": dimensions must be >= 1");
        n *= d;
    }
    return n;
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f)
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_size(shape_)), fill) {}

    static Tensor from(Shape shape, std::vector<float> values) {
        Tensor t;
        const std::int64_t n = shape_size(shape);
        if (n != static_cast<std::int64_t>(values.size()))
            throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_to_string(shape));
        t.shape_ = std::move(shape);
        t.data_ = std::move(values);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    float& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Row-major multi-index access; rank must match the index count.
    template <typename... Ix>
    float& operator()(Ix... ix) {
        return data_[static_cast<size_t>(offset(ix...))];
    }
    template <typename... Ix>
    float operator()(Ix... ix) const {
        return data_[static_cast<size_t>(offset(ix...))];
    }

    // Same data, new shape; element count must be preserved.
    Tensor reshaped(Shape new_shape) const& {
        Tensor t = *this;
        return std::move(t).reshaped(std::move(new_shape));
    }
    Tensor reshaped(Shape new_shape) && {
        if (shape_size(new_shape) != size())
            throw ShapeError("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(new_shape) +
                             " changes element count");
        shape_ = std::move(new_shape);
        return std::move(*this);
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool operator==(const Tensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

private:
    template <typename... Ix>
    std::int64_t offset(Ix... ix) const {
        constexpr int n = sizeof...(Ix);
        const std::int64_t idx[n] = {static_cast<std::int64_t>(ix)...};
        std::int64_t off = 0;
        for (int i = 0; i < n; ++i) off = off * shape_[static_cast<size_t>(i)] + idx[i];
        return off;
    }

    Shape shape_;
    std::vector<float> data_;
};

inline Tensor tensor_new(Shape shape, float fill = 0.0f) { return Tensor(std::move(shape), fill); }

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out = a;
    const float* pb = b.data();
    float* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] += pb[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor out = a;
    const float* pb = b.data();
    float* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] -= pb[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out = a;
    const float* pb = b.data();
    float* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] *= pb[i];
    return out;
}

inline Tensor scale(const Tensor& a, float s) {
    Tensor out = a;
    float* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] *= s;
    return out;
}

template <typename Fn>
Tensor map(const Tensor& a, Fn&& fn) {
    Tensor out = a;
    float* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = fn(po[i]);
    return out;
}

// C = A(m x k) * B(k x n). Accumulates every dot product in float64 and
// rounds once on store; rows are independent so the optional parallel path
// is bitwise identical to the serial one.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: operands must be rank-2, got " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    Tensor c(Shape{static_cast<int>(m), static_cast<int>(n)});
    const float* pa = a.data();
    const float* pb = b.data();
    float* pc = c.data();
    parallel_chunks(m, [&](std::int64_t row_begin, std::int64_t row_end) {
        std::vector<double> acc(static_cast<size_t>(n));
        for (std::int64_t i = row_begin; i < row_end; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const float* arow = pa + i * k;
            for (std::int64_t p = 0; p < k; ++p) {
                const double av = static_cast<double>(arow[p]);
                const float* brow = pb + p * n;
                for (std::int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
            }
            float* crow = pc + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
        }
    });
    return c;
}

inline Tensor identity_matrix(int n) {
    Tensor t(Shape{n, n});
    for (int i = 0; i < n; ++i) t(i, i) = 1.0f;
    return t;
}

// ---------------------------------------------------------------------------
// Counter-based RNG. Output i depends only on (key, i), so equal seeds give
// equal sequences on every platform, and independent streams can be split off
// by tag without consuming state from the parent.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace detail

class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(detail::mix64(seed ^ 0x5ca1ab1e00000000ull)) {}

    // Independent child stream keyed by (this stream, tag, index).
    Rng stream(std::uint64_t tag, std::uint64_t index = 0) const {
        Rng child(0);
        child.key_ = detail::mix64(key_ ^ detail::mix64(tag * 0xd6e8feb86659fd93ull + index));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t next_u64() { return detail::mix64(key_ + 0xa0761d6478bd642full * ++counter_); }

    // Uniform in [0,1) with 24 bits of resolution: reproducible float math.
    float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    // Uniform in [0,1) with 53 bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) { return lo + next_float() * (hi - lo); }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

inline Tensor rng_uniform(Rng& rng, Shape shape, float lo, float hi) {
    if (!(lo < hi))
        throw ValueError("rng_uniform: empty range [" + std::to_string(lo) + ", " + std::to_string(hi) + ")");
    Tensor t(std::move(shape));
    float* p = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i) p[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace scalelab
