#include <cmath>
#include <vector>

#include "doctest.h"
#include "scalelab/layers.hpp"
#include "support.hpp"

using namespace scalelab;
using testsupport::compare_gradients;
using testsupport::dot_probe;
using testsupport::fd_gradient;

namespace {

LayerState conv_state(Rng& rng, int kernel, int cin, int cout) {
    LayerState st;
    st.weights = rng_uniform(rng, {kernel, kernel, cin, cout}, -0.7f, 0.7f);
    st.bias = rng_uniform(rng, {cout}, -0.3f, 0.3f);
    return st;
}

LayerState dense_state(Rng& rng, int in, int out) {
    LayerState st;
    st.weights = rng_uniform(rng, {in, out}, -0.7f, 0.7f);
    st.bias = rng_uniform(rng, {out}, -0.3f, 0.3f);
    return st;
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

TEST_CASE("conv2d output shape follows the valid-padding arithmetic") {
    const LayerSpec spec = LayerSpec::conv2d(16, 3);
    CHECK(layer_output_shape(spec, {108, 108, 3}) == Shape{106, 106, 16});
    CHECK(layer_param_count(spec, {108, 108, 3}) == 448);

    Rng rng(1);
    LayerState st = conv_state(rng, 3, 3, 16);
    Tensor input = rng_uniform(rng, {1, 108, 108, 3}, 0.0f, 1.0f);
    Tensor out = conv2d_forward(input, st, spec, false);
    CHECK(out.shape() == Shape{1, 106, 106, 16});

    CHECK_THROWS_AS(layer_output_shape(LayerSpec::conv2d(4, 5), {4, 4, 1}), ShapeError);
}

TEST_CASE("conv2d all-ones kernel sums the window") {
    LayerSpec spec = LayerSpec::conv2d(1, 3, Activation::none);
    LayerState st;
    st.weights = Tensor(Shape{3, 3, 1, 1}, 1.0f);
    st.bias = Tensor(Shape{1});
    Tensor input(Shape{1, 3, 3, 1}, 1.0f);
    Tensor out = conv2d_forward(input, st, spec, false);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d matches the nested-loop oracle") {
    Rng rng(77);
    for (int round = 0; round < 10; ++round) {
        const int cout = 3;
        LayerSpec spec = LayerSpec::conv2d(cout, 3, round % 2 ? Activation::relu : Activation::none);
        LayerState st = conv_state(rng, 3, 2, cout);
        Tensor input = rng_uniform(rng, {2, 6, 6, 2}, -1.0f, 1.0f);
        Tensor got = conv2d_forward(input, st, spec, false);
        Tensor want = testsupport::conv2d_oracle(input, st.weights, st.bias, spec.activation == Activation::relu);
        REQUIRE(got.shape() == want.shape());
        for (std::int64_t i = 0; i < got.size(); ++i)
            CHECK(std::abs(got[i] - want[i]) <= 1e-5 * std::max(1.0f, std::abs(want[i])));
    }
}

TEST_CASE("conv2d backward: zero upstream gradient gives zero gradients") {
    Rng rng(5);
    LayerSpec spec = LayerSpec::conv2d(2, 3, Activation::none);
    LayerState st = conv_state(rng, 3, 1, 2);
    Tensor input = rng_uniform(rng, {1, 5, 5, 1}, -1.0f, 1.0f);
    conv2d_forward(input, st, spec, true);
    ConvGrads g = conv2d_backward(Tensor(Shape{1, 3, 3, 2}), st, spec);
    for (std::int64_t i = 0; i < g.weights.size(); ++i) CHECK(g.weights[i] == 0.0f);
    for (std::int64_t i = 0; i < g.bias.size(); ++i) CHECK(g.bias[i] == 0.0f);
    for (std::int64_t i = 0; i < g.input.size(); ++i) CHECK(g.input[i] == 0.0f);
}

TEST_CASE("conv2d backward without forward is a state error") {
    LayerSpec spec = LayerSpec::conv2d(2, 3);
    LayerState st;
    st.weights = Tensor(Shape{3, 3, 1, 2});
    st.bias = Tensor(Shape{2});
    CHECK_THROWS_AS(conv2d_backward(Tensor(Shape{1, 3, 3, 2}), st, spec), StateError);
}

TEST_CASE("conv2d 1x1 kernel weight gradient is the input/grad contraction") {
    // 1x1 conv on a 2x2 single-channel input: grad_w = sum_i input_i * grad_i.
    LayerSpec spec = LayerSpec::conv2d(1, 1, Activation::none);
    LayerState st;
    st.weights = Tensor(Shape{1, 1, 1, 1}, 2.0f);
    st.bias = Tensor(Shape{1});
    Tensor input = Tensor::from({1, 2, 2, 1}, {1.0f, 2.0f, 3.0f, 4.0f});
    conv2d_forward(input, st, spec, true);
    Tensor grad_out = Tensor::from({1, 2, 2, 1}, {0.5f, -1.0f, 0.25f, 2.0f});
    ConvGrads g = conv2d_backward(grad_out, st, spec);
    const double want = 1.0 * 0.5 + 2.0 * -1.0 + 3.0 * 0.25 + 4.0 * 2.0;
    CHECK(g.weights[0] == doctest::Approx(want));
    CHECK(g.bias[0] == doctest::Approx(0.5 - 1.0 + 0.25 + 2.0));
    for (std::int64_t i = 0; i < g.input.size(); ++i) CHECK(g.input[i] == doctest::Approx(2.0 * grad_out[i]));
}

TEST_CASE("conv2d backward matches finite differences") {
    int checked = 0;
    for (std::uint64_t seed = 100; checked < 4; ++seed) {
        Rng rng(seed);
        LayerSpec spec = LayerSpec::conv2d(3, 3, Activation::relu);
        LayerState st = conv_state(rng, 3, 2, 3);
        Tensor input = rng_uniform(rng, {2, 6, 6, 2}, -1.0f, 1.0f);

        LayerSpec linear = spec;
        linear.activation = Activation::none;
        LayerState probe_state = st;
        Tensor pre = conv2d_forward(input, probe_state, linear, false);
        if (!testsupport::away_from_zero(pre)) continue;  // avoid ReLU kinks
        ++checked;

        Tensor probe = rng_uniform(rng, pre.shape(), -1.0f, 1.0f);
        conv2d_forward(input, st, spec, true);
        ConvGrads g = conv2d_backward(probe, st, spec);

        auto eval = [&]() {
            LayerState scratch = st;
            return dot_probe(conv2d_forward(input, scratch, spec, false), probe);
        };
        CHECK(compare_gradients(fd_gradient(st.weights, eval), g.weights).ok);
        CHECK(compare_gradients(fd_gradient(st.bias, eval), g.bias).ok);
        CHECK(compare_gradients(fd_gradient(input, eval), g.input).ok);
    }
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

TEST_CASE("maxpool2d output shapes, including odd inputs") {
    CHECK(layer_output_shape(LayerSpec::maxpool2d(2), {102, 102, 16}) == Shape{51, 51, 16});
    CHECK(layer_output_shape(LayerSpec::maxpool2d(2), {45, 45, 32}) == Shape{22, 22, 32});
    CHECK_THROWS_AS(layer_output_shape(LayerSpec::maxpool2d(2), {1, 1, 8}), ShapeError);

    Rng rng(30);
    LayerState st;
    Tensor big = rng_uniform(rng, {1, 102, 102, 16}, 0.0f, 1.0f);
    CHECK(maxpool2d_forward(big, st, LayerSpec::maxpool2d(2), false).shape() == Shape{1, 51, 51, 16});
    Tensor odd = rng_uniform(rng, {1, 45, 45, 32}, 0.0f, 1.0f);
    CHECK(maxpool2d_forward(odd, st, LayerSpec::maxpool2d(2), false).shape() == Shape{1, 22, 22, 32});
}

TEST_CASE("maxpool2d picks the window maximum") {
    LayerState st;
    Tensor input = Tensor::from({1, 2, 2, 1}, {1, 2, 3, 4});
    Tensor out = maxpool2d_forward(input, st, LayerSpec::maxpool2d(2), false);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out[0] == 4.0f);
}

TEST_CASE("maxpool2d backward routes gradient to the argmax, first index on ties") {
    LayerSpec spec = LayerSpec::maxpool2d(2);
    LayerState st;

    Tensor distinct = Tensor::from({1, 2, 2, 1}, {1, 2, 3, 4});
    maxpool2d_forward(distinct, st, spec, true);
    Tensor g = maxpool2d_backward(Tensor::from({1, 1, 1, 1}, {5.0f}), st, spec);
    CHECK(g == Tensor::from({1, 2, 2, 1}, {0, 0, 0, 5}));

    Tensor tied(Shape{1, 2, 2, 1}, 7.0f);
    maxpool2d_forward(tied, st, spec, true);
    g = maxpool2d_backward(Tensor::from({1, 1, 1, 1}, {1.0f}), st, spec);
    CHECK(g == Tensor::from({1, 2, 2, 1}, {1, 0, 0, 0}));

    LayerState fresh;
    CHECK_THROWS_AS(maxpool2d_backward(g, fresh, spec), StateError);
}

TEST_CASE("maxpool2d gradient mass is conserved for tie-free inputs") {
    Rng rng(17);
    LayerSpec spec = LayerSpec::maxpool2d(2);
    for (int round = 0; round < 5; ++round) {
        Tensor input = rng_uniform(rng, {2, 5, 6, 3}, -1.0f, 1.0f);
        LayerState st;
        Tensor out = maxpool2d_forward(input, st, spec, true);
        Tensor grad_out = rng_uniform(rng, out.shape(), -1.0f, 1.0f);
        Tensor grad_in = maxpool2d_backward(grad_out, st, spec);
        double sum_in = 0.0, sum_out = 0.0;
        for (std::int64_t i = 0; i < grad_in.size(); ++i) sum_in += grad_in[i];
        for (std::int64_t i = 0; i < grad_out.size(); ++i) sum_out += grad_out[i];
        CHECK(sum_in == doctest::Approx(sum_out).epsilon(1e-5));
    }
}

TEST_CASE("maxpool2d backward matches finite differences away from ties") {
    int checked = 0;
    for (std::uint64_t seed = 40; checked < 4; ++seed) {
        Rng rng(seed);
        Tensor input = rng_uniform(rng, {1, 6, 6, 2}, -1.0f, 1.0f);
        if (!testsupport::pool_gaps_ok(input, 2)) continue;
        ++checked;
        LayerSpec spec = LayerSpec::maxpool2d(2);
        LayerState st;
        Tensor out = maxpool2d_forward(input, st, spec, true);
        Tensor probe = rng_uniform(rng, out.shape(), -1.0f, 1.0f);
        Tensor grad_in = maxpool2d_backward(probe, st, spec);
        auto eval = [&]() {
            LayerState scratch;
            return dot_probe(maxpool2d_forward(input, scratch, spec, false), probe);
        };
        CHECK(compare_gradients(fd_gradient(input, eval), grad_in).ok);
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

TEST_CASE("dropout is the identity at rate 0 and in eval mode") {
    Rng rng(3);
    Tensor x = rng_uniform(rng, {4, 5}, -1.0f, 1.0f);
    CHECK(dropout_apply(x, 0.0f, true, rng) == x);
    CHECK(dropout_apply(x, 0.9f, false, rng) == x);
    CHECK_THROWS_AS(dropout_apply(x, 1.0f, true, rng), ValueError);
    CHECK_THROWS_AS(dropout_apply(x, -0.1f, true, rng), ValueError);
}

TEST_CASE("inverted dropout preserves the expectation") {
    Rng rng(8);
    Tensor ones(Shape{1000000}, 1.0f);
    Tensor out = dropout_apply(ones, 0.5f, true, rng);
    double sum = 0.0;
    std::int64_t zeros = 0;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        sum += out[i];
        zeros += out[i] == 0.0f ? 1 : 0;
    }
    CHECK(std::abs(sum / static_cast<double>(out.size()) - 1.0) < 0.01);
    CHECK(std::abs(static_cast<double>(zeros) / static_cast<double>(out.size()) - 0.5) < 0.01);
}

TEST_CASE("dropout backward reuses the forward mask") {
    Rng rng(9);
    LayerSpec spec = LayerSpec::dropout(0.4f);
    LayerState st;
    Tensor x = rng_uniform(rng, {8, 8}, 0.5f, 1.5f);
    Tensor out = dropout_forward(x, st, spec, true, rng);
    Tensor grad = dropout_backward(Tensor(x.shape(), 1.0f), st, spec);
    // Gradient is 1/(1-rate) exactly where the forward kept the element.
    for (std::int64_t i = 0; i < x.size(); ++i) {
        if (out[i] == 0.0f)
            CHECK(grad[i] == 0.0f);
        else
            CHECK(grad[i] == doctest::Approx(1.0f / 0.6f));
    }
    LayerState fresh;
    CHECK_THROWS_AS(dropout_backward(grad, fresh, spec), StateError);
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

namespace {

LayerState batchnorm_state(int channels) {
    LayerState st;
    st.gamma = Tensor(Shape{channels}, 1.0f);
    st.beta = Tensor(Shape{channels});
    st.running_mean = Tensor(Shape{channels});
    st.running_var = Tensor(Shape{channels}, 1.0f);
    return st;
}

}  // namespace

TEST_CASE("batchnorm on an already-normalized channel is near identity") {
    LayerSpec spec = LayerSpec::batchnorm();
    LayerState st = batchnorm_state(1);
    // Zero mean, unit variance by construction.
    Tensor x = Tensor::from({4, 1}, {-1.341640786f, -0.4472135955f, 0.4472135955f, 1.341640786f});
    Tensor out = batchnorm_forward(x, st, spec, true);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(std::abs(out[i] - x[i]) < 1e-4f);
}

TEST_CASE("batchnorm maps a constant channel to beta") {
    LayerSpec spec = LayerSpec::batchnorm();
    LayerState st = batchnorm_state(2);
    st.beta[0] = 0.25f;
    st.beta[1] = -0.5f;
    Tensor x(Shape{3, 4, 4, 2}, 7.0f);
    Tensor out = batchnorm_forward(x, st, spec, true);
    for (std::int64_t i = 0; i < out.size(); ++i)
        CHECK(out[i] == doctest::Approx(i % 2 == 0 ? 0.25f : -0.5f).epsilon(1e-5));
}

TEST_CASE("batchnorm rejects an empty batch") {
    LayerSpec spec = LayerSpec::batchnorm();
    LayerState st = batchnorm_state(2);
    CHECK_THROWS_AS(batchnorm_forward(Tensor(Shape{2}), st, spec, true), ShapeError);
}

TEST_CASE("batchnorm eval mode uses running statistics") {
    LayerSpec spec = LayerSpec::batchnorm();
    LayerState st = batchnorm_state(1);
    Rng rng(12);
    Tensor x = rng_uniform(rng, {64, 1}, 2.0f, 4.0f);
    for (int i = 0; i < 60; ++i) batchnorm_forward(x, st, spec, true);
    // Running stats converge toward the batch stats, so eval tracks train.
    Tensor train_out = batchnorm_forward(x, st, spec, true);
    Tensor eval_out = batchnorm_forward(x, st, spec, false);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(std::abs(train_out[i] - eval_out[i]) < 2e-2f);
}

TEST_CASE("batchnorm backward matches finite differences") {
    for (std::uint64_t seed = 60; seed < 63; ++seed) {
        Rng rng(seed);
        LayerSpec spec = LayerSpec::batchnorm();
        LayerState st = batchnorm_state(3);
        st.gamma = rng_uniform(rng, {3}, 0.5f, 1.5f);
        st.beta = rng_uniform(rng, {3}, -0.5f, 0.5f);
        Tensor input = rng_uniform(rng, {4, 3, 3, 3}, -1.0f, 1.0f);
        Tensor out = batchnorm_forward(input, st, spec, true);
        Tensor probe = rng_uniform(rng, out.shape(), -1.0f, 1.0f);
        BatchnormGrads g = batchnorm_backward(probe, st, spec);
        auto eval = [&]() {
            LayerState scratch = st;
            return dot_probe(batchnorm_forward(input, scratch, spec, true), probe);
        };
        CHECK(compare_gradients(fd_gradient(st.gamma, eval), g.gamma).ok);
        CHECK(compare_gradients(fd_gradient(st.beta, eval), g.beta).ok);
        CHECK(compare_gradients(fd_gradient(input, eval), g.input).ok);
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

TEST_CASE("dense parameter count and identity map") {
    CHECK(layer_param_count(LayerSpec::dense(256), {128}) == 33024);

    LayerSpec spec = LayerSpec::dense(3, Activation::none);
    LayerState st;
    st.weights = identity_matrix(3);
    st.bias = Tensor(Shape{3});
    Rng rng(2);
    Tensor x = rng_uniform(rng, {5, 3}, -1.0f, 1.0f);
    CHECK(dense_forward(x, st, spec, false) == x);

    CHECK_THROWS_AS(dense_forward(rng_uniform(rng, {5, 4}, 0.0f, 1.0f), st, spec, false), ShapeError);
}

TEST_CASE("dense backward matches finite differences") {
    int checked = 0;
    for (std::uint64_t seed = 80; checked < 4; ++seed) {
        Rng rng(seed);
        LayerSpec spec = LayerSpec::dense(4, Activation::relu);
        LayerState st = dense_state(rng, 6, 4);
        Tensor input = rng_uniform(rng, {3, 6}, -1.0f, 1.0f);

        LayerSpec linear = spec;
        linear.activation = Activation::none;
        LayerState probe_state = st;
        Tensor pre = dense_forward(input, probe_state, linear, false);
        if (!testsupport::away_from_zero(pre)) continue;
        ++checked;

        Tensor probe = rng_uniform(rng, pre.shape(), -1.0f, 1.0f);
        dense_forward(input, st, spec, true);
        DenseGrads g = dense_backward(probe, st, spec);
        auto eval = [&]() {
            LayerState scratch = st;
            return dot_probe(dense_forward(input, scratch, spec, false), probe);
        };
        CHECK(compare_gradients(fd_gradient(st.weights, eval), g.weights).ok);
        CHECK(compare_gradients(fd_gradient(st.bias, eval), g.bias).ok);
        CHECK(compare_gradients(fd_gradient(input, eval), g.input).ok);
    }
}

// ---------------------------------------------------------------------------
// Flatten + shape agreement
// ---------------------------------------------------------------------------

TEST_CASE("flatten reshapes per sample and inverts exactly") {
    CHECK(layer_output_shape(LayerSpec::flatten(), {1, 1, 128}) == Shape{128});
    CHECK(layer_output_shape(LayerSpec::flatten(), {2, 2, 3}) == Shape{12});

    Rng rng(4);
    Tensor x = rng_uniform(rng, {2, 2, 2, 3}, -1.0f, 1.0f);
    LayerState st;
    Tensor flat = flatten_forward(x, st, true);
    CHECK(flat.shape() == Shape{2, 12});
    CHECK(flatten_backward(flat, st) == x);
}

TEST_CASE("shape inference agrees with the produced forward shapes") {
    Rng rng(21);
    const Shape feature{7, 8, 3};
    Tensor input = rng_uniform(rng, {2, 7, 8, 3}, -1.0f, 1.0f);

    {
        LayerSpec spec = LayerSpec::conv2d(5, 3);
        LayerState st = conv_state(rng, 3, 3, 5);
        Shape inferred = layer_output_shape(spec, feature);
        Tensor out = conv2d_forward(input, st, spec, false);
        CHECK(out.shape() == Shape{2, inferred[0], inferred[1], inferred[2]});
        CHECK(layer_param_count(spec, feature) == st.weights.size() + st.bias.size());
    }
    {
        LayerSpec spec = LayerSpec::maxpool2d(2);
        LayerState st;
        Shape inferred = layer_output_shape(spec, feature);
        Tensor out = maxpool2d_forward(input, st, spec, false);
        CHECK(out.shape() == Shape{2, inferred[0], inferred[1], inferred[2]});
    }
    {
        LayerState st;
        Shape inferred = layer_output_shape(LayerSpec::flatten(), feature);
        CHECK(flatten_forward(input, st, false).shape() == Shape{2, inferred[0]});
    }
}
