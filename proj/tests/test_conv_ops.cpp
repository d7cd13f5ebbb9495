#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "msshare/conv_ops.hpp"
#include "oracles.hpp"

using namespace msshare;

namespace {

ConvWeights<double> random_weights(Shape kshape, bool bias, std::uint64_t seed) {
    ConvWeights<double> w{oracle::random_tensor<double>(kshape, seed), TensorD()};
    if (bias) w.bias = oracle::random_tensor<double>({kshape.n, 1, 1, 1}, seed + 1);
    return w;
}

}  // namespace

TEST(Conv2d, CentreOneHotKernelIsIdentity) {
    const Tensor in = oracle::random_tensor<float>({2, 1, 5, 6}, 1);
    ConvWeights<float> w{Tensor({1, 1, 3, 3}), Tensor()};
    w.kernels.at(0, 0, 1, 1) = 1.0f;
    const Tensor out = conv2d_forward(in, w, ConvParams{1, 1, 1});
    ASSERT_EQ(out.shape(), in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) EXPECT_EQ(out[i], in[i]);
}

TEST(Conv2d, DilatedRampSum) {
    TensorD in({1, 1, 5, 5});
    for (std::size_t i = 0; i < 25; ++i) in[i] = static_cast<double>(i);
    const ConvWeights<double> w{TensorD({1, 1, 3, 3}, 1.0), TensorD()};
    const TensorD out = conv2d_forward(in, w, ConvParams{1, 0, 2});
    ASSERT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(out[0], 0 + 2 + 4 + 10 + 12 + 14 + 20 + 22 + 24);
    EXPECT_EQ(out[0], 108.0);
}

TEST(Conv2d, EffectiveExtent) {
    EXPECT_EQ(effective_kernel_extent(3, 2), 5u);
    EXPECT_EQ(effective_kernel_extent(3, 1), 3u);
    EXPECT_EQ(effective_kernel_extent(1, 4), 1u);
}

TEST(Conv2d, ChannelMismatchThrows) {
    const Tensor in({1, 2, 5, 5});
    const ConvWeights<float> w{Tensor({1, 3, 3, 3}), Tensor()};
    EXPECT_THROW(conv2d_forward(in, w, ConvParams{1, 1, 1}), std::invalid_argument);
}

TEST(Conv2d, NonPositiveOutputThrows) {
    const Tensor in({1, 1, 3, 3});
    const ConvWeights<float> w{Tensor({1, 1, 3, 3}), Tensor()};
    EXPECT_THROW(conv2d_forward(in, w, ConvParams{1, 0, 2}), std::invalid_argument);
}

TEST(Conv2d, MatchesDenseOracleAndZeroStuffedKernel) {
    const TensorD in = oracle::random_tensor<double>({2, 3, 8, 7}, 11);
    const ConvWeights<double> w = random_weights({4, 3, 3, 3}, true, 12);
    for (std::size_t s : {1, 2}) {
        const TensorD r1 = conv2d_forward(in, w, ConvParams{s, 1, 1});
        EXPECT_LE(oracle::max_rel_diff(r1, oracle::direct_conv(in, w.kernels, &w.bias, s, 1, 1)), 1e-14);

        const TensorD r2 = conv2d_forward(in, w, ConvParams{s, 2, 2});
        const TensorD stuffed = oracle::direct_conv(in, oracle::zero_stuff(w.kernels, 2), &w.bias, s, 2, 1);
        ASSERT_EQ(r2.shape(), stuffed.shape());
        EXPECT_LE(oracle::max_rel_diff(r2, stuffed), 1e-14);
    }
}

TEST(Conv2d, LinearInInputAndWeights) {
    const Tensor a = oracle::random_tensor<float>({2, 3, 6, 6}, 21);
    const Tensor b = oracle::random_tensor<float>({2, 3, 6, 6}, 22);
    const ConvWeights<float> w{oracle::random_tensor<float>({4, 3, 3, 3}, 23), Tensor()};
    const ConvWeights<float> v{oracle::random_tensor<float>({4, 3, 3, 3}, 24), Tensor()};
    const ConvParams p{1, 2, 2};
    Tensor ab = a;
    for (std::size_t i = 0; i < ab.size(); ++i) ab[i] = 2.0f * a[i] - 0.5f * b[i];
    const Tensor fa = conv2d_forward(a, w, p), fb = conv2d_forward(b, w, p), fab = conv2d_forward(ab, w, p);
    Tensor sum = fa;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = 2.0f * fa[i] - 0.5f * fb[i];
    EXPECT_LE(oracle::scaled_max_diff(fab, sum), 1e-5);

    ConvWeights<float> wv{w.kernels, Tensor()};
    for (std::size_t i = 0; i < wv.kernels.size(); ++i) wv.kernels[i] = w.kernels[i] + v.kernels[i];
    const Tensor fw = conv2d_forward(a, w, p), fv = conv2d_forward(a, v, p), fwv = conv2d_forward(a, wv, p);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = fw[i] + fv[i];
    EXPECT_LE(oracle::scaled_max_diff(fwv, sum), 1e-5);
}

TEST(Conv2dBackward, ZeroUpstreamGivesZeroGradients) {
    const TensorD in = oracle::random_tensor<double>({1, 2, 5, 5}, 31);
    const ConvWeights<double> w = random_weights({3, 2, 3, 3}, true, 32);
    const ConvParams p{1, 1, 1};
    const ConvGrads<double> g = conv2d_backward(in, w, TensorD(conv2d_forward(in, w, p).shape()), p);
    for (double v : g.input.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.kernels.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.bias.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, ScalarChainRule) {
    const TensorD in({1, 1, 1, 1}, 3.0);
    const ConvWeights<double> w{TensorD({1, 1, 1, 1}, -2.0), TensorD()};
    const ConvGrads<double> g = conv2d_backward(in, w, TensorD({1, 1, 1, 1}, 0.5), ConvParams{});
    EXPECT_EQ(g.kernels[0], 0.5 * 3.0);
    EXPECT_EQ(g.input[0], 0.5 * -2.0);
}

TEST(Conv2dBackward, ShapeMismatchThrows) {
    const TensorD in({1, 1, 5, 5});
    const ConvWeights<double> w{TensorD({1, 1, 3, 3}), TensorD()};
    EXPECT_THROW(conv2d_backward(in, w, TensorD({1, 1, 4, 4}), ConvParams{1, 1, 1}), std::invalid_argument);
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
    TensorD in = oracle::random_tensor<double>({2, 3, 6, 6}, 41);
    ConvWeights<double> w = random_weights({4, 3, 3, 3}, true, 42);
    const ConvParams p{1, 2, 2};
    const TensorD proj = oracle::random_tensor<double>(conv2d_forward(in, w, p).shape(), 43);
    auto loss = [&] { return oracle::dot(conv2d_forward(in, w, p), proj); };
    const ConvGrads<double> g = conv2d_backward(in, w, proj, p);
    EXPECT_LE(oracle::max_rel_diff(g.input, oracle::fd_gradient(loss, in)), 1e-6);
    EXPECT_LE(oracle::max_rel_diff(g.kernels, oracle::fd_gradient(loss, w.kernels)), 1e-6);
    EXPECT_LE(oracle::max_rel_diff(g.bias, oracle::fd_gradient(loss, w.bias)), 1e-6);
}

// <g, J d> = <J^T g, d> for the linear maps; nonlinear ones use a central-difference JVP.
TEST(Adjoint, ConvolutionStrided) {
    const TensorD x = oracle::random_tensor<double>({2, 3, 7, 7}, 51);
    const ConvWeights<double> w = random_weights({4, 3, 3, 3}, false, 52);
    const ConvParams p{2, 1, 1};
    const TensorD d = oracle::random_tensor<double>(x.shape(), 53);
    const TensorD g = oracle::random_tensor<double>(conv2d_forward(x, w, p).shape(), 54);
    const double lhs = oracle::dot(g, conv2d_forward(d, w, p));
    const double rhs = oracle::dot(conv2d_backward(x, w, g, p).input, d);
    EXPECT_LE(std::abs(lhs - rhs), 1e-6 * std::abs(lhs));
}

namespace {

template <typename Fwd>
double jvp_dot(Fwd&& forward, const TensorD& x, const TensorD& d, const TensorD& g, double h = 1e-6) {
    TensorD xp = x, xm = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] += h * d[i];
        xm[i] -= h * d[i];
    }
    const TensorD fp = forward(xp), fm = forward(xm);
    double s = 0;
    for (std::size_t i = 0; i < fp.size(); ++i) s += g[i] * (fp[i] - fm[i]) / (2 * h);
    return s;
}

}  // namespace

TEST(Adjoint, ReluMaxpoolGapLinearBatchnorm) {
    const TensorD x = oracle::random_tensor<double>({2, 3, 6, 6}, 61);
    const TensorD d = oracle::random_tensor<double>(x.shape(), 62);
    auto check = [&](const char* what, auto&& forward, const TensorD& g, const TensorD& back) {
        const double lhs = jvp_dot(forward, x, d, g);
        const double rhs = oracle::dot(back, d);
        EXPECT_LE(std::abs(lhs - rhs), 1e-6 * std::abs(rhs)) << what;
    };

    {
        const TensorD g = oracle::random_tensor<double>(x.shape(), 63);
        check("relu", [](const TensorD& t) { return relu_forward(t); }, g, relu_backward(x, g));
    }
    {
        const PoolParams p{3, 2, 1};
        const MaxPoolResult<double> r = maxpool_forward(x, p);
        const TensorD g = oracle::random_tensor<double>(r.output.shape(), 64);
        check("maxpool", [&](const TensorD& t) { return maxpool_forward(t, p).output; }, g,
              maxpool_backward(g, std::span<const std::size_t>(r.argmax), x.shape()));
    }
    {
        const TensorD g = oracle::random_tensor<double>({2, 3, 1, 1}, 65);
        check("gap", [](const TensorD& t) { return global_avg_pool_forward(t); }, g,
              global_avg_pool_backward(g, x.shape()));
    }
    {
        const TensorD w = oracle::random_tensor<double>({5, 108, 1, 1}, 66);
        const TensorD b = oracle::random_tensor<double>({5, 1, 1, 1}, 67);
        const TensorD g = oracle::random_tensor<double>({2, 5, 1, 1}, 68);
        check("linear", [&](const TensorD& t) { return linear_forward(t, w, b); }, g, linear_backward(x, w, g).input);
    }
    {
        BatchNormState<double> st = BatchNormState<double>::identity(3);
        st.scale = oracle::random_tensor<double>({3, 1, 1, 1}, 69, 0.5, 2.0);
        const TensorD g = oracle::random_tensor<double>(x.shape(), 70);
        BatchNormState<double> scratch = st;
        BatchNormCache<double> cache;
        batchnorm_forward(x, scratch, true, &cache);
        check("batchnorm",
              [&](const TensorD& t) {
                  BatchNormState<double> s = st;
                  return batchnorm_forward(t, s, true);
              },
              g, batchnorm_backward(g, st, cache).input);
    }
}

TEST(BatchNorm, TrainingNormalizesPerChannel) {
    const Tensor x = oracle::random_tensor<float>({4, 3, 5, 5}, 71, -3.0, 7.0);
    BatchNormState<float> st = BatchNormState<float>::identity(3);
    const Tensor y = batchnorm_forward(x, st, true);
    const std::size_t per = 4 * 25;
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0, sq = 0;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < 25; ++i) mean += y[y.offset(n, c, 0, 0) + i];
        mean /= per;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < 25; ++i) sq += std::pow(y[y.offset(n, c, 0, 0) + i] - mean, 2);
        EXPECT_LT(std::abs(mean), 1e-5);
        EXPECT_NEAR(sq / per, 1.0, 1e-4);
    }
}

TEST(BatchNorm, RunningStatisticsFollowMomentum) {
    TensorD x({2, 1, 1, 2});
    x[0] = 1, x[1] = 2, x[2] = 3, x[3] = 6;
    BatchNormState<double> st = BatchNormState<double>::identity(1);
    batchnorm_forward(x, st, true);
    // mean 3, unbiased variance 14/3
    EXPECT_NEAR(st.running_mean[0], 0.1 * 3.0, 1e-12);
    EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
}

TEST(BatchNorm, EvalModeIsAffine) {
    const TensorD x = oracle::random_tensor<double>({2, 2, 3, 3}, 72);
    BatchNormState<double> st = BatchNormState<double>::identity(2);
    st.scale.fill(2.0);
    st.shift.fill(3.0);
    const TensorD before_mean = st.running_mean;
    const TensorD y = batchnorm_forward(x, st, false);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], 2.0 * x[i] / std::sqrt(1.0 + 1e-5) + 3.0, 1e-12);
    EXPECT_EQ(st.running_mean.values()[0], before_mean.values()[0]);
}

TEST(BatchNorm, SingleValuePerChannelRejectedInTraining) {
    BatchNormState<float> st = BatchNormState<float>::identity(2);
    EXPECT_THROW(batchnorm_forward(Tensor({1, 2, 1, 1}), st, true), std::invalid_argument);
    EXPECT_NO_THROW(batchnorm_forward(Tensor({1, 2, 1, 1}), st, false));
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
    TensorD x = oracle::random_tensor<double>({2, 3, 4, 4}, 73);
    BatchNormState<double> st = BatchNormState<double>::identity(3);
    st.scale = oracle::random_tensor<double>({3, 1, 1, 1}, 74);
    st.shift = oracle::random_tensor<double>({3, 1, 1, 1}, 75);
    const TensorD proj = oracle::random_tensor<double>(x.shape(), 76);
    auto loss = [&] {
        BatchNormState<double> s = st;
        return oracle::dot(batchnorm_forward(x, s, true), proj);
    };
    BatchNormState<double> s = st;
    BatchNormCache<double> cache;
    batchnorm_forward(x, s, true, &cache);
    const BatchNormGrads<double> g = batchnorm_backward(proj, st, cache);
    EXPECT_LE(oracle::max_rel_diff(g.input, oracle::fd_gradient(loss, x)), 1e-5);
    EXPECT_LE(oracle::max_rel_diff(g.scale, oracle::fd_gradient(loss, st.scale)), 1e-5);
    EXPECT_LE(oracle::max_rel_diff(g.shift, oracle::fd_gradient(loss, st.shift)), 1e-5);
}

TEST(Relu, Definition) {
    Tensor x({1, 1, 1, 2});
    x[0] = -1.0f;
    x[1] = 2.0f;
    const Tensor y = relu_forward(x);
    EXPECT_EQ(y[0], 0.0f);
    EXPECT_EQ(y[1], 2.0f);
}

TEST(GlobalAvgPool, ConstantMap) {
    const Tensor y = global_avg_pool_forward(tensor_new({2, 3, 7, 7}, 0.625f));
    ASSERT_EQ(y.shape(), (Shape{2, 3, 1, 1}));
    for (float v : y.values()) EXPECT_EQ(v, 0.625f);
}

TEST(MaxPool, TiesRouteToFirstRasterPosition) {
    const Tensor x = tensor_new({1, 1, 3, 3}, 1.0f);
    const MaxPoolResult<float> r = maxpool_forward(x, PoolParams{3, 2, 0});
    ASSERT_EQ(r.output.size(), 1u);
    EXPECT_EQ(r.argmax[0], 0u);
    const Tensor g = maxpool_backward(Tensor({1, 1, 1, 1}, 5.0f), std::span<const std::size_t>(r.argmax), x.shape());
    EXPECT_EQ(g[0], 5.0f);
    for (std::size_t i = 1; i < 9; ++i) EXPECT_EQ(g[i], 0.0f);
}

TEST(MaxPool, EachOutputRoutesToExactlyOneInput) {
    const Tensor x = oracle::random_tensor<float>({2, 2, 9, 9}, 81);
    const MaxPoolResult<float> r = maxpool_forward(x, PoolParams{3, 2, 1});
    const Tensor ones(r.output.shape(), 1.0f);
    const Tensor g = maxpool_backward(ones, std::span<const std::size_t>(r.argmax), x.shape());
    double total = 0;
    for (float v : g.values()) total += v;
    EXPECT_EQ(total, static_cast<double>(r.output.size()));
    for (std::size_t i = 0; i < r.output.size(); ++i) EXPECT_EQ(x[r.argmax[i]], r.output[i]);
}

TEST(SoftmaxXent, UniformLogitsGiveLogK) {
    const Tensor logits({3, 7, 1, 1}, 0.25f);
    const std::vector<std::int32_t> labels{0, 3, 6};
    const SoftmaxXentResult<float> r = softmax_xent(logits, std::span<const std::int32_t>(labels));
    EXPECT_NEAR(r.loss, std::log(7.0f), 1e-6f);
}

TEST(SoftmaxXent, LabelOutOfRangeThrows) {
    const Tensor logits({1, 3, 1, 1});
    const std::vector<std::int32_t> bad{3};
    EXPECT_THROW(softmax_xent(logits, std::span<const std::int32_t>(bad)), std::out_of_range);
}

TEST(SoftmaxXent, GradientMatchesFiniteDifferences) {
    TensorD logits = oracle::random_tensor<double>({4, 5, 1, 1}, 91, -3, 3);
    const std::vector<std::int32_t> labels{4, 0, 2, 2};
    const std::span<const std::int32_t> ls(labels);
    auto loss = [&] { return softmax_xent(logits, ls).loss; };
    EXPECT_LE(oracle::max_rel_diff(softmax_xent(logits, ls).grad_logits, oracle::fd_gradient(loss, logits)), 1e-6);
}

TEST(Linear, BackwardMatchesFiniteDifferences) {
    TensorD x = oracle::random_tensor<double>({3, 2, 2, 2}, 92);
    TensorD w = oracle::random_tensor<double>({4, 8, 1, 1}, 93);
    TensorD b = oracle::random_tensor<double>({4, 1, 1, 1}, 94);
    const TensorD proj = oracle::random_tensor<double>({3, 4, 1, 1}, 95);
    auto loss = [&] { return oracle::dot(linear_forward(x, w, b), proj); };
    const LinearGrads<double> g = linear_backward(x, w, proj);
    EXPECT_LE(oracle::max_rel_diff(g.input, oracle::fd_gradient(loss, x)), 1e-6);
    EXPECT_LE(oracle::max_rel_diff(g.weight, oracle::fd_gradient(loss, w)), 1e-6);
    EXPECT_LE(oracle::max_rel_diff(g.bias, oracle::fd_gradient(loss, b)), 1e-6);
}
