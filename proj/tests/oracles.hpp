#pragma once

// Reference implementations used only by the tests. They share no code with the
// library beyond the tensor container.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "msshare/tensor.hpp"

namespace oracle {

using msshare::BasicTensor;
using msshare::Shape;

template <typename T>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    BasicTensor<T> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
    return t;
}

/// Nested-loop cross-correlation. Taps are summed in (c, u, v) order, padded taps
/// contribute an explicit zero, and the bias is added last.
template <typename T>
BasicTensor<T> direct_conv(const BasicTensor<T>& in, const BasicTensor<T>& k, const BasicTensor<T>* bias,
                           std::size_t s, std::size_t p, std::size_t r) {
    const Shape is = in.shape();
    const Shape ks = k.shape();
    const auto H = static_cast<long>(is.h), W = static_cast<long>(is.w);
    const long span_h = static_cast<long>(r * (ks.h - 1) + 1);
    const long span_w = static_cast<long>(r * (ks.w - 1) + 1);
    const long oh = (H + 2 * static_cast<long>(p) - span_h) / static_cast<long>(s) + 1;
    const long ow = (W + 2 * static_cast<long>(p) - span_w) / static_cast<long>(s) + 1;
    BasicTensor<T> out(Shape{is.n, ks.n, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    for (std::size_t n = 0; n < is.n; ++n)
        for (std::size_t o = 0; o < ks.n; ++o)
            for (long y = 0; y < oh; ++y)
                for (long x = 0; x < ow; ++x) {
                    T acc = 0;
                    for (std::size_t c = 0; c < ks.c; ++c)
                        for (std::size_t u = 0; u < ks.h; ++u)
                            for (std::size_t v = 0; v < ks.w; ++v) {
                                const long iy = y * static_cast<long>(s) - static_cast<long>(p) +
                                                static_cast<long>(u * r);
                                const long ix = x * static_cast<long>(s) - static_cast<long>(p) +
                                                static_cast<long>(v * r);
                                T value = 0;
                                if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                                    value = in.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                                }
                                acc += value * k.at(o, c, u, v);
                            }
                    if (bias) acc += (*bias)[o];
                    out.at(n, o, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
                }
    return out;
}

/// Kernel with r-1 zeros inserted between taps: extent r(f-1)+1.
template <typename T>
BasicTensor<T> zero_stuff(const BasicTensor<T>& k, std::size_t r) {
    const Shape s = k.shape();
    BasicTensor<T> out(Shape{s.n, s.c, r * (s.h - 1) + 1, r * (s.w - 1) + 1});
    for (std::size_t o = 0; o < s.n; ++o)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t u = 0; u < s.h; ++u)
                for (std::size_t v = 0; v < s.w; ++v) out.at(o, c, u * r, v * r) = k.at(o, c, u, v);
    return out;
}

template <typename T>
std::vector<T> naive_matmul(const std::vector<T>& a, const std::vector<T>& b, std::size_t m, std::size_t k,
                            std::size_t n) {
    std::vector<T> c(m * n, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
            c[i * n + j] = acc;
        }
    return c;
}

template <typename T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

/// Central differences of a scalar function with respect to every entry of `x`.
template <typename F>
BasicTensor<double> fd_gradient(F&& loss, BasicTensor<double>& x, double h = 1e-5) {
    BasicTensor<double> g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double plus = loss();
        x[i] = saved - h;
        const double minus = loss();
        x[i] = saved;
        g[i] = (plus - minus) / (2 * h);
    }
    return g;
}

/// Largest |a - b| / max(|a|, |b|, floor) over all entries.
template <typename T>
double max_rel_diff(const BasicTensor<T>& a, const BasicTensor<T>& b, double floor = 1e-3) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
        const double scale = std::max({std::abs(x), std::abs(y), floor});
        worst = std::max(worst, std::abs(x - y) / scale);
    }
    return worst;
}

/// max |a - b| / max |b|: relative error measured against the tensor's scale, for
/// 32-bit results where single entries can cancel to near zero.
template <typename T>
double scaled_max_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
        scale = std::max(scale, std::abs(static_cast<double>(b[i])));
    }
    return diff / scale;
}

/// Layer-by-layer parameter sum (weights, biases, BN scale and shift; classifier
/// excluded). `shared` halves the unique kernels of every multi-scale convolution:
/// the middle 3x3 of bottleneck blocks, the second 3x3 of basic blocks, and all
/// five AlexNet convolutions (their biases too).
inline std::uint64_t param_count(const char* family, int depth, bool shared) {
    const std::uint64_t div = shared ? 2 : 1;
    auto conv = [](std::uint64_t ko, std::uint64_t ki, std::uint64_t f) { return ko * ki * f * f; };
    auto bn = [](std::uint64_t c) { return 2 * c; };
    if (std::string_view(family) == "alexnet") {
        struct L { std::uint64_t ko, ki, f; };
        const L convs[] = {{64, 3, 11}, {192, 64, 5}, {384, 192, 3}, {256, 384, 3}, {256, 256, 3}};
        std::uint64_t total = 0;
        for (const L& l : convs) total += conv(l.ko, l.ki, l.f) / div + l.ko / div;
        total += 9216ull * 4096 + 4096;  // fc6
        total += 4096ull * 4096 + 4096;  // fc7
        return total;
    }
    std::vector<int> blocks;
    bool bottleneck = depth >= 50;
    switch (depth) {
        case 10: blocks = {1, 1, 1, 1}; break;
        case 18: blocks = {2, 2, 2, 2}; break;
        case 34: blocks = {3, 4, 6, 3}; break;
        case 50: blocks = {3, 4, 6, 3}; break;
        case 101: blocks = {3, 4, 23, 3}; break;
        case 152: blocks = {3, 8, 36, 3}; break;
        default: return 0;
    }
    std::uint64_t total = conv(64, 3, 7) + bn(64);
    std::uint64_t in = 64;
    for (int stage = 0; stage < 4; ++stage) {
        const std::uint64_t width = 64ull << stage;
        const std::uint64_t out = bottleneck ? width * 4 : width;
        for (int b = 0; b < blocks[static_cast<std::size_t>(stage)]; ++b) {
            if (bottleneck) {
                total += conv(width, in, 1) + bn(width);
                total += conv(width, width, 3) / div + bn(width);
                total += conv(out, width, 1) + bn(out);
            } else {
                total += conv(width, in, 3) + bn(width);
                total += conv(width, width, 3) / div + bn(width);
            }
            const bool stride2 = b == 0 && stage > 0;
            if (in != out || stride2) total += conv(out, in, 1) + bn(out);
            in = out;
        }
    }
    return total;
}

}  // namespace oracle
