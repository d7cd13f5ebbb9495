#include "msshare/conv_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace msshare {
namespace {

ConvGeometry geometry_of(std::size_t f, const ConvParams& p) {
    return ConvGeometry{f, f, p.stride, p.padding, p.dilation};
}

template <typename T>
Shape conv_output_shape(const BasicTensor<T>& input, const ConvWeights<T>& w, const ConvParams& p) {
    const Shape& in = input.shape();
    const Shape& k = w.kernels.shape();
    if (in.c != k.c) {
        std::ostringstream os;
        os << "conv2d: input has " << in.c << " channels, kernels expect " << k.c;
        throw std::invalid_argument(os.str());
    }
    if (k.h != k.w) throw std::invalid_argument("conv2d: kernels must be square");
    if (w.has_bias() && w.bias.size() != k.n) throw std::invalid_argument("conv2d: bias length mismatch");
    const ConvGeometry g = geometry_of(k.h, p);
    const Shape out{in.n, k.n, g.out_h(in.h), g.out_w(in.w)};
    if (out.h == 0 || out.w == 0) throw std::invalid_argument("conv2d: non-positive output extent");
    return out;
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const ConvWeights<T>& w, const ConvParams& p) {
    const Shape out_shape = conv_output_shape(input, w, p);
    const ConvGeometry g = geometry_of(w.kernel_size(), p);
    const std::size_t k_o = out_shape.c;
    const std::size_t plane = out_shape.h * out_shape.w;
    const std::size_t reduce = w.kernels.size() / k_o;

    BasicTensor<T> out(out_shape);
    Matrix<T> cols;
    const MatrixView<const T> kernels{w.kernels.data(), k_o, reduce};
    for (std::size_t n = 0; n < out_shape.n; ++n) {
        im2col_sample(input, n, g, cols);
        MatrixView<T> dst{out.data() + out.offset(n, 0, 0, 0), k_o, plane};
        gemm(kernels, view(cols), dst, false);
        if (w.has_bias()) {
            for (std::size_t o = 0; o < k_o; ++o) {
                T* row = dst.data + o * plane;
                const T b = w.bias[o];
                for (std::size_t i = 0; i < plane; ++i) row[i] += b;
            }
        }
    }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const ConvWeights<T>& w, const BasicTensor<T>& grad_out,
                             const ConvParams& p) {
    const Shape out_shape = conv_output_shape(input, w, p);
    if (grad_out.shape() != out_shape) {
        throw std::invalid_argument("conv2d_backward: grad_out " + grad_out.shape().str() + " does not match output " +
                                    out_shape.str());
    }
    const ConvGeometry g = geometry_of(w.kernel_size(), p);
    const std::size_t k_o = out_shape.c;
    const std::size_t plane = out_shape.h * out_shape.w;
    const std::size_t reduce = w.kernels.size() / k_o;

    ConvGrads<T> grads;
    grads.input = BasicTensor<T>(input.shape());
    grads.kernels = BasicTensor<T>(w.kernels.shape());
    if (w.has_bias()) grads.bias = BasicTensor<T>(w.bias.shape());

    const Matrix<T> kernels_t = transpose(MatrixView<const T>{w.kernels.data(), k_o, reduce});
    const MatrixView<T> grad_kernels{grads.kernels.data(), k_o, reduce};
    Matrix<T> cols;
    Matrix<T> grad_cols(reduce, plane);
    for (std::size_t n = 0; n < out_shape.n; ++n) {
        const MatrixView<const T> go{grad_out.data() + grad_out.offset(n, 0, 0, 0), k_o, plane};
        im2col_sample(input, n, g, cols);
        const Matrix<T> cols_t = transpose(view(std::as_const(cols)));
        gemm(go, view(cols_t), grad_kernels, true);
        gemm(view(kernels_t), go, view(grad_cols), false);
        col2im_sample(grad_cols, g, n, grads.input);
        if (w.has_bias()) {
            for (std::size_t o = 0; o < k_o; ++o) {
                T acc = grads.bias[o];
                for (std::size_t i = 0; i < plane; ++i) acc += go.data[o * plane + i];
                grads.bias[o] = acc;
            }
        }
    }
    return grads;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::identity(std::size_t channels) {
    BatchNormState s;
    const Shape v{channels, 1, 1, 1};
    s.scale = BasicTensor<T>(v, T(1));
    s.shift = BasicTensor<T>(v, T(0));
    s.running_mean = BasicTensor<T>(v, T(0));
    s.running_var = BasicTensor<T>(v, T(1));
    return s;
}

template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& input, BatchNormState<T>& state, bool training,
                                 BatchNormCache<T>* cache) {
    const Shape& s = input.shape();
    if (state.channels() != s.c) {
        throw std::invalid_argument("batchnorm: state has " + std::to_string(state.channels()) +
                                    " channels, input has " + std::to_string(s.c));
    }
    if (!(state.epsilon > T(0))) throw std::invalid_argument("batchnorm: epsilon must be positive");
    const std::size_t plane = s.h * s.w;
    const std::size_t count = s.n * plane;
    if (training && count < 2) throw std::invalid_argument("batchnorm: training mode needs batch*H*W >= 2");

    BasicTensor<T> out(s);
    BasicTensor<T> normalized;
    std::vector<T> inv_std(s.c);
    if (cache) normalized = BasicTensor<T>(s);

    for (std::size_t c = 0; c < s.c; ++c) {
        T mean;
        T var;
        if (training) {
            T sum = 0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const T* src = input.data() + input.offset(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) sum += src[i];
            }
            mean = sum / T(count);
            T sq = 0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const T* src = input.data() + input.offset(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = src[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / T(count);
            const T unbiased = sq / T(count - 1);
            state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mean;
            state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        } else {
            mean = state.running_mean[c];
            var = state.running_var[c];
        }
        const T istd = T(1) / std::sqrt(var + state.epsilon);
        inv_std[c] = istd;
        const T scale = state.scale[c];
        const T shift = state.shift[c];
        for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = input.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                const T xh = (input[base + i] - mean) * istd;
                if (cache) normalized[base + i] = xh;
                out[base + i] = scale * xh + shift;
            }
        }
    }
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
        cache->training = training;
    }
    return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache) {
    const Shape& s = grad_out.shape();
    if (cache.normalized.shape() != s || state.channels() != s.c) {
        throw std::invalid_argument("batchnorm_backward: shape mismatch");
    }
    const std::size_t plane = s.h * s.w;
    const T count = T(s.n * plane);
    BatchNormGrads<T> g{BasicTensor<T>(s), BasicTensor<T>(state.scale.shape()), BasicTensor<T>(state.shift.shape())};
    for (std::size_t c = 0; c < s.c; ++c) {
        T sum_dy = 0;
        T sum_dy_xh = 0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = grad_out.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += grad_out[base + i];
                sum_dy_xh += grad_out[base + i] * cache.normalized[base + i];
            }
        }
        g.shift[c] = sum_dy;
        g.scale[c] = sum_dy_xh;
        const T k = state.scale[c] * cache.inv_std[c];
        for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = grad_out.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                if (cache.training) {
                    g.input[base + i] =
                        k / count * (count * grad_out[base + i] - sum_dy - cache.normalized[base + i] * sum_dy_xh);
                } else {
                    g.input[base + i] = k * grad_out[base + i];
                }
            }
        }
    }
    return g;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
    BasicTensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
    return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out) {
    if (input.shape() != grad_out.shape()) throw std::invalid_argument("relu_backward: shape mismatch");
    BasicTensor<T> g(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T(0) ? grad_out[i] : T(0);
    return g;
}

template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicTensor<T>& input, const PoolParams& p) {
    const Shape& s = input.shape();
    const ConvGeometry g{p.kernel, p.kernel, p.stride, p.padding, 1};
    const Shape out_shape{s.n, s.c, g.out_h(s.h), g.out_w(s.w)};
    MaxPoolResult<T> r{BasicTensor<T>(out_shape), std::vector<std::size_t>(out_shape.count())};
    const auto pad = static_cast<std::ptrdiff_t>(p.padding);
    std::size_t o = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t base = input.offset(n, c, 0, 0);
            for (std::size_t y = 0; y < out_shape.h; ++y) {
                for (std::size_t x = 0; x < out_shape.w; ++x, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = base;
                    bool found = false;
                    for (std::size_t u = 0; u < p.kernel; ++u) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * p.stride + u) - pad;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
                        for (std::size_t v = 0; v < p.kernel; ++v) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * p.stride + v) - pad;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
                            const std::size_t idx = base + static_cast<std::size_t>(iy) * s.w + static_cast<std::size_t>(ix);
                            if (!found || input[idx] > best) {
                                best = input[idx];
                                best_idx = idx;
                                found = true;
                            }
                        }
                    }
                    r.output[o] = best;
                    r.argmax[o] = best_idx;
                }
            }
        }
    }
    return r;
}

template <typename T>
BasicTensor<T> maxpool_backward(const BasicTensor<T>& grad_out, std::span<const std::size_t> argmax,
                                const Shape& input_shape) {
    if (argmax.size() != grad_out.size()) throw std::invalid_argument("maxpool_backward: argmax length mismatch");
    BasicTensor<T> g(input_shape);
    for (std::size_t i = 0; i < grad_out.size(); ++i) g[argmax[i]] += grad_out[i];
    return g;
}

template <typename T>
BasicTensor<T> global_avg_pool_forward(const BasicTensor<T>& input) {
    const Shape& s = input.shape();
    const std::size_t plane = s.h * s.w;
    if (plane == 0) throw std::invalid_argument("global_avg_pool: empty spatial extent");
    BasicTensor<T> out(Shape{s.n, s.c, 1, 1});
    for (std::size_t i = 0; i < s.n * s.c; ++i) {
        T sum = 0;
        const T* src = input.data() + i * plane;
        for (std::size_t j = 0; j < plane; ++j) sum += src[j];
        out[i] = sum / T(plane);
    }
    return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
    if (grad_out.shape() != Shape{input_shape.n, input_shape.c, 1, 1}) {
        throw std::invalid_argument("global_avg_pool_backward: shape mismatch");
    }
    const std::size_t plane = input_shape.h * input_shape.w;
    BasicTensor<T> g(input_shape);
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        const T v = grad_out[i] / T(plane);
        std::fill_n(g.data() + i * plane, plane, v);
    }
    return g;
}

template <typename T>
BasicTensor<T> linear_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    const std::size_t batch = input.shape().n;
    const std::size_t in = input.shape().c * input.shape().h * input.shape().w;
    const std::size_t out = weight.shape().n;
    if (weight.size() != out * in) {
        throw std::invalid_argument("linear: input has " + std::to_string(in) + " features, weight expects " +
                                    std::to_string(weight.size() / std::max<std::size_t>(out, 1)));
    }
    if (bias.size() != out) throw std::invalid_argument("linear: bias length mismatch");
    BasicTensor<T> y(Shape{batch, out, 1, 1});
    const Matrix<T> wt = transpose(MatrixView<const T>{weight.data(), out, in});
    gemm(MatrixView<const T>{input.data(), batch, in}, view(wt), MatrixView<T>{y.data(), batch, out}, false);
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < out; ++o) y[n * out + o] += bias[o];
    }
    return y;
}

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                               const BasicTensor<T>& grad_out) {
    const std::size_t batch = input.shape().n;
    const std::size_t in = input.size() / std::max<std::size_t>(batch, 1);
    const std::size_t out = weight.shape().n;
    if (grad_out.shape() != Shape{batch, out, 1, 1} || weight.size() != out * in) {
        throw std::invalid_argument("linear_backward: shape mismatch");
    }
    LinearGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape()), BasicTensor<T>(Shape{out, 1, 1, 1})};
    const MatrixView<const T> dy{grad_out.data(), batch, out};
    const Matrix<T> dy_t = transpose(dy);
    gemm(view(dy_t), MatrixView<const T>{input.data(), batch, in}, MatrixView<T>{g.weight.data(), out, in}, false);
    gemm(dy, MatrixView<const T>{weight.data(), out, in}, MatrixView<T>{g.input.data(), batch, in}, false);
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < out; ++o) g.bias[o] += grad_out[n * out + o];
    }
    return g;
}

template <typename T>
SoftmaxXentResult<T> softmax_xent(const BasicTensor<T>& logits, std::span<const std::int32_t> labels) {
    const std::size_t batch = logits.shape().n;
    const std::size_t classes = logits.size() / std::max<std::size_t>(batch, 1);
    if (labels.size() != batch) throw std::invalid_argument("softmax_xent: one label per sample required");
    if (batch == 0) throw std::invalid_argument("softmax_xent: empty batch");
    SoftmaxXentResult<T> r{T(0), BasicTensor<T>(logits.shape())};
    T total = 0;
    for (std::size_t n = 0; n < batch; ++n) {
        const std::int32_t label = labels[n];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw std::out_of_range("softmax_xent: label " + std::to_string(label) + " outside [0, " +
                                    std::to_string(classes) + ")");
        }
        const T* z = logits.data() + n * classes;
        T* g = r.grad_logits.data() + n * classes;
        const T zmax = *std::max_element(z, z + classes);
        T denom = 0;
        for (std::size_t k = 0; k < classes; ++k) {
            g[k] = std::exp(z[k] - zmax);
            denom += g[k];
        }
        total += std::log(denom) + zmax - z[label];
        for (std::size_t k = 0; k < classes; ++k) g[k] = g[k] / denom / T(batch);
        g[label] -= T(1) / T(batch);
    }
    r.loss = total / T(batch);
    return r;
}

#define MSSHARE_INSTANTIATE(T)                                                                                      \
    template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const ConvWeights<T>&, const ConvParams&);        \
    template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const ConvWeights<T>&, const BasicTensor<T>&,      \
                                          const ConvParams&);                                                       \
    template struct BatchNormState<T>;                                                                              \
    template BasicTensor<T> batchnorm_forward(const BasicTensor<T>&, BatchNormState<T>&, bool, BatchNormCache<T>*); \
    template BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>&, const BatchNormState<T>&,                  \
                                                  const BatchNormCache<T>&);                                        \
    template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                                    \
    template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                            \
    template MaxPoolResult<T> maxpool_forward(const BasicTensor<T>&, const PoolParams&);                            \
    template BasicTensor<T> maxpool_backward(const BasicTensor<T>&, std::span<const std::size_t>, const Shape&);    \
    template BasicTensor<T> global_avg_pool_forward(const BasicTensor<T>&);                                         \
    template BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>&, const Shape&);                          \
    template BasicTensor<T> linear_forward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
    template LinearGrads<T> linear_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);   \
    template SoftmaxXentResult<T> softmax_xent(const BasicTensor<T>&, std::span<const std::int32_t>);

MSSHARE_INSTANTIATE(float)
MSSHARE_INSTANTIATE(double)
#undef MSSHARE_INSTANTIATE

}  // namespace msshare
