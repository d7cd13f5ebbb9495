#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msshare/tensor.hpp"

namespace msshare {

/// Kernels (k_o, k_i, f, f) and an optional bias of shape (k_o, 1, 1, 1).
template <typename T>
struct ConvWeights {
    BasicTensor<T> kernels;
    BasicTensor<T> bias;  // empty when the convolution has no bias

    bool has_bias() const { return !bias.empty(); }
    std::size_t out_channels() const { return kernels.shape().n; }
    std::size_t in_channels() const { return kernels.shape().c; }
    std::size_t kernel_size() const { return kernels.shape().h; }
};

struct ConvParams {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
};

template <typename T>
struct ConvGrads {
    BasicTensor<T> input;
    BasicTensor<T> kernels;
    BasicTensor<T> bias;  // empty when the convolution has no bias
};

/// Cross-correlation with zero padding and dilated taps:
/// out[n,o,y,x] = bias[o] + sum_{c,u,v} in[n,c,y*s-p+u*r,x*s-p+v*r] * w[o,c,u,v].
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const ConvWeights<T>& w, const ConvParams& p);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const ConvWeights<T>& w, const BasicTensor<T>& grad_out,
                             const ConvParams& p);

/// r*(f-1)+1
constexpr std::size_t effective_kernel_extent(std::size_t f, std::size_t dilation) { return dilation * (f - 1) + 1; }

template <typename T>
struct BatchNormState {
    BasicTensor<T> scale;  // (C,1,1,1)
    BasicTensor<T> shift;
    BasicTensor<T> running_mean;
    BasicTensor<T> running_var;
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    static BatchNormState identity(std::size_t channels);
    std::size_t channels() const { return scale.size(); }
};

template <typename T>
struct BatchNormCache {
    BasicTensor<T> normalized;    // x_hat
    std::vector<T> inv_std;       // per channel
    bool training = true;
};

template <typename T>
struct BatchNormGrads {
    BasicTensor<T> input;
    BasicTensor<T> scale;
    BasicTensor<T> shift;
};

/// Training mode normalizes with biased batch statistics and folds the unbiased
/// variance into the running estimate; eval mode uses the running statistics.
template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& input, BatchNormState<T>& state, bool training,
                                 BatchNormCache<T>* cache = nullptr);

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out);

struct PoolParams {
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t padding = 0;
};

template <typename T>
struct MaxPoolResult {
    BasicTensor<T> output;
    std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Padded taps never win. Ties go to the first tap in raster order.
template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicTensor<T>& input, const PoolParams& p);
template <typename T>
BasicTensor<T> maxpool_backward(const BasicTensor<T>& grad_out, std::span<const std::size_t> argmax,
                                const Shape& input_shape);

template <typename T>
BasicTensor<T> global_avg_pool_forward(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

/// Fully connected layer over the flattened C*H*W features of each sample.
/// weight: (out, in, 1, 1); bias: (out, 1, 1, 1); output: (N, out, 1, 1).
template <typename T>
BasicTensor<T> linear_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

template <typename T>
struct LinearGrads {
    BasicTensor<T> input;
    BasicTensor<T> weight;
    BasicTensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                               const BasicTensor<T>& grad_out);

template <typename T>
struct SoftmaxXentResult {
    T loss = T(0);              // mean over the batch
    BasicTensor<T> grad_logits; // d loss / d logits
};

/// logits: (N, K, 1, 1). Throws std::out_of_range for a label >= K.
template <typename T>
SoftmaxXentResult<T> softmax_xent(const BasicTensor<T>& logits, std::span<const std::int32_t> labels);

}  // namespace msshare
