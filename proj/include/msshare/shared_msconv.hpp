#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msshare/conv_ops.hpp"

namespace msshare {

/// One multi-scale convolution layer: k_o output channels split into n groups of
/// k_o/n, group k produced by the kernels dilated at rates[k].
///
/// Padding grows with the rate so every branch has the same output extent:
/// p_k = padding + (r_k - 1)(f - 1)/2, which is r_k(f - 1)/2 for "same" padding.
struct SharedMultiScaleConvSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_size = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;             // padding of the rate-1 branch
    std::vector<std::size_t> rates{1};   // branch order; defaults to 1..n

    /// Rates [1, n], "same" padding at rate 1.
    static SharedMultiScaleConvSpec make(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size,
                                         std::size_t n, std::size_t stride = 1);

    std::size_t n() const { return rates.size(); }
    std::size_t branch_channels() const { return out_channels / rates.size(); }
    std::size_t padding_for_rate(std::size_t rate) const { return padding + (rate - 1) * (kernel_size - 1) / 2; }
    ConvParams branch_params(std::size_t branch) const;

    /// Throws std::invalid_argument when k_o is not divisible by n, f is even, or a rate is zero.
    void validate() const;
    /// Common output shape of all branches; throws when the branches disagree.
    Shape output_shape(const Shape& input) const;
    /// Number of unique kernel weights, k_o*k_i*f^2/n.
    std::uint64_t weight_count() const;
};

/// Weight gradient of a shared layer: one tensor per rate and their mean.
template <typename T>
struct SharedGradient {
    std::vector<BasicTensor<T>> per_rate;
    BasicTensor<T> expected;
    std::vector<BasicTensor<T>> per_rate_bias;  // empty when the layer has no bias
    BasicTensor<T> expected_bias;
};

template <typename T>
struct SharedBackward {
    BasicTensor<T> grad_input;
    SharedGradient<T> grads;
};

template <typename T>
struct UnsharedBackward {
    BasicTensor<T> grad_input;
    std::vector<ConvGrads<T>> per_rate;  // `input` member left empty
};

/// Element-wise mean of `terms`, folded in order and divided once by the count.
template <typename T>
BasicTensor<T> expected_gradient(std::span<const BasicTensor<T>> terms);

/// Copies channels [begin, begin + count) of `src`.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& src, std::size_t begin, std::size_t count);

/// Writes `src` into channels [begin, begin + src.c) of `dst`.
template <typename T>
void assign_channels(BasicTensor<T>& dst, std::size_t begin, const BasicTensor<T>& src);

template <typename T>
BasicTensor<T> smsc_forward(const BasicTensor<T>& input, const ConvWeights<T>& shared,
                            const SharedMultiScaleConvSpec& spec);

template <typename T>
SharedBackward<T> smsc_backward(const BasicTensor<T>& input, const ConvWeights<T>& shared,
                                const BasicTensor<T>& grad_out, const SharedMultiScaleConvSpec& spec);

template <typename T>
BasicTensor<T> unshared_msconv_forward(const BasicTensor<T>& input, std::span<const ConvWeights<T>> per_rate,
                                       const SharedMultiScaleConvSpec& spec);

template <typename T>
UnsharedBackward<T> unshared_msconv_backward(const BasicTensor<T>& input, std::span<const ConvWeights<T>> per_rate,
                                             const BasicTensor<T>& grad_out, const SharedMultiScaleConvSpec& spec);

/// Multiply-accumulates of one forward pass per sample. Independent of sharing.
std::uint64_t msconv_macs(const SharedMultiScaleConvSpec& spec, const Shape& input);

}  // namespace msshare
