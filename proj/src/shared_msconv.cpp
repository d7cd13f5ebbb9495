#include "msshare/shared_msconv.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace msshare {

SharedMultiScaleConvSpec SharedMultiScaleConvSpec::make(std::size_t in_channels, std::size_t out_channels,
                                                        std::size_t kernel_size, std::size_t n, std::size_t stride) {
    SharedMultiScaleConvSpec spec;
    spec.in_channels = in_channels;
    spec.out_channels = out_channels;
    spec.kernel_size = kernel_size;
    spec.stride = stride;
    spec.padding = (kernel_size - 1) / 2;
    spec.rates.resize(n);
    std::iota(spec.rates.begin(), spec.rates.end(), std::size_t{1});
    spec.validate();
    return spec;
}

ConvParams SharedMultiScaleConvSpec::branch_params(std::size_t branch) const {
    const std::size_t rate = rates.at(branch);
    return ConvParams{stride, padding_for_rate(rate), rate};
}

void SharedMultiScaleConvSpec::validate() const {
    if (rates.empty()) throw std::invalid_argument("multi-scale conv: at least one rate required");
    if (in_channels == 0 || out_channels == 0) throw std::invalid_argument("multi-scale conv: zero channels");
    if (out_channels % rates.size() != 0) {
        std::ostringstream os;
        os << "multi-scale conv: " << out_channels << " output channels not divisible by n=" << rates.size();
        throw std::invalid_argument(os.str());
    }
    if (kernel_size % 2 == 0) throw std::invalid_argument("multi-scale conv: kernel size must be odd");
    if (stride == 0) throw std::invalid_argument("multi-scale conv: stride must be positive");
    if (std::find(rates.begin(), rates.end(), std::size_t{0}) != rates.end()) {
        throw std::invalid_argument("multi-scale conv: rates must be positive");
    }
}

Shape SharedMultiScaleConvSpec::output_shape(const Shape& input) const {
    validate();
    if (input.c != in_channels) {
        std::ostringstream os;
        os << "multi-scale conv: input has " << input.c << " channels, expected " << in_channels;
        throw std::invalid_argument(os.str());
    }
    Shape out{input.n, out_channels, 0, 0};
    for (std::size_t k = 0; k < rates.size(); ++k) {
        const ConvParams p = branch_params(k);
        const ConvGeometry g{kernel_size, kernel_size, p.stride, p.padding, p.dilation};
        const std::size_t h = g.out_h(input.h);
        const std::size_t w = g.out_w(input.w);
        if (k == 0) {
            out.h = h;
            out.w = w;
        } else if (h != out.h || w != out.w) {
            std::ostringstream os;
            os << "multi-scale conv: rate " << rates[k] << " branch yields " << h << 'x' << w << ", rate " << rates[0]
               << " yields " << out.h << 'x' << out.w;
            throw std::invalid_argument(os.str());
        }
    }
    if (out.h == 0 || out.w == 0) throw std::invalid_argument("multi-scale conv: non-positive output extent");
    return out;
}

std::uint64_t SharedMultiScaleConvSpec::weight_count() const {
    return std::uint64_t{branch_channels()} * in_channels * kernel_size * kernel_size;
}

template <typename T>
BasicTensor<T> expected_gradient(std::span<const BasicTensor<T>> terms) {
    if (terms.empty()) throw std::invalid_argument("expected_gradient: no terms");
    BasicTensor<T> mean = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k) {
        if (terms[k].shape() != mean.shape()) throw std::invalid_argument("expected_gradient: shape mismatch");
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += terms[k][i];
    }
    const T count = T(terms.size());
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] /= count;
    return mean;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& src, std::size_t begin, std::size_t count) {
    const Shape& s = src.shape();
    if (begin + count > s.c) throw std::out_of_range("slice_channels: range exceeds channel extent");
    BasicTensor<T> out(Shape{s.n, count, s.h, s.w});
    const std::size_t block = count * s.h * s.w;
    for (std::size_t n = 0; n < s.n; ++n) {
        std::copy_n(src.data() + src.offset(n, begin, 0, 0), block, out.data() + n * block);
    }
    return out;
}

template <typename T>
void assign_channels(BasicTensor<T>& dst, std::size_t begin, const BasicTensor<T>& src) {
    const Shape& d = dst.shape();
    const Shape& s = src.shape();
    if (s.n != d.n || s.h != d.h || s.w != d.w || begin + s.c > d.c) {
        throw std::invalid_argument("assign_channels: incompatible shapes");
    }
    const std::size_t block = s.c * s.h * s.w;
    for (std::size_t n = 0; n < s.n; ++n) {
        std::copy_n(src.data() + n * block, block, dst.data() + dst.offset(n, begin, 0, 0));
    }
}

namespace {

template <typename T>
void check_branch_weights(const ConvWeights<T>& w, const SharedMultiScaleConvSpec& spec) {
    const Shape expected{spec.branch_channels(), spec.in_channels, spec.kernel_size, spec.kernel_size};
    if (w.kernels.shape() != expected) {
        throw std::invalid_argument("multi-scale conv: kernels " + w.kernels.shape().str() + ", expected " +
                                    expected.str());
    }
}

template <typename T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
BasicTensor<T> smsc_forward(const BasicTensor<T>& input, const ConvWeights<T>& shared,
                            const SharedMultiScaleConvSpec& spec) {
    const Shape out_shape = spec.output_shape(input.shape());
    check_branch_weights(shared, spec);
    BasicTensor<T> out(out_shape);
    for (std::size_t k = 0; k < spec.n(); ++k) {
        assign_channels(out, k * spec.branch_channels(), conv2d_forward(input, shared, spec.branch_params(k)));
    }
    return out;
}

template <typename T>
SharedBackward<T> smsc_backward(const BasicTensor<T>& input, const ConvWeights<T>& shared,
                                const BasicTensor<T>& grad_out, const SharedMultiScaleConvSpec& spec) {
    const Shape out_shape = spec.output_shape(input.shape());
    check_branch_weights(shared, spec);
    if (grad_out.shape() != out_shape) {
        throw std::invalid_argument("smsc_backward: grad_out " + grad_out.shape().str() + " does not match " +
                                    out_shape.str());
    }
    SharedBackward<T> r;
    r.grad_input = BasicTensor<T>(input.shape());
    for (std::size_t k = 0; k < spec.n(); ++k) {
        const BasicTensor<T> go = slice_channels(grad_out, k * spec.branch_channels(), spec.branch_channels());
        ConvGrads<T> g = conv2d_backward(input, shared, go, spec.branch_params(k));
        accumulate(r.grad_input, g.input);
        r.grads.per_rate.push_back(std::move(g.kernels));
        if (shared.has_bias()) r.grads.per_rate_bias.push_back(std::move(g.bias));
    }
    r.grads.expected = expected_gradient(std::span<const BasicTensor<T>>(r.grads.per_rate));
    if (shared.has_bias()) {
        r.grads.expected_bias = expected_gradient(std::span<const BasicTensor<T>>(r.grads.per_rate_bias));
    }
    return r;
}

template <typename T>
BasicTensor<T> unshared_msconv_forward(const BasicTensor<T>& input, std::span<const ConvWeights<T>> per_rate,
                                       const SharedMultiScaleConvSpec& spec) {
    const Shape out_shape = spec.output_shape(input.shape());
    if (per_rate.size() != spec.n()) throw std::invalid_argument("unshared multi-scale conv: one weight set per rate");
    BasicTensor<T> out(out_shape);
    for (std::size_t k = 0; k < spec.n(); ++k) {
        check_branch_weights(per_rate[k], spec);
        assign_channels(out, k * spec.branch_channels(), conv2d_forward(input, per_rate[k], spec.branch_params(k)));
    }
    return out;
}

template <typename T>
UnsharedBackward<T> unshared_msconv_backward(const BasicTensor<T>& input, std::span<const ConvWeights<T>> per_rate,
                                             const BasicTensor<T>& grad_out, const SharedMultiScaleConvSpec& spec) {
    const Shape out_shape = spec.output_shape(input.shape());
    if (per_rate.size() != spec.n()) throw std::invalid_argument("unshared multi-scale conv: one weight set per rate");
    if (grad_out.shape() != out_shape) throw std::invalid_argument("unshared_msconv_backward: shape mismatch");
    UnsharedBackward<T> r;
    r.grad_input = BasicTensor<T>(input.shape());
    for (std::size_t k = 0; k < spec.n(); ++k) {
        check_branch_weights(per_rate[k], spec);
        const BasicTensor<T> go = slice_channels(grad_out, k * spec.branch_channels(), spec.branch_channels());
        ConvGrads<T> g = conv2d_backward(input, per_rate[k], go, spec.branch_params(k));
        accumulate(r.grad_input, g.input);
        g.input = BasicTensor<T>();
        r.per_rate.push_back(std::move(g));
    }
    return r;
}

std::uint64_t msconv_macs(const SharedMultiScaleConvSpec& spec, const Shape& input) {
    const Shape out = spec.output_shape(Shape{1, input.c, input.h, input.w});
    return std::uint64_t{out.c} * spec.in_channels * spec.kernel_size * spec.kernel_size * out.h * out.w;
}

#define MSSHARE_INSTANTIATE(T)                                                                                    \
    template BasicTensor<T> expected_gradient(std::span<const BasicTensor<T>>);                                   \
    template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::size_t, std::size_t);                      \
    template void assign_channels(BasicTensor<T>&, std::size_t, const BasicTensor<T>&);                           \
    template BasicTensor<T> smsc_forward(const BasicTensor<T>&, const ConvWeights<T>&,                            \
                                         const SharedMultiScaleConvSpec&);                                        \
    template SharedBackward<T> smsc_backward(const BasicTensor<T>&, const ConvWeights<T>&, const BasicTensor<T>&, \
                                             const SharedMultiScaleConvSpec&);                                    \
    template BasicTensor<T> unshared_msconv_forward(const BasicTensor<T>&, std::span<const ConvWeights<T>>,       \
                                                    const SharedMultiScaleConvSpec&);                             \
    template UnsharedBackward<T> unshared_msconv_backward(const BasicTensor<T>&, std::span<const ConvWeights<T>>, \
                                                          const BasicTensor<T>&, const SharedMultiScaleConvSpec&);

MSSHARE_INSTANTIATE(float)
MSSHARE_INSTANTIATE(double)
#undef MSSHARE_INSTANTIATE

}  // namespace msshare
