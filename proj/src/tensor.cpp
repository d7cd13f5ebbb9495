#include "msshare/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace msshare {

std::size_t Shape::count() const {
    std::size_t total = 1;
    for (std::size_t extent : {n, c, h, w}) {
        if (__builtin_mul_overflow(total, extent, &total)) {
            throw std::overflow_error("tensor extent product overflows: " + str());
        }
    }
    return total;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape), data_(shape.count(), fill) {}

template <typename T>
void BasicTensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
    if (shape.count() != data_.size()) {
        throw std::invalid_argument("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    BasicTensor out = *this;
    out.shape_ = shape;
    return out;
}

template <typename T>
void BasicTensor<T>::require_finite(std::string_view where) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            std::ostringstream os;
            os << "non-finite value " << data_[i] << " at flat index " << i << " in " << where;
            throw std::domain_error(os.str());
        }
    }
}

Tensor tensor_new(Shape shape, float fill) { return Tensor(shape, fill); }

std::size_t ConvGeometry::output_extent(std::size_t in, std::size_t kernel) const {
    if (stride == 0 || dilation == 0 || kernel == 0) {
        throw std::invalid_argument("convolution stride, dilation and kernel must be positive");
    }
    const auto span = static_cast<std::ptrdiff_t>(dilation * (kernel - 1) + 1);
    const auto padded = static_cast<std::ptrdiff_t>(in + 2 * padding);
    if (padded < span) {
        std::ostringstream os;
        os << "negative output extent: input " << in << ", padding " << padding << ", kernel " << kernel
           << ", dilation " << dilation;
        throw std::invalid_argument(os.str());
    }
    return static_cast<std::size_t>(padded - span) / stride + 1;
}

template <typename T>
void im2col_sample(const BasicTensor<T>& input, std::size_t sample, const ConvGeometry& geom, Matrix<T>& cols) {
    const Shape& s = input.shape();
    const std::size_t out_h = geom.out_h(s.h);
    const std::size_t out_w = geom.out_w(s.w);
    const std::size_t rows = s.c * geom.kernel_h * geom.kernel_w;
    if (cols.rows != rows || cols.cols != out_h * out_w) cols = Matrix<T>(rows, out_h * out_w);

    const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
    const auto height = static_cast<std::ptrdiff_t>(s.h);
    const auto width = static_cast<std::ptrdiff_t>(s.w);
    const T* plane_base = input.data() + input.offset(sample, 0, 0, 0);
    T* dst = cols.data.data();
    for (std::size_t c = 0; c < s.c; ++c) {
        const T* plane = plane_base + c * s.h * s.w;
        for (std::size_t u = 0; u < geom.kernel_h; ++u) {
            for (std::size_t v = 0; v < geom.kernel_w; ++v) {
                const auto dy = static_cast<std::ptrdiff_t>(u * geom.dilation) - pad;
                const auto dx = static_cast<std::ptrdiff_t>(v * geom.dilation) - pad;
                for (std::size_t y = 0; y < out_h; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * geom.stride) + dy;
                    if (iy < 0 || iy >= height) {
                        std::fill(dst, dst + out_w, T{});
                        dst += out_w;
                        continue;
                    }
                    const T* row = plane + iy * width;
                    for (std::size_t x = 0; x < out_w; ++x) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * geom.stride) + dx;
                        *dst++ = (ix >= 0 && ix < width) ? row[ix] : T{};
                    }
                }
            }
        }
    }
}

template <typename T>
Matrix<T> im2col(const BasicTensor<T>& input, const ConvGeometry& geom) {
    const Shape& s = input.shape();
    const std::size_t per_sample = geom.out_h(s.h) * geom.out_w(s.w);
    const std::size_t rows = s.c * geom.kernel_h * geom.kernel_w;
    Matrix<T> out(rows, s.n * per_sample);
    Matrix<T> cols;
    for (std::size_t n = 0; n < s.n; ++n) {
        im2col_sample(input, n, geom, cols);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(&cols(r, 0), per_sample, &out(r, n * per_sample));
        }
    }
    return out;
}

template <typename T>
void col2im_sample(const Matrix<T>& cols, const ConvGeometry& geom, std::size_t sample, BasicTensor<T>& grad_input) {
    const Shape& s = grad_input.shape();
    const std::size_t out_h = geom.out_h(s.h);
    const std::size_t out_w = geom.out_w(s.w);
    if (cols.rows != s.c * geom.kernel_h * geom.kernel_w || cols.cols != out_h * out_w) {
        throw std::invalid_argument("col2im: column matrix does not match the input geometry");
    }
    const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
    const auto height = static_cast<std::ptrdiff_t>(s.h);
    const auto width = static_cast<std::ptrdiff_t>(s.w);
    T* plane_base = grad_input.data() + grad_input.offset(sample, 0, 0, 0);
    const T* src = cols.data.data();
    for (std::size_t c = 0; c < s.c; ++c) {
        T* plane = plane_base + c * s.h * s.w;
        for (std::size_t u = 0; u < geom.kernel_h; ++u) {
            for (std::size_t v = 0; v < geom.kernel_w; ++v) {
                const auto dy = static_cast<std::ptrdiff_t>(u * geom.dilation) - pad;
                const auto dx = static_cast<std::ptrdiff_t>(v * geom.dilation) - pad;
                for (std::size_t y = 0; y < out_h; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * geom.stride) + dy;
                    if (iy < 0 || iy >= height) {
                        src += out_w;
                        continue;
                    }
                    T* row = plane + iy * width;
                    for (std::size_t x = 0; x < out_w; ++x, ++src) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * geom.stride) + dx;
                        if (ix >= 0 && ix < width) row[ix] += *src;
                    }
                }
            }
        }
    }
}

template <typename T>
void gemm(std::type_identity_t<MatrixView<const T>> a, std::type_identity_t<MatrixView<const T>> b, MatrixView<T> c,
          bool accumulate) {
    if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols) {
        throw std::invalid_argument("gemm: extent mismatch");
    }
    const std::size_t n = b.cols;
    if (!accumulate) std::fill(c.data, c.data + c.rows * c.cols, T{});
    for (std::size_t i = 0; i < a.rows; ++i) {
        T* c_row = c.data + i * n;
        const T* a_row = a.data + i * a.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const T scale = a_row[k];
            const T* b_row = b.data + k * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += scale * b_row[j];
        }
    }
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols != b.rows) {
        std::ostringstream os;
        os << "matmul: inner extents disagree (" << a.rows << 'x' << a.cols << " * " << b.rows << 'x' << b.cols << ')';
        throw std::invalid_argument(os.str());
    }
    Matrix<T> out(a.rows, b.cols);
    gemm(view(a), view(b), view(out), false);
    return out;
}

template <typename T>
Matrix<T> transpose(MatrixView<const T> m) {
    Matrix<T> out(m.cols, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) out(c, r) = m.data[r * m.cols + c];
    }
    return out;
}

#define MSSHARE_INSTANTIATE(T)                                                                                    \
    template class BasicTensor<T>;                                                                                \
    template Matrix<T> im2col(const BasicTensor<T>&, const ConvGeometry&);                                        \
    template void im2col_sample(const BasicTensor<T>&, std::size_t, const ConvGeometry&, Matrix<T>&);             \
    template void col2im_sample(const Matrix<T>&, const ConvGeometry&, std::size_t, BasicTensor<T>&);             \
    template void gemm<T>(MatrixView<const T>, MatrixView<const T>, MatrixView<T>, bool);                                    \
    template Matrix<T> matmul(const Matrix<T>&, const Matrix<T>&);                                                \
    template Matrix<T> transpose(MatrixView<const T>);

MSSHARE_INSTANTIATE(float)
MSSHARE_INSTANTIATE(double)
#undef MSSHARE_INSTANTIATE

}  // namespace msshare
