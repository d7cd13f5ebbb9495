#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace msshare {

/// Extents of a 4-D tensor in (batch, channels, height, width) order.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    /// Product of the extents. Throws std::overflow_error when it does not fit in size_t.
    std::size_t count() const;
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense row-major (N,C,H,W) tensor. `Tensor` is the 32-bit training type,
/// `TensorD` the 64-bit type used by gradient checking.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T{});

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[offset(n, c, h, w)]; }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[offset(n, c, h, w)];
    }

    void fill(T value);
    /// Same data, new extents with the same element count.
    BasicTensor reshaped(Shape shape) const;

    /// Throws std::domain_error naming `where` if any element is NaN or infinite.
    void require_finite(std::string_view where) const;

    template <typename U>
    BasicTensor<U> cast() const {
        BasicTensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    /// Same extents and bitwise-equal values (NaN never compares equal).
    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

Tensor tensor_new(Shape shape, float fill);

/// Owning row-major 2-D matrix, the lowering target of im2col.
template <typename T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Non-owning view of a row-major matrix living in some other buffer.
template <typename T>
struct MatrixView {
    T* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;

    MatrixView() = default;
    MatrixView(T* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
    template <typename U>
        requires std::is_same_v<const U, T>
    MatrixView(MatrixView<U> m) : data(m.data), rows(m.rows), cols(m.cols) {}
};

template <typename T>
MatrixView<const T> view(const Matrix<T>& m) { return {m.data.data(), m.rows, m.cols}; }
template <typename T>
MatrixView<T> view(Matrix<T>& m) { return {m.data.data(), m.rows, m.cols}; }

/// Kernel geometry shared by convolution lowering and the convolution ops.
struct ConvGeometry {
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;

    /// floor((in + 2p - r(f-1) - 1)/s) + 1; throws std::invalid_argument when negative.
    std::size_t output_extent(std::size_t in, std::size_t kernel) const;
    std::size_t out_h(std::size_t h) const { return output_extent(h, kernel_h); }
    std::size_t out_w(std::size_t w) const { return output_extent(w, kernel_w); }
};

/// Lowers the whole batch: rows = C*kh*kw, column n*Hout*Wout + y*Wout + x holds
/// the zero-padded receptive field of output (y, x) of sample n.
template <typename T>
Matrix<T> im2col(const BasicTensor<T>& input, const ConvGeometry& geom);

/// Lowers one sample into `cols` (rows = C*kh*kw, cols = Hout*Wout).
template <typename T>
void im2col_sample(const BasicTensor<T>& input, std::size_t sample, const ConvGeometry& geom, Matrix<T>& cols);

/// Adjoint of im2col_sample: scatters-adds `cols` into sample `sample` of `grad_input`.
template <typename T>
void col2im_sample(const Matrix<T>& cols, const ConvGeometry& geom, std::size_t sample, BasicTensor<T>& grad_input);

/// c = a * b (or c += a * b). Every c(i,j) accumulates over k in ascending order.
template <typename T>
void gemm(std::type_identity_t<MatrixView<const T>> a, std::type_identity_t<MatrixView<const T>> b, MatrixView<T> c,
          bool accumulate);

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
Matrix<T> transpose(MatrixView<const T> m);

}  // namespace msshare
