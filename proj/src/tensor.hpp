#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "error.hpp"

namespace dagnet {

// Dense row-major shape; channels are the last (fastest) dimension.
struct Shape {
    std::vector<int> dims;

    Shape() = default;
    Shape(std::initializer_list<int> d) : dims(d) { validate(); }
    explicit Shape(std::vector<int> d) : dims(std::move(d)) { validate(); }

    void validate() const;
    int rank() const { return static_cast<int>(dims.size()); }
    int operator[](int i) const { return dims[static_cast<std::size_t>(i)]; }
    std::size_t numel() const;
    bool operator==(const Shape& o) const { return dims == o.dims; }
    std::string str() const;  // e.g. "32x32x3"
};

// 64-bit floats everywhere; the gradient checks need the headroom.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    static Tensor zeros(const Shape& s);
    static Tensor full(const Shape& s, double value);
    static Tensor from(const Shape& s, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    // element access for rank-3 H x W x C tensors
    double& at3(int h, int w, int c) {
        return data[(static_cast<std::size_t>(h) * shape[1] + w) * shape[2] + c];
    }
    double at3(int h, int w, int c) const {
        return data[(static_cast<std::size_t>(h) * shape[1] + w) * shape[2] + c];
    }
};

bool all_finite(const Tensor& t);
void check_finite(const Tensor& t, const std::string& context);

// output extent of a strided window with zero padding; errors if the kernel
// cannot be placed at all
int conv_extent(int in, int k, int stride, int pad, const char* dim);

// ---- convolution (cross-correlation, zero padding) ----
// input H x W x Cin, kernels Kh x Kw x Cin x Cout
Tensor conv2d(const Tensor& input, const Tensor& kernels, const std::vector<double>& bias,
              int stride, int pad);

struct ConvGrads {
    Tensor input;
    Tensor kernels;
    std::vector<double> bias;
};
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                          int stride, int pad);

// ---- max pooling ----
struct PoolResult {
    Tensor output;
    std::vector<std::size_t> argmax;  // flat input index per output element; ties -> lowest index
};
PoolResult maxpool2d(const Tensor& input, int window, int stride);
Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_out);

// ---- global average pooling: H x W x F -> 1 x 1 x F ----
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

// ---- relu ----
Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);  // subgradient at 0 is 0

// ---- L2 normalization over the flattened vector ----
// y = x / max(||x||, eps); the zero vector maps to itself.
std::vector<double> l2_normalize(const std::vector<double>& input, double epsilon);
// full quotient-rule Jacobian, not the norm-detached approximation
std::vector<double> l2_normalize_backward(const std::vector<double>& input,
                                          const std::vector<double>& grad_out, double epsilon);

// ---- fully connected: out = input^T * weights + bias, weights F x K ----
std::vector<double> fully_connected(const std::vector<double>& input, const Tensor& weights,
                                    const std::vector<double>& bias);
struct FcGrads {
    std::vector<double> input;
    Tensor weights;
    std::vector<double> bias;
};
FcGrads fully_connected_backward(const std::vector<double>& input, const Tensor& weights,
                                 const std::vector<double>& grad_out);

// ---- elementwise sum of >= 1 same-shape tensors ----
Tensor add_n(const std::vector<const Tensor*>& inputs);

// ---- softmax cross entropy ----
struct SoftmaxLossResult {
    double loss;
    std::vector<double> grad_logits;  // softmax(logits) - onehot(label)
};
SoftmaxLossResult softmax_cross_entropy(const std::vector<double>& logits, int label);
std::vector<double> softmax(const std::vector<double>& logits);

}  // namespace dagnet
