#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace dagnet {

void Shape::validate() const {
    require(!dims.empty(), ErrorCode::Argument, "shape must have at least one dimension");
    for (int d : dims)
        require(d >= 1, ErrorCode::Argument, "shape extents must be >= 1, got " + str());
}

std::size_t Shape::numel() const {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return n;
}

std::string Shape::str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    return os.str();
}

Tensor Tensor::zeros(const Shape& s) {
    Tensor t;
    t.shape = s;
    t.shape.validate();
    t.data.assign(s.numel(), 0.0);
    return t;
}

Tensor Tensor::full(const Shape& s, double value) {
    Tensor t = zeros(s);
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

Tensor Tensor::from(const Shape& s, std::vector<double> values) {
    require(values.size() == s.numel(), ErrorCode::Argument,
            "tensor data length " + std::to_string(values.size()) + " does not match shape " + s.str());
    Tensor t;
    t.shape = s;
    t.shape.validate();
    t.data = std::move(values);
    return t;
}

bool all_finite(const Tensor& t) {
    return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v); });
}

void check_finite(const Tensor& t, const std::string& context) {
    require(all_finite(t), ErrorCode::Numeric, "non-finite value in " + context);
}

int conv_extent(int in, int k, int stride, int pad, const char* dim) {
    require(in + 2 * pad >= k, ErrorCode::Argument,
            std::string("kernel does not fit input along ") + dim);
    return (in + 2 * pad - k) / stride + 1;
}

namespace {

void expect_rank3(const Tensor& t, const char* name) {
    require(t.shape.rank() == 3, ErrorCode::Argument,
            std::string(name) + " must be H x W x C, got " + t.shape.str());
}

// im2col layout: one row per output position (oh, ow), columns ordered
// (kh, kw, cin) to match the kernel tensor's row-major layout.
std::vector<double> im2col(const Tensor& input, int kh, int kw, int stride, int pad, int out_h,
                           int out_w) {
    const int h = input.shape[0], w = input.shape[1], cin = input.shape[2];
    const std::size_t cols = static_cast<std::size_t>(kh) * kw * cin;
    std::vector<double> m(static_cast<std::size_t>(out_h) * out_w * cols, 0.0);
    std::size_t row = 0;
    for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow, ++row) {
            double* dst = &m[row * cols];
            for (int r = 0; r < kh; ++r) {
                const int ih = oh * stride + r - pad;
                for (int c = 0; c < kw; ++c) {
                    const int iw = ow * stride + c - pad;
                    double* cell = dst + (static_cast<std::size_t>(r) * kw + c) * cin;
                    if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;  // zero padding
                    const double* src = &input.data[(static_cast<std::size_t>(ih) * w + iw) * cin];
                    std::copy(src, src + cin, cell);
                }
            }
        }
    }
    return m;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const std::vector<double>& bias,
              int stride, int pad) {
    expect_rank3(input, "conv input");
    require(kernels.shape.rank() == 4, ErrorCode::Argument,
            "kernels must be Kh x Kw x Cin x Cout, got " + kernels.shape.str());
    require(stride >= 1, ErrorCode::Argument, "conv stride must be positive");
    require(pad >= 0, ErrorCode::Argument, "conv pad must be non-negative");
    const int kh = kernels.shape[0], kw = kernels.shape[1];
    const int cin = kernels.shape[2], cout = kernels.shape[3];
    require(input.shape[2] == cin, ErrorCode::Argument,
            "conv channel mismatch: input has " + std::to_string(input.shape[2]) +
                ", kernels expect " + std::to_string(cin));
    require(static_cast<int>(bias.size()) == cout, ErrorCode::Argument,
            "conv bias length must equal output channels");

    const int out_h = conv_extent(input.shape[0], kh, stride, pad, "height");
    const int out_w = conv_extent(input.shape[1], kw, stride, pad, "width");
    const std::size_t cols = static_cast<std::size_t>(kh) * kw * cin;
    const std::vector<double> col = im2col(input, kh, kw, stride, pad, out_h, out_w);

    Tensor out = Tensor::zeros({out_h, out_w, cout});
    const std::size_t rows = static_cast<std::size_t>(out_h) * out_w;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = &col[r * cols];
        double* y = &out.data[r * cout];
        for (int co = 0; co < cout; ++co) y[co] = bias[static_cast<std::size_t>(co)];
        for (std::size_t k = 0; k < cols; ++k) {
            const double xv = x[k];
            if (xv == 0.0) continue;
            const double* wrow = &kernels.data[k * cout];
            for (int co = 0; co < cout; ++co) y[co] += xv * wrow[co];
        }
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                          int stride, int pad) {
    const int kh = kernels.shape[0], kw = kernels.shape[1];
    const int cin = kernels.shape[2], cout = kernels.shape[3];
    const int out_h = grad_out.shape[0], out_w = grad_out.shape[1];
    require(grad_out.shape[2] == cout, ErrorCode::Argument, "conv grad_out channel mismatch");

    ConvGrads g;
    g.input = Tensor::zeros(input.shape);
    g.kernels = Tensor::zeros(kernels.shape);
    g.bias.assign(static_cast<std::size_t>(cout), 0.0);

    const std::size_t cols = static_cast<std::size_t>(kh) * kw * cin;
    const std::vector<double> col = im2col(input, kh, kw, stride, pad, out_h, out_w);

    const int h = input.shape[0], w = input.shape[1];
    std::size_t row = 0;
    for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow, ++row) {
            const double* gy = &grad_out.data[row * cout];
            for (int co = 0; co < cout; ++co) g.bias[static_cast<std::size_t>(co)] += gy[co];
            // dW += col_row^T * gy ; dX scatter of gy * W^T through the window
            for (int r = 0; r < kh; ++r) {
                const int ih = oh * stride + r - pad;
                for (int c = 0; c < kw; ++c) {
                    const int iw = ow * stride + c - pad;
                    const bool inside = ih >= 0 && ih < h && iw >= 0 && iw < w;
                    for (int ci = 0; ci < cin; ++ci) {
                        const std::size_t k = (static_cast<std::size_t>(r) * kw + c) * cin + ci;
                        const double* wrow = &kernels.data[k * cout];
                        double* gw = &g.kernels.data[k * cout];
                        const double xv = col[row * cols + k];
                        double gx = 0.0;
                        for (int co = 0; co < cout; ++co) {
                            gw[co] += xv * gy[co];
                            gx += wrow[co] * gy[co];
                        }
                        if (inside)
                            g.input.data[(static_cast<std::size_t>(ih) * w + iw) * cin + ci] += gx;
                    }
                }
            }
        }
    }
    return g;
}

PoolResult maxpool2d(const Tensor& input, int window, int stride) {
    expect_rank3(input, "maxpool input");
    require(window >= 1 && stride >= 1, ErrorCode::Argument, "maxpool window and stride must be positive");
    const int h = input.shape[0], w = input.shape[1], ch = input.shape[2];
    require(window <= h && window <= w, ErrorCode::Argument,
            "maxpool window " + std::to_string(window) + " larger than input " + input.shape.str());
    require(stride <= h && stride <= w, ErrorCode::Argument,
            "maxpool stride " + std::to_string(stride) + " larger than input " + input.shape.str());
    const int out_h = (h - window) / stride + 1;
    const int out_w = (w - window) / stride + 1;

    PoolResult res;
    res.output = Tensor::zeros({out_h, out_w, ch});
    res.argmax.assign(res.output.size(), 0);
    std::size_t oi = 0;
    for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
            for (int c = 0; c < ch; ++c, ++oi) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (int r = 0; r < window; ++r) {
                    for (int q = 0; q < window; ++q) {
                        const std::size_t idx =
                            (static_cast<std::size_t>(oh * stride + r) * w + (ow * stride + q)) * ch + c;
                        // strict > keeps the lowest flat index on ties
                        if (input.data[idx] > best) {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                res.output.data[oi] = best;
                res.argmax[oi] = best_idx;
            }
        }
    }
    return res;
}

Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_out) {
    require(argmax.size() == grad_out.size(), ErrorCode::Argument,
            "maxpool argmax map does not match grad_out");
    Tensor g = Tensor::zeros(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) g.data[argmax[i]] += grad_out.data[i];
    return g;
}

Tensor global_avg_pool(const Tensor& input) {
    expect_rank3(input, "global_avg_pool input");
    const int h = input.shape[0], w = input.shape[1], f = input.shape[2];
    Tensor out = Tensor::zeros({1, 1, f});
    for (int i = 0; i < h * w; ++i)
        for (int c = 0; c < f; ++c)
            out.data[static_cast<std::size_t>(c)] += input.data[static_cast<std::size_t>(i) * f + c];
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (double& v : out.data) v *= inv;
    return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
    const int h = input_shape[0], w = input_shape[1], f = input_shape[2];
    require(static_cast<int>(grad_out.size()) == f, ErrorCode::Argument,
            "global_avg_pool grad_out must have one entry per channel");
    Tensor g = Tensor::zeros(input_shape);
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int i = 0; i < h * w; ++i)
        for (int c = 0; c < f; ++c)
            g.data[static_cast<std::size_t>(i) * f + c] = grad_out.data[static_cast<std::size_t>(c)] * inv;
    return g;
}

Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
    require(input.size() == grad_out.size(), ErrorCode::Argument, "relu grad size mismatch");
    Tensor g = Tensor::zeros(input.shape);
    for (std::size_t i = 0; i < input.size(); ++i)
        g.data[i] = input.data[i] > 0.0 ? grad_out.data[i] : 0.0;
    return g;
}

std::vector<double> l2_normalize(const std::vector<double>& input, double epsilon) {
    require(epsilon > 0.0, ErrorCode::Argument, "l2_normalize epsilon must be positive");
    double sq = 0.0;
    for (double v : input) sq += v * v;
    const double norm = std::sqrt(sq);
    const double denom = std::max(norm, epsilon);
    std::vector<double> out(input.size());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] / denom;
    return out;
}

std::vector<double> l2_normalize_backward(const std::vector<double>& input,
                                          const std::vector<double>& grad_out, double epsilon) {
    require(input.size() == grad_out.size(), ErrorCode::Argument, "l2_normalize grad size mismatch");
    double sq = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < input.size(); ++i) {
        sq += input[i] * input[i];
        dot += input[i] * grad_out[i];
    }
    const double norm = std::sqrt(sq);
    std::vector<double> g(input.size());
    if (norm < epsilon) {
        // below the guard the map is linear: y = x / eps
        for (std::size_t i = 0; i < input.size(); ++i) g[i] = grad_out[i] / epsilon;
        return g;
    }
    const double inv = 1.0 / norm;
    const double inv3 = inv * inv * inv;
    for (std::size_t i = 0; i < input.size(); ++i)
        g[i] = grad_out[i] * inv - input[i] * dot * inv3;
    return g;
}

std::vector<double> fully_connected(const std::vector<double>& input, const Tensor& weights,
                                    const std::vector<double>& bias) {
    require(weights.shape.rank() == 2, ErrorCode::Argument, "fc weights must be F x K");
    const int f = weights.shape[0], k = weights.shape[1];
    require(static_cast<int>(input.size()) == f, ErrorCode::Argument,
            "fc input length " + std::to_string(input.size()) + " does not match weights " +
                weights.shape.str());
    require(static_cast<int>(bias.size()) == k, ErrorCode::Argument, "fc bias length mismatch");
    std::vector<double> out(bias);
    for (int i = 0; i < f; ++i) {
        const double x = input[static_cast<std::size_t>(i)];
        if (x == 0.0) continue;
        const double* row = &weights.data[static_cast<std::size_t>(i) * k];
        for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(j)] += x * row[j];
    }
    return out;
}

FcGrads fully_connected_backward(const std::vector<double>& input, const Tensor& weights,
                                 const std::vector<double>& grad_out) {
    const int f = weights.shape[0], k = weights.shape[1];
    require(static_cast<int>(grad_out.size()) == k, ErrorCode::Argument, "fc grad_out length mismatch");
    FcGrads g;
    g.input.assign(input.size(), 0.0);
    g.weights = Tensor::zeros(weights.shape);
    g.bias = grad_out;
    for (int i = 0; i < f; ++i) {
        const double* row = &weights.data[static_cast<std::size_t>(i) * k];
        double* wrow = &g.weights.data[static_cast<std::size_t>(i) * k];
        double acc = 0.0;
        for (int j = 0; j < k; ++j) {
            acc += row[j] * grad_out[static_cast<std::size_t>(j)];
            wrow[j] = input[static_cast<std::size_t>(i)] * grad_out[static_cast<std::size_t>(j)];
        }
        g.input[static_cast<std::size_t>(i)] = acc;
    }
    return g;
}

Tensor add_n(const std::vector<const Tensor*>& inputs) {
    require(!inputs.empty(), ErrorCode::Argument, "add_n needs at least one input");
    const Shape& s = inputs[0]->shape;
    for (const Tensor* t : inputs)
        require(t->shape == s, ErrorCode::Argument, "add_n shape mismatch: " + t->shape.str() +
                                                        " vs " + s.str());
    Tensor out = *inputs[0];
    for (std::size_t i = 1; i < inputs.size(); ++i)
        for (std::size_t j = 0; j < out.size(); ++j) out.data[j] += inputs[i]->data[j];
    return out;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    require(!logits.empty(), ErrorCode::Argument, "softmax of empty vector");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

SoftmaxLossResult softmax_cross_entropy(const std::vector<double>& logits, int label) {
    require(label >= 0 && label < static_cast<int>(logits.size()), ErrorCode::Argument,
            "label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                " classes");
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    SoftmaxLossResult res;
    res.loss = std::log(z) - (logits[static_cast<std::size_t>(label)] - m);
    res.grad_logits = softmax(logits);
    res.grad_logits[static_cast<std::size_t>(label)] -= 1.0;
    return res;
}

}  // namespace dagnet
