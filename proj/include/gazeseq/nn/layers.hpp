#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gazeseq/nn/tensor.hpp"

namespace gazeseq::nn {

namespace detail {

/// Output columns [lo, hi) whose input column ox * stride - pad + kj lies inside [0, w).
inline void valid_columns(int w, int wo, int stride, int pad, int kj, int& lo, int& hi) {
    const int off = kj - pad;
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    hi = w - off <= 0 ? 0 : std::min(wo, (w - off - 1) / stride + 1);
    if (hi < lo) hi = lo;
}

// Reductions over a fixed number of interleaved partial sums. The summation
// order depends only on n, never on pointer alignment, so results are
// reproducible bit for bit while still vectorizing.
inline constexpr std::size_t kLanes = 16;

template <typename T, typename F>
double lane_sum(const T* p, std::size_t n, F f) {
    T acc[kLanes] = {};
    std::size_t k = 0;
    for (; k + kLanes <= n; k += kLanes) {
        for (std::size_t j = 0; j < kLanes; ++j) acc[j] += f(p[k + j]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < kLanes; ++j) s += acc[j];
    for (; k < n; ++k) s += f(p[k]);
    return s;
}

template <typename T>
double lane_sum2(const T* a, const T* b, std::size_t n) {
    T acc[kLanes] = {};
    std::size_t k = 0;
    for (; k + kLanes <= n; k += kLanes) {
        for (std::size_t j = 0; j < kLanes; ++j) acc[j] += a[k + j] * b[k + j];
    }
    double s = 0.0;
    for (std::size_t j = 0; j < kLanes; ++j) s += acc[j];
    for (; k < n; ++k) s += a[k] * b[k];
    return s;
}

template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
    const int plane = ho * wo;
    for (int ci = 0; ci < c; ++ci) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* row = col + static_cast<std::ptrdiff_t>((ci * k + ki) * k + kj) * plane;
                int lo, hi;
                valid_columns(w, wo, stride, pad, kj, lo, hi);
                const int off = kj - pad;
                for (int oy = 0; oy < ho; ++oy) {
                    T* dst = row + oy * wo;
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<std::ptrdiff_t>(ci) * h + iy) * w;
                    std::fill(dst, dst + lo, T(0));
                    if (stride == 1) {
                        std::copy(src + lo + off, src + hi + off, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride + off];
                    }
                    std::fill(dst + hi, dst + wo, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
    const int plane = ho * wo;
    for (int ci = 0; ci < c; ++ci) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* row = col + static_cast<std::ptrdiff_t>((ci * k + ki) * k + kj) * plane;
                int lo, hi;
                valid_columns(w, wo, stride, pad, kj, lo, hi);
                const int off = kj - pad;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = row + oy * wo;
                    T* dst = x + (static_cast<std::ptrdiff_t>(ci) * h + iy) * w;
                    if (stride == 1) {
                        using Row = Eigen::Array<T, Eigen::Dynamic, 1>;
                        Eigen::Map<Row>(dst + lo + off, hi - lo) += Eigen::Map<const Row>(src + lo, hi - lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox * stride + off] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Bias-free 2D convolution (every convolution here is followed by batch norm).
template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad)
        : weight(name + ".weight", out_channels, in_channels * kernel * kernel),
          in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad) {}

    Parameter<T> weight;

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int kernel() const { return k_; }
    int fan_in() const { return in_ * k_ * k_; }
    int out_size(int size) const { return (size + 2 * pad_ - k_) / stride_ + 1; }

    Tensor4<T> forward(const Tensor4<T>& x, bool training) {
        if (x.c != in_) throw ShapeError("conv: expected " + std::to_string(in_) + " input channels");
        if (x.h <= 0 || x.w <= 0 || x.n <= 0) throw ShapeError("conv: empty input");
        const int ho = out_size(x.h);
        const int wo = out_size(x.w);
        if (ho <= 0 || wo <= 0) throw ShapeError("conv: input smaller than kernel");
        Tensor4<T> y(x.n, out_, ho, wo);
        const int rows = fan_in();
        col_.resize(static_cast<std::size_t>(rows) * ho * wo);
        ConstMatrixMap<T> wmat(weight.value.data(), out_, rows);
        for (int i = 0; i < x.n; ++i) {
            const T* src = x.sample(i);
            if (k_ == 1 && stride_ == 1 && pad_ == 0) {
                MatrixMap<T>(y.sample(i), out_, ho * wo).noalias() = wmat * ConstMatrixMap<T>(src, rows, ho * wo);
                continue;
            }
            detail::im2col(src, x.c, x.h, x.w, k_, stride_, pad_, ho, wo, col_.data());
            MatrixMap<T>(y.sample(i), out_, ho * wo).noalias() = wmat * ConstMatrixMap<T>(col_.data(), rows, ho * wo);
        }
        if (training) input_ = x;
        return y;
    }

    /// Accumulates the weight gradient; returns the input gradient when requested.
    Tensor4<T> backward(const Tensor4<T>& dy, bool need_input_grad) {
        const Tensor4<T>& x = input_;
        if (x.empty()) throw ShapeError("conv: backward without a training forward pass");
        const int ho = dy.h;
        const int wo = dy.w;
        const int rows = fan_in();
        Tensor4<T> dx;
        if (need_input_grad) dx = Tensor4<T>(x.n, x.c, x.h, x.w);
        col_.resize(static_cast<std::size_t>(rows) * ho * wo);
        ConstMatrixMap<T> wmat(weight.value.data(), out_, rows);
        for (int i = 0; i < x.n; ++i) {
            ConstMatrixMap<T> g(dy.sample(i), out_, ho * wo);
            detail::im2col(x.sample(i), x.c, x.h, x.w, k_, stride_, pad_, ho, wo, col_.data());
            weight.grad.noalias() += g * ConstMatrixMap<T>(col_.data(), rows, ho * wo).transpose();
            if (need_input_grad) {
                MatrixMap<T>(col_.data(), rows, ho * wo).noalias() = wmat.transpose() * g;
                detail::col2im_add(col_.data(), x.c, x.h, x.w, k_, stride_, pad_, ho, wo, dx.sample(i));
            }
        }
        return dx;
    }

    void collect(ParameterList<T>& out) { out.push_back(&weight); }
    void release() { input_ = Tensor4<T>(); }

private:
    int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
    Tensor4<T> input_;
    std::vector<T> col_;
};

/// Per-channel batch normalization over (N, H, W).
template <typename T>
class BatchNorm2d {
public:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    BatchNorm2d() = default;
    BatchNorm2d(const std::string& name, int channels)
        : gamma(name + ".gamma", 1, channels), beta(name + ".beta", 1, channels),
          running_mean(name + ".running_mean", 1, channels, false),
          running_var(name + ".running_var", 1, channels, false), channels_(channels) {
        gamma.value.setOnes();
        running_var.value.setOnes();
    }

    Parameter<T> gamma;
    Parameter<T> beta;
    Parameter<T> running_mean;
    Parameter<T> running_var;

    Tensor4<T> forward(const Tensor4<T>& x, bool training) {
        if (x.c != channels_) throw ShapeError("batchnorm: channel mismatch");
        Tensor4<T> y(x.n, x.c, x.h, x.w);
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        const double count = static_cast<double>(x.n) * static_cast<double>(plane);
        if (training) {
            xhat_ = Tensor4<T>(x.n, x.c, x.h, x.w);
            inv_std_.assign(static_cast<std::size_t>(channels_), T(0));
        }
        for (int c = 0; c < channels_; ++c) {
            T mean;
            T inv_std;
            if (training) {
                double sum = 0.0;
                for (int i = 0; i < x.n; ++i) {
                    sum += detail::lane_sum(x.sample(i) + c * plane, plane, [](T v) { return v; });
                }
                const double m = sum / count;
                const T mt = static_cast<T>(m);
                double ss = 0.0;
                for (int i = 0; i < x.n; ++i) {
                    ss += detail::lane_sum(x.sample(i) + c * plane, plane, [mt](T v) { return (v - mt) * (v - mt); });
                }
                const double var = ss / count;
                mean = static_cast<T>(m);
                inv_std = static_cast<T>(1.0 / std::sqrt(var + kEps));
                inv_std_[static_cast<std::size_t>(c)] = inv_std;
                const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
                running_mean.value(0, c) =
                    static_cast<T>((1.0 - kMomentum) * running_mean.value(0, c) + kMomentum * m);
                running_var.value(0, c) =
                    static_cast<T>((1.0 - kMomentum) * running_var.value(0, c) + kMomentum * unbiased);
            } else {
                mean = running_mean.value(0, c);
                inv_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.value(0, c)) + kEps));
            }
            const T g = gamma.value(0, c);
            const T b = beta.value(0, c);
            for (int i = 0; i < x.n; ++i) {
                const T* p = x.sample(i) + c * plane;
                T* q = y.sample(i) + c * plane;
                T* h = training ? xhat_.sample(i) + c * plane : nullptr;
                for (std::size_t k = 0; k < plane; ++k) {
                    const T xh = (p[k] - mean) * inv_std;
                    if (h) h[k] = xh;
                    q[k] = g * xh + b;
                }
            }
        }
        return y;
    }

    Tensor4<T> backward(const Tensor4<T>& dy) {
        if (xhat_.empty()) throw ShapeError("batchnorm: backward without a training forward pass");
        Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
        const std::size_t plane = static_cast<std::size_t>(dy.h) * dy.w;
        const double count = static_cast<double>(dy.n) * static_cast<double>(plane);
        for (int c = 0; c < channels_; ++c) {
            double sum_dy = 0.0;
            double sum_dy_xhat = 0.0;
            for (int i = 0; i < dy.n; ++i) {
                const T* g = dy.sample(i) + c * plane;
                const T* h = xhat_.sample(i) + c * plane;
                sum_dy += detail::lane_sum(g, plane, [](T v) { return v; });
                sum_dy_xhat += detail::lane_sum2(g, h, plane);
            }
            gamma.grad(0, c) += static_cast<T>(sum_dy_xhat);
            beta.grad(0, c) += static_cast<T>(sum_dy);
            const T scale = gamma.value(0, c) * inv_std_[static_cast<std::size_t>(c)];
            const T mean_dy = static_cast<T>(sum_dy / count);
            const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
            for (int i = 0; i < dy.n; ++i) {
                const T* g = dy.sample(i) + c * plane;
                const T* h = xhat_.sample(i) + c * plane;
                T* d = dx.sample(i) + c * plane;
                for (std::size_t k = 0; k < plane; ++k) d[k] = scale * (g[k] - mean_dy - h[k] * mean_dy_xhat);
            }
        }
        return dx;
    }

    void collect(ParameterList<T>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
        out.push_back(&running_mean);
        out.push_back(&running_var);
    }
    void release() { xhat_ = Tensor4<T>(); }

private:
    int channels_ = 0;
    Tensor4<T> xhat_;
    std::vector<T> inv_std_;
};

/// Adaptive average pooling to a fixed grid, flattened to (N, C*out_h*out_w).
/// Bin i spans [floor(i*H/out_h), ceil((i+1)*H/out_h)), so inputs smaller than
/// the grid are replicated.
template <typename T>
class AdaptiveAvgPool {
public:
    AdaptiveAvgPool() = default;
    AdaptiveAvgPool(int out_h, int out_w) : oh_(out_h), ow_(out_w) {}

    int out_h() const { return oh_; }
    int out_w() const { return ow_; }

    static int bin_start(int i, int in, int out) { return (i * in) / out; }
    static int bin_end(int i, int in, int out) { return ((i + 1) * in + out - 1) / out; }

    Matrix<T> forward(const Tensor4<T>& x) {
        in_n_ = x.n;
        in_c_ = x.c;
        in_h_ = x.h;
        in_w_ = x.w;
        Matrix<T> y(x.n, x.c * oh_ * ow_);
        for (int i = 0; i < x.n; ++i) {
            for (int c = 0; c < x.c; ++c) {
                for (int by = 0; by < oh_; ++by) {
                    const int y0 = bin_start(by, x.h, oh_), y1 = bin_end(by, x.h, oh_);
                    for (int bx = 0; bx < ow_; ++bx) {
                        const int x0 = bin_start(bx, x.w, ow_), x1 = bin_end(bx, x.w, ow_);
                        T sum = 0;
                        for (int yy = y0; yy < y1; ++yy) {
                            for (int xx = x0; xx < x1; ++xx) sum += x.at(i, c, yy, xx);
                        }
                        y(i, (c * oh_ + by) * ow_ + bx) = sum / static_cast<T>((y1 - y0) * (x1 - x0));
                    }
                }
            }
        }
        return y;
    }

    Tensor4<T> backward(const Matrix<T>& dy) const {
        Tensor4<T> dx(in_n_, in_c_, in_h_, in_w_);
        for (int i = 0; i < in_n_; ++i) {
            for (int c = 0; c < in_c_; ++c) {
                for (int by = 0; by < oh_; ++by) {
                    const int y0 = bin_start(by, in_h_, oh_), y1 = bin_end(by, in_h_, oh_);
                    for (int bx = 0; bx < ow_; ++bx) {
                        const int x0 = bin_start(bx, in_w_, ow_), x1 = bin_end(bx, in_w_, ow_);
                        const T g = dy(i, (c * oh_ + by) * ow_ + bx) / static_cast<T>((y1 - y0) * (x1 - x0));
                        for (int yy = y0; yy < y1; ++yy) {
                            for (int xx = x0; xx < x1; ++xx) dx.at(i, c, yy, xx) += g;
                        }
                    }
                }
            }
        }
        return dx;
    }

private:
    int oh_ = 1, ow_ = 1;
    int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

/// Fully connected layer y = x W^T + b on row-major (batch, features) matrices.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in, int out)
        : weight(name + ".weight", out, in), bias(name + ".bias", 1, out) {}

    Parameter<T> weight;
    Parameter<T> bias;

    int in_features() const { return static_cast<int>(weight.value.cols()); }
    int out_features() const { return static_cast<int>(weight.value.rows()); }

    Matrix<T> forward(const Matrix<T>& x, bool training) {
        if (x.cols() != weight.value.cols()) {
            throw ShapeError("linear: expected " + std::to_string(weight.value.cols()) + " input features, got " +
                             std::to_string(x.cols()));
        }
        if (training) input_ = x;
        Matrix<T> y = x * weight.value.transpose();
        y.rowwise() += bias.value.row(0);
        return y;
    }

    Matrix<T> backward(const Matrix<T>& dy) {
        weight.grad.noalias() += dy.transpose() * input_;
        bias.grad += dy.colwise().sum();
        return dy * weight.value;
    }

    void collect(ParameterList<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
    void release() { input_ = Matrix<T>(); }

private:
    Matrix<T> input_;
};

/// Stack of fully connected layers with ReLU between them (linear output).
template <typename T>
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::string& name, const std::vector<int>& sizes) {
        for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
            layers_.emplace_back(name + ".fc" + std::to_string(i + 1), sizes[i], sizes[i + 1]);
        }
    }

    std::vector<Linear<T>>& layers() { return layers_; }
    const std::vector<Linear<T>>& layers() const { return layers_; }

    Matrix<T> forward(const Matrix<T>& x, bool training) {
        Matrix<T> h = x;
        activations_.clear();
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i].forward(h, training);
            if (i + 1 < layers_.size()) {
                h = h.cwiseMax(T(0));
                if (training) activations_.push_back(h);
            }
        }
        return h;
    }

    Matrix<T> backward(const Matrix<T>& dy) {
        Matrix<T> g = dy;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            if (i + 1 < layers_.size()) g = (activations_[i].array() > T(0)).select(g, T(0));
            g = layers_[i].backward(g);
        }
        return g;
    }

    void collect(ParameterList<T>& out) {
        for (auto& l : layers_) l.collect(out);
    }
    void release() {
        activations_.clear();
        for (auto& l : layers_) l.release();
    }

private:
    std::vector<Linear<T>> layers_;
    std::vector<Matrix<T>> activations_;
};

}  // namespace gazeseq::nn
