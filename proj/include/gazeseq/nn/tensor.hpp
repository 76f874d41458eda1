#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gazeseq/error.hpp"

namespace gazeseq::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatrixMap = Eigen::Map<Matrix<T>>;

template <typename T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

/// Dense NCHW activation tensor.
template <typename T>
struct Tensor4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

    std::size_t size() const { return data.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    bool empty() const { return data.empty(); }
    bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * sample_size(); }

    T& at(int ni, int ci, int y, int x) {
        return data[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
    }
    T at(int ni, int ci, int y, int x) const {
        return data[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
    }
};

/// A named tensor of model state. Non-trainable entries (batch-norm running
/// statistics) are persisted with the checkpoint but skipped by the optimizer.
template <typename T>
struct Parameter {
    std::string name;
    Matrix<T> value;
    Matrix<T> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, int rows, int cols, bool train = true)
        : name(std::move(n)), value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)),
          trainable(train) {}

    Eigen::Index size() const { return value.size(); }
    void zero_grad() { grad.setZero(); }
};

template <typename T>
using ParameterList = std::vector<Parameter<T>*>;

template <typename T>
inline void relu_inplace(std::vector<T>& v) {
    for (auto& x : v) x = x > T(0) ? x : T(0);
}

/// grad *= (activation > 0)
template <typename T>
inline void relu_backward_inplace(std::vector<T>& grad, const std::vector<T>& activation) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(activation[i] > T(0))) grad[i] = T(0);
    }
}

}  // namespace gazeseq::nn
