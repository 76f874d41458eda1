#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gazeseq/nn/tensor.hpp"

namespace gazeseq::nn {

/// Single-layer LSTM returning only the final hidden state (many-to-one).
///
/// Gate blocks along the 4H axis are ordered input, forget, cell candidate,
/// output:
///   i = sigm(x Wi^T + h Ui^T + bi)   f = sigm(...)   g = tanh(...)   o = sigm(...)
///   c' = f*c + i*g                   h' = o*tanh(c')
/// One bias vector per gate.
template <typename T>
class Lstm {
public:
    Lstm() = default;
    Lstm(const std::string& name, int input_size, int hidden_size)
        : w_ih(name + ".w_ih", 4 * hidden_size, input_size), w_hh(name + ".w_hh", 4 * hidden_size, hidden_size),
          bias(name + ".bias", 1, 4 * hidden_size), input_(input_size), hidden_(hidden_size) {}

    Parameter<T> w_ih;
    Parameter<T> w_hh;
    Parameter<T> bias;

    int input_size() const { return input_; }
    int hidden_size() const { return hidden_; }

    static Eigen::Index parameter_count(int input_size, int hidden_size) {
        return 4 * (static_cast<Eigen::Index>(input_size + hidden_size) * hidden_size + hidden_size);
    }

    /// `steps[t]` is the (batch, input) matrix of time step t.
    Matrix<T> forward(const std::vector<Matrix<T>>& steps, bool training) {
        if (steps.empty()) throw ShapeError("lstm: need at least one time step");
        const Eigen::Index batch = steps.front().rows();
        const int H = hidden_;
        for (const auto& x : steps) {
            if (x.cols() != input_ || x.rows() != batch) throw ShapeError("lstm: inconsistent step shapes");
        }
        Matrix<T> h = Matrix<T>::Zero(batch, H);
        Matrix<T> c = Matrix<T>::Zero(batch, H);
        if (training) {
            steps_ = steps;
            gates_.clear();
            cells_.assign(1, c);
            hiddens_.assign(1, h);
        }
        for (const auto& x : steps) {
            Matrix<T> z = x * w_ih.value.transpose() + h * w_hh.value.transpose();
            z.rowwise() += bias.value.row(0);
            auto sigm = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
            z.leftCols(2 * H) = z.leftCols(2 * H).unaryExpr(sigm);
            z.middleCols(2 * H, H) = z.middleCols(2 * H, H).array().tanh();
            z.rightCols(H) = z.rightCols(H).unaryExpr(sigm);
            c = z.middleCols(H, H).cwiseProduct(c) + z.leftCols(H).cwiseProduct(z.middleCols(2 * H, H));
            h = z.rightCols(H).cwiseProduct(Matrix<T>(c.array().tanh()));
            if (training) {
                gates_.push_back(std::move(z));
                cells_.push_back(c);
                hiddens_.push_back(h);
            }
        }
        return h;
    }

    /// Backpropagation through time from the gradient of the final hidden state.
    /// Returns the gradient with respect to every input step.
    std::vector<Matrix<T>> backward(const Matrix<T>& dh_last) {
        const int H = hidden_;
        const std::size_t s = gates_.size();
        if (s == 0) throw ShapeError("lstm: backward without a training forward pass");
        std::vector<Matrix<T>> dx(s);
        Matrix<T> dh = dh_last;
        Matrix<T> dc = Matrix<T>::Zero(dh.rows(), H);
        for (std::size_t t = s; t-- > 0;) {
            const Matrix<T>& z = gates_[t];
            const auto i = z.leftCols(H).array();
            const auto f = z.middleCols(H, H).array();
            const auto g = z.middleCols(2 * H, H).array();
            const auto o = z.rightCols(H).array();
            const Matrix<T> tanh_c = cells_[t + 1].array().tanh();
            dc.array() += dh.array() * o * (T(1) - tanh_c.array().square());

            Matrix<T> dz(dh.rows(), 4 * H);
            dz.leftCols(H).array() = dc.array() * g * i * (T(1) - i);
            dz.middleCols(H, H).array() = dc.array() * cells_[t].array() * f * (T(1) - f);
            dz.middleCols(2 * H, H).array() = dc.array() * i * (T(1) - g.square());
            dz.rightCols(H).array() = dh.array() * tanh_c.array() * o * (T(1) - o);

            w_ih.grad.noalias() += dz.transpose() * steps_[t];
            w_hh.grad.noalias() += dz.transpose() * hiddens_[t];
            bias.grad += dz.colwise().sum();
            dx[t] = dz * w_ih.value;
            dh = dz * w_hh.value;
            dc = (dc.array() * f).matrix();
        }
        return dx;
    }

    void collect(ParameterList<T>& out) {
        out.push_back(&w_ih);
        out.push_back(&w_hh);
        out.push_back(&bias);
    }
    void release() {
        steps_.clear();
        gates_.clear();
        cells_.clear();
        hiddens_.clear();
    }

private:
    int input_ = 0;
    int hidden_ = 0;
    std::vector<Matrix<T>> steps_;
    std::vector<Matrix<T>> gates_;    ///< post-activation gates per step
    std::vector<Matrix<T>> cells_;    ///< c_0 .. c_s
    std::vector<Matrix<T>> hiddens_;  ///< h_0 .. h_s
};

}  // namespace gazeseq::nn
