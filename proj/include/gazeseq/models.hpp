#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/QR>

#include "gazeseq/error.hpp"
#include "gazeseq/nn/layers.hpp"
#include "gazeseq/nn/lstm.hpp"
#include "gazeseq/nn/tensor.hpp"
#include "gazeseq/rng.hpp"

namespace gazeseq {

enum class ModelKind { kStatic1, kStatic2, kS1Lstm };

inline std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::kStatic1: return "STATIC1";
        case ModelKind::kStatic2: return "STATIC2";
        case ModelKind::kS1Lstm: return "S1_LSTM";
    }
    return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
    if (s == "STATIC1") return ModelKind::kStatic1;
    if (s == "STATIC2") return ModelKind::kStatic2;
    if (s == "S1_LSTM") return ModelKind::kS1Lstm;
    throw InvalidInput("unknown model variant '" + std::string(s) + "'");
}

struct ModelVariant {
    ModelKind kind = ModelKind::kStatic1;
    int window = 1;

    bool temporal() const { return kind == ModelKind::kS1Lstm; }
    std::string label() const {
        switch (kind) {
            case ModelKind::kStatic1: return "Static1";
            case ModelKind::kStatic2: return "Static2";
            case ModelKind::kS1Lstm: return "S1+LSTM" + std::to_string(window);
        }
        return "?";
    }
};

inline void validate(const ModelVariant& v) {
    if (v.window < 1) throw InvalidInput("model window must be >= 1");
    if (!v.temporal() && v.window != 1) throw InvalidInput("static variants use window 1");
}

/// Layer sizes. The defaults are the full-size network: stem 3x3/16/stride 2,
/// three stages of two basic blocks with 16/32/64 channels (first-block strides
/// 1/2/2), pooling to 4x4, a 32-unit LSTM and 32-unit FC heads.
struct ModelDims {
    int in_channels = 1;
    int stem_channels = 16;
    std::array<int, 3> stage_channels{16, 32, 64};
    std::array<int, 3> stage_strides{1, 2, 2};
    int blocks_per_stage = 2;
    int pool_h = 4;
    int pool_w = 4;
    int lstm_hidden = 32;
    int fc_hidden = 32;
    int static2_hidden = 128;

    int feature_size() const { return stage_channels[2] * pool_h * pool_w; }

    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Indices into a frame batch: row b lists the s frames of window b in time order.
using WindowIndex = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Identity windows of length 1 over n frames.
inline WindowIndex single_frame_windows(int n) {
    WindowIndex w(n, 1);
    for (int i = 0; i < n; ++i) w(i, 0) = i;
    return w;
}

/// Contiguous windows: frames are laid out window-major, b*s + t.
inline WindowIndex contiguous_windows(int batch, int s) {
    WindowIndex w(batch, s);
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < s; ++t) w(b, t) = b * s + t;
    }
    return w;
}

template <typename T>
class BasicBlock {
public:
    BasicBlock() = default;
    BasicBlock(const std::string& name, int in, int out, int stride)
        : conv1_(name + ".conv1", in, out, 3, stride, 1), bn1_(name + ".bn1", out),
          conv2_(name + ".conv2", out, out, 3, 1, 1), bn2_(name + ".bn2", out) {
        if (stride != 1 || in != out) {
            proj_conv_.emplace(name + ".proj", in, out, 1, stride, 0);
            proj_bn_.emplace(name + ".proj_bn", out);
        }
    }

    bool has_projection() const { return proj_conv_.has_value(); }

    nn::Tensor4<T> forward(const nn::Tensor4<T>& x, bool training) {
        nn::Tensor4<T> a = bn1_.forward(conv1_.forward(x, training), training);
        nn::relu_inplace(a.data);
        nn::Tensor4<T> out = bn2_.forward(conv2_.forward(a, training), training);
        if (proj_conv_) {
            const nn::Tensor4<T> s = proj_bn_->forward(proj_conv_->forward(x, training), training);
            for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += s.data[i];
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += x.data[i];
        }
        nn::relu_inplace(out.data);
        if (training) {
            mid_ = a;
            out_ = out;
        }
        return out;
    }

    nn::Tensor4<T> backward(nn::Tensor4<T> dout, bool need_input_grad) {
        nn::relu_backward_inplace(dout.data, out_.data);
        nn::Tensor4<T> da = conv2_.backward(bn2_.backward(dout), true);
        nn::relu_backward_inplace(da.data, mid_.data);
        nn::Tensor4<T> dx = conv1_.backward(bn1_.backward(da), need_input_grad);
        if (need_input_grad) {
            if (proj_conv_) {
                const nn::Tensor4<T> ds = proj_conv_->backward(proj_bn_->backward(dout), true);
                for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
            } else {
                for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dout.data[i];
            }
        } else if (proj_conv_) {
            proj_conv_->backward(proj_bn_->backward(dout), false);
        }
        return dx;
    }

    void collect(nn::ParameterList<T>& out) {
        conv1_.collect(out);
        bn1_.collect(out);
        conv2_.collect(out);
        bn2_.collect(out);
        if (proj_conv_) {
            proj_conv_->collect(out);
            proj_bn_->collect(out);
        }
    }

    void collect_convs(std::vector<nn::Conv2d<T>*>& out, bool include_projection) {
        out.push_back(&conv1_);
        out.push_back(&conv2_);
        if (include_projection && proj_conv_) out.push_back(&*proj_conv_);
    }

    void release() {
        conv1_.release();
        conv2_.release();
        bn1_.release();
        bn2_.release();
        if (proj_conv_) {
            proj_conv_->release();
            proj_bn_->release();
        }
        mid_ = {};
        out_ = {};
    }

private:
    nn::Conv2d<T> conv1_;
    nn::BatchNorm2d<T> bn1_;
    nn::Conv2d<T> conv2_;
    nn::BatchNorm2d<T> bn2_;
    std::optional<nn::Conv2d<T>> proj_conv_;
    std::optional<nn::BatchNorm2d<T>> proj_bn_;
    nn::Tensor4<T> mid_;
    nn::Tensor4<T> out_;
};

/// Residual CNN mapping (N, C, H, W) images to (N, feature_size) vectors.
template <typename T>
class Backbone {
public:
    using Matrix = nn::Matrix<T>;

    Backbone() = default;
    explicit Backbone(const ModelDims& d)
        : stem_conv_("backbone.stem.conv", d.in_channels, d.stem_channels, 3, 2, 1),
          stem_bn_("backbone.stem.bn", d.stem_channels), pool_(d.pool_h, d.pool_w), dims_(d) {
        int in = d.stem_channels;
        for (int s = 0; s < 3; ++s) {
            for (int b = 0; b < d.blocks_per_stage; ++b) {
                const std::string name = "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
                blocks_.emplace_back(name, in, d.stage_channels[s], b == 0 ? d.stage_strides[s] : 1);
                in = d.stage_channels[s];
            }
        }
    }

    int feature_size() const { return dims_.feature_size(); }

    Matrix forward(const nn::Tensor4<T>& x, bool training) {
        if (x.c != dims_.in_channels) {
            throw ShapeError("backbone: expected " + std::to_string(dims_.in_channels) + " channel input");
        }
        if (x.n <= 0 || x.h <= 0 || x.w <= 0) throw ShapeError("backbone: empty input");
        nn::Tensor4<T> h = stem_bn_.forward(stem_conv_.forward(x, training), training);
        nn::relu_inplace(h.data);
        if (training) stem_out_ = h;
        for (auto& b : blocks_) h = b.forward(h, training);
        return pool_.forward(h);
    }

    nn::Tensor4<T> backward(const nn::Matrix<T>& dfeatures, bool need_input_grad) {
        nn::Tensor4<T> g = pool_.backward(dfeatures);
        for (std::size_t i = blocks_.size(); i-- > 0;) g = blocks_[i].backward(std::move(g), true);
        nn::relu_backward_inplace(g.data, stem_out_.data);
        return stem_conv_.backward(stem_bn_.backward(g), need_input_grad);
    }

    void collect(nn::ParameterList<T>& out) {
        stem_conv_.collect(out);
        stem_bn_.collect(out);
        for (auto& b : blocks_) b.collect(out);
    }

    /// 3x3 convolutions (stem + two per block); 1x1 projections only on request.
    std::vector<nn::Conv2d<T>*> convolutions(bool include_projection = false) {
        std::vector<nn::Conv2d<T>*> out{&stem_conv_};
        for (auto& b : blocks_) b.collect_convs(out, include_projection);
        return out;
    }

    void release() {
        stem_conv_.release();
        stem_bn_.release();
        for (auto& b : blocks_) b.release();
        stem_out_ = {};
    }

private:
    nn::Conv2d<T> stem_conv_;
    nn::BatchNorm2d<T> stem_bn_;
    std::vector<BasicBlock<T>> blocks_;
    nn::AdaptiveAvgPool<T> pool_;
    ModelDims dims_;
    nn::Tensor4<T> stem_out_;
};

/// Backbone + (optional LSTM) + regression head producing (yaw, pitch) in degrees.
///
/// STATIC1: FC F->32, ReLU, FC 32->2.
/// STATIC2: FC F->32, ReLU, FC 32->128, ReLU, FC 128->2.
/// S1_LSTM: LSTM F->32 over the window, FC 32->32, ReLU, FC 32->2.
template <typename T>
class GazeModel {
public:
    using Matrix = nn::Matrix<T>;

    GazeModel(ModelVariant variant, ModelDims dims = {}) : variant_(variant), dims_(dims), backbone_(dims) {
        validate(variant);
        const int f = dims.feature_size();
        switch (variant.kind) {
            case ModelKind::kStatic1: head_ = nn::Mlp<T>("head", {f, dims.fc_hidden, 2}); break;
            case ModelKind::kStatic2:
                head_ = nn::Mlp<T>("head", {f, dims.fc_hidden, dims.static2_hidden, 2});
                break;
            case ModelKind::kS1Lstm:
                lstm_.emplace("lstm", f, dims.lstm_hidden);
                head_ = nn::Mlp<T>("head", {dims.lstm_hidden, dims.fc_hidden, 2});
                break;
        }
    }

    const ModelVariant& variant() const { return variant_; }
    const ModelDims& dims() const { return dims_; }
    Backbone<T>& backbone() { return backbone_; }
    nn::Mlp<T>& head() { return head_; }
    nn::Lstm<T>* lstm() { return lstm_ ? &*lstm_ : nullptr; }

    /// Per-frame feature vectors (N, feature_size).
    Matrix features(const nn::Tensor4<T>& frames, bool training) { return backbone_.forward(frames, training); }

    /// Regression from precomputed features. Row b of `windows` indexes the
    /// rows of `features` forming window b; static variants take width-1 windows.
    Matrix forward_from_features(const Matrix& features, const WindowIndex& windows, bool training) {
        check_windows(windows, features.rows());
        training_windows_ = windows;
        n_frames_ = features.rows();
        if (!lstm_) return head_.forward(gather(features, windows, 0), training);
        std::vector<Matrix> steps;
        for (Eigen::Index t = 0; t < windows.cols(); ++t) steps.push_back(gather(features, windows, t));
        return head_.forward(lstm_->forward(steps, training), training);
    }

    Matrix forward(const nn::Tensor4<T>& frames, const WindowIndex& windows, bool training) {
        return forward_from_features(features(frames, training), windows, training);
    }

    /// Backpropagates d(loss)/d(output) through the whole network, accumulating
    /// parameter gradients. Returns the input-image gradient when requested.
    nn::Tensor4<T> backward(const Matrix& dout, bool need_input_grad = false) {
        const Matrix dhead = head_.backward(dout);
        Matrix dfeat = Matrix::Zero(n_frames_, dims_.feature_size());
        if (!lstm_) {
            scatter_add(dfeat, training_windows_, 0, dhead);
        } else {
            const auto dsteps = lstm_->backward(dhead);
            for (Eigen::Index t = 0; t < training_windows_.cols(); ++t) {
                scatter_add(dfeat, training_windows_, t, dsteps[static_cast<std::size_t>(t)]);
            }
        }
        return backbone_.backward(dfeat, need_input_grad);
    }

    nn::ParameterList<T> parameters() {
        nn::ParameterList<T> out;
        backbone_.collect(out);
        if (lstm_) lstm_->collect(out);
        head_.collect(out);
        return out;
    }

    /// Backbone state only (used to transfer stage-1 weights).
    nn::ParameterList<T> backbone_parameters() {
        nn::ParameterList<T> out;
        backbone_.collect(out);
        return out;
    }

    Eigen::Index trainable_parameter_count() {
        Eigen::Index n = 0;
        for (auto* p : parameters()) {
            if (p->trainable) n += p->size();
        }
        return n;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    /// Drops activations cached for backpropagation.
    void release() {
        backbone_.release();
        if (lstm_) lstm_->release();
        head_.release();
    }

private:
    void check_windows(const WindowIndex& windows, Eigen::Index n_frames) const {
        if (windows.rows() < 1 || windows.cols() < 1) throw ShapeError("model: empty window index");
        if (windows.cols() != variant_.window) {
            throw ShapeError("model: window length " + std::to_string(windows.cols()) + " does not match variant " +
                             std::to_string(variant_.window));
        }
        if (windows.minCoeff() < 0 || windows.maxCoeff() >= n_frames) throw ShapeError("model: window index out of range");
    }

    static Matrix gather(const Matrix& features, const WindowIndex& windows, Eigen::Index t) {
        Matrix out(windows.rows(), features.cols());
        for (Eigen::Index b = 0; b < windows.rows(); ++b) out.row(b) = features.row(windows(b, t));
        return out;
    }

    static void scatter_add(Matrix& dfeat, const WindowIndex& windows, Eigen::Index t, const Matrix& g) {
        for (Eigen::Index b = 0; b < windows.rows(); ++b) dfeat.row(windows(b, t)) += g.row(b);
    }

    ModelVariant variant_;
    ModelDims dims_;
    Backbone<T> backbone_;
    std::optional<nn::Lstm<T>> lstm_;
    nn::Mlp<T> head_;
    WindowIndex training_windows_;
    Eigen::Index n_frames_ = 0;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void fill_uniform(nn::Matrix<T>& m, double bound, Rng& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
}

/// Orthogonal matrix from the QR factorization of a Gaussian matrix; columns
/// are sign-corrected by diag(R) so the result is unique for a given draw.
inline Eigen::MatrixXd random_orthogonal(int n, Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j) {
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    }
    return q;
}

template <typename T>
void init_linear(nn::Linear<T>& l, Rng& rng) {
    fill_uniform(l.weight.value, 1.0 / std::sqrt(static_cast<double>(l.in_features())), rng);
    l.bias.value.setZero();
}

template <typename T>
void init_lstm(nn::Lstm<T>& lstm, Rng& rng) {
    const int H = lstm.hidden_size();
    const int D = lstm.input_size();
    const double xavier = std::sqrt(6.0 / static_cast<double>(D + H));
    for (int gate = 0; gate < 4; ++gate) {
        nn::Matrix<T> block(H, D);
        fill_uniform(block, xavier, rng);
        lstm.w_ih.value.middleRows(gate * H, H) = block;
    }
    for (int gate = 0; gate < 4; ++gate) {
        lstm.w_hh.value.middleRows(gate * H, H) = random_orthogonal(H, rng).cast<T>();
    }
    lstm.bias.value.setZero();
}

}  // namespace detail

/// Conv and FC weights ~ U(+-1/sqrt(fan_in)); LSTM input weights Xavier
/// uniform and recurrent weights orthogonal, per gate block; biases zero;
/// batch-norm scale one, shift zero.
template <typename T>
void init_backbone(GazeModel<T>& model, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {tag(SeedStream::kInit), 1}));
    for (auto* conv : model.backbone().convolutions(true)) {
        detail::fill_uniform(conv->weight.value, 1.0 / std::sqrt(static_cast<double>(conv->fan_in())), rng);
    }
    for (auto* p : model.backbone_parameters()) {
        const std::string& n = p->name;
        if (n.ends_with(".gamma") || n.ends_with(".running_var")) p->value.setOnes();
        if (n.ends_with(".beta") || n.ends_with(".running_mean")) p->value.setZero();
    }
}

template <typename T>
void init_head(GazeModel<T>& model, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {tag(SeedStream::kInit), 2}));
    if (auto* lstm = model.lstm()) detail::init_lstm(*lstm, rng);
    for (auto& l : model.head().layers()) detail::init_linear(l, rng);
}

template <typename T = float>
GazeModel<T> init_parameters(ModelVariant variant, std::uint64_t seed, const ModelDims& dims = {}) {
    GazeModel<T> model(variant, dims);
    init_backbone(model, seed);
    init_head(model, seed);
    model.zero_grad();
    return model;
}

inline Eigen::Index count_parameters(ModelVariant variant, const ModelDims& dims = {}) {
    GazeModel<float> model(variant, dims);
    return model.trainable_parameter_count();
}

// ---------------------------------------------------------------------------
// Image conversion
// ---------------------------------------------------------------------------

/// Packs 8-bit frames into an (N, 1, rows, cols) tensor scaled to [0, 1].
template <typename T, typename FrameRange>
nn::Tensor4<T> frames_to_tensor(const FrameRange& frames) {
    const auto n = static_cast<int>(std::size(frames));
    if (n == 0) throw ShapeError("frames_to_tensor: no frames");
    const auto& first = *std::begin(frames);
    nn::Tensor4<T> x(n, 1, first.rows, first.cols);
    int i = 0;
    for (const auto& f : frames) {
        if (f.rows != x.h || f.cols != x.w) throw ShapeError("frames_to_tensor: frame sizes differ");
        T* dst = x.sample(i++);
        for (std::size_t k = 0; k < f.pixels.size(); ++k) dst[k] = static_cast<T>(f.pixels[k]) / T(255);
    }
    return x;
}

}  // namespace gazeseq
