#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <tuple>
#include <vector>

#include "gazeseq/models.hpp"
#include "gazeseq/render.hpp"

using namespace gazeseq;

namespace {

ModelDims tiny_dims() {
    ModelDims d;
    d.stem_channels = 2;
    d.stage_channels = {2, 3, 4};
    d.blocks_per_stage = 1;
    d.pool_h = 2;
    d.pool_w = 2;
    d.lstm_hidden = 3;
    d.fc_hidden = 3;
    d.static2_hidden = 4;
    return d;
}

template <typename T>
nn::Tensor4<T> random_images(int n, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nn::Tensor4<T> x(n, 1, h, w);
    for (auto& v : x.data) v = static_cast<T>(u(rng));
    return x;
}

/// Windows of length s at stride 1 over n frames.
WindowIndex sliding(int n, int s) {
    WindowIndex w(n - s + 1, s);
    for (int b = 0; b < n - s + 1; ++b) {
        for (int t = 0; t < s; ++t) w(b, t) = b + t;
    }
    return w;
}

/// Weighted sum of outputs; the weights make every output coordinate matter.
double objective(const nn::Matrix<double>& out, const nn::Matrix<double>& weights) {
    return out.cwiseProduct(weights).sum();
}

}  // namespace

TEST(Models, VariantValidation) {
    EXPECT_THROW(GazeModel<float>({ModelKind::kStatic1, 3}), InvalidInput);
    EXPECT_THROW(GazeModel<float>({ModelKind::kS1Lstm, 0}), InvalidInput);
    EXPECT_EQ(parse_model_kind("S1_LSTM"), ModelKind::kS1Lstm);
    EXPECT_THROW(parse_model_kind("LSTM"), InvalidInput);
    EXPECT_EQ((ModelVariant{ModelKind::kS1Lstm, 15}).label(), "S1+LSTM15");
}

TEST(Models, FeatureShapeIndependentOfInputSize) {
    auto model = init_parameters<float>({ModelKind::kStatic1, 1}, 1);
    EXPECT_EQ(model.features(random_images<float>(2, 100, 160, 1), false).cols(), 1024);
    const auto f = model.features(random_images<float>(3, 112, 176, 2), false);
    EXPECT_EQ(f.rows(), 3);
    EXPECT_EQ(f.cols(), 1024);
}

TEST(Models, OutputShapes) {
    auto s1 = init_parameters<float>({ModelKind::kStatic1, 1}, 1);
    const auto x = random_images<float>(4, 100, 160, 3);
    const auto y = s1.forward(x, single_frame_windows(4), false);
    EXPECT_EQ(y.rows(), 4);
    EXPECT_EQ(y.cols(), 2);

    auto lstm = init_parameters<float>({ModelKind::kS1Lstm, 2}, 1);
    const auto z = lstm.forward(x, contiguous_windows(2, 2), false);
    EXPECT_EQ(z.rows(), 2);
    EXPECT_EQ(z.cols(), 2);
    EXPECT_THROW(lstm.forward(x, single_frame_windows(4), false), ShapeError);
    WindowIndex bad(1, 2);
    bad << 0, 9;
    EXPECT_THROW(lstm.forward(x, bad, false), ShapeError);
}

TEST(Models, ParameterCountDifferences) {
    const auto s1 = count_parameters({ModelKind::kStatic1, 1});
    const auto s2 = count_parameters({ModelKind::kStatic2, 1});
    const auto l5 = count_parameters({ModelKind::kS1Lstm, 5});
    EXPECT_EQ(s2 - s1, 32 * 128 + 128 + 128 * 2 + 2 - (32 * 2 + 2));
    EXPECT_EQ(s2 - s1, 4416);
    EXPECT_EQ(nn::Lstm<float>::parameter_count(1024, 32), 135296);
    EXPECT_EQ(l5 - s1, 103552);
    for (int s : {1, 10, 20}) EXPECT_EQ(count_parameters({ModelKind::kS1Lstm, s}), l5);
}

TEST(Models, ThirteenThreeByThreeConvolutions) {
    GazeModel<float> m({ModelKind::kStatic1, 1});
    const auto convs = m.backbone().convolutions();
    EXPECT_EQ(convs.size(), 13u);
    for (auto* c : convs) EXPECT_EQ(c->kernel(), 3);
    EXPECT_EQ(m.backbone().convolutions(true).size(), 15u);
}

TEST(Models, ZeroWeightsGiveZeroOutput) {
    for (ModelKind kind : {ModelKind::kStatic1, ModelKind::kStatic2, ModelKind::kS1Lstm}) {
        const int s = kind == ModelKind::kS1Lstm ? 3 : 1;
        GazeModel<float> m({kind, s});
        for (auto* p : m.parameters()) p->value.setZero();
        const auto y = m.forward(random_images<float>(3, 100, 160, 5), contiguous_windows(3 / s, s), false);
        EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0f);
    }
}

TEST(Lstm, MatchesScalarOracle) {
    nn::Lstm<double> lstm("l", 2, 2);
    Rng rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto* p : {&lstm.w_ih, &lstm.w_hh, &lstm.bias}) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
    }
    std::vector<nn::Matrix<double>> steps(3, nn::Matrix<double>(1, 2));
    for (auto& x : steps) x << u(rng), u(rng);

    auto sigm = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    double h[2] = {0, 0}, c[2] = {0, 0};
    for (const auto& x : steps) {
        double z[8];
        for (int r = 0; r < 8; ++r) {
            z[r] = lstm.bias.value(0, r);
            for (int k = 0; k < 2; ++k) z[r] += lstm.w_ih.value(r, k) * x(0, k) + lstm.w_hh.value(r, k) * h[k];
        }
        for (int j = 0; j < 2; ++j) {
            const double i = sigm(z[j]), f = sigm(z[2 + j]), g = std::tanh(z[4 + j]), o = sigm(z[6 + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * std::tanh(c[j]);
        }
    }
    const auto out = lstm.forward(steps, false);
    EXPECT_NEAR(out(0, 0), h[0], 1e-12);
    EXPECT_NEAR(out(0, 1), h[1], 1e-12);
}

TEST(Init, LstmRecurrentBlocksAreOrthogonal) {
    auto m = init_parameters<float>({ModelKind::kS1Lstm, 5}, 11);
    const auto& whh = m.lstm()->w_hh.value;
    for (int gate = 0; gate < 4; ++gate) {
        const Eigen::MatrixXd q = whh.middleRows(gate * 32, 32).cast<double>();
        EXPECT_LE((q.transpose() * q - Eigen::MatrixXd::Identity(32, 32)).cwiseAbs().maxCoeff(), 1e-5);
    }
    const double bound = std::sqrt(6.0 / (1024 + 32));
    EXPECT_LE(m.lstm()->w_ih.value.cwiseAbs().maxCoeff(), bound);
}

TEST(Init, BiasesZeroAndWeightsBounded) {
    auto m = init_parameters<float>({ModelKind::kStatic2, 1}, 3);
    for (auto* p : m.parameters()) {
        if (p->name.ends_with(".bias") || p->name.ends_with(".beta") || p->name.ends_with(".running_mean")) {
            EXPECT_EQ(p->value.cwiseAbs().maxCoeff(), 0.0f) << p->name;
        }
        if (p->name.ends_with(".gamma") || p->name.ends_with(".running_var")) {
            EXPECT_EQ(p->value.minCoeff(), 1.0f) << p->name;
        }
    }
    for (auto& l : m.head().layers()) {
        EXPECT_LE(l.weight.value.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(double(l.in_features())));
    }
    for (auto* c : m.backbone().convolutions(true)) {
        EXPECT_LE(c->weight.value.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(double(c->fan_in())));
    }
}

TEST(Init, DeterministicPerSeed) {
    auto a = init_parameters<float>({ModelKind::kS1Lstm, 2}, 8);
    auto b = init_parameters<float>({ModelKind::kS1Lstm, 2}, 8);
    auto c = init_parameters<float>({ModelKind::kS1Lstm, 2}, 9);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
        any_diff |= pa[i]->value != pc[i]->value;
    }
    EXPECT_TRUE(any_diff);
}

TEST(Models, TemporalOutputDependsOnFrameOrder) {
    auto m = init_parameters<double>({ModelKind::kS1Lstm, 3}, 2, tiny_dims());
    const auto x = random_images<double>(3, 12, 16, 6);
    WindowIndex fwd(1, 3), rev(1, 3);
    fwd << 0, 1, 2;
    rev << 2, 1, 0;
    const auto a = m.forward(x, fwd, false);
    const auto b = m.forward(x, rev, false);
    EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Models, EvalModeIsBatchIndependent) {
    auto m = init_parameters<float>({ModelKind::kStatic1, 1}, 2);
    const auto x = random_images<float>(3, 100, 160, 9);
    const auto all = m.forward(x, single_frame_windows(3), false);
    nn::Tensor4<float> one(1, 1, 100, 160);
    std::copy(x.sample(1), x.sample(1) + x.sample_size(), one.data.begin());
    const auto single = m.forward(one, single_frame_windows(1), false);
    EXPECT_LE((all.row(1) - single.row(0)).cwiseAbs().maxCoeff(), 1e-5f);
}

// Central differences against the analytic gradient in double precision.
class GradientCheck : public ::testing::TestWithParam<ModelKind> {};

TEST_P(GradientCheck, MatchesFiniteDifferences) {
    const ModelKind kind = GetParam();
    const int s = kind == ModelKind::kS1Lstm ? 3 : 1;
    auto m = init_parameters<double>({kind, s}, 5, tiny_dims());
    const int n = 6;
    const auto x = random_images<double>(n, 12, 16, 7);
    const WindowIndex w = sliding(n, s);
    Rng rng(13);
    std::normal_distribution<double> g(0.0, 1.0);
    nn::Matrix<double> weights(w.rows(), 2);
    for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = g(rng);

    m.zero_grad();
    m.forward(x, w, true);
    m.backward(weights);

    double worst = 0.0;
    int checked = 0;
    const double h = 1e-6;
    for (auto* p : m.parameters()) {
        if (!p->trainable) continue;
        std::uniform_int_distribution<Eigen::Index> pick(0, p->size() - 1);
        for (int k = 0; k < 4; ++k) {
            const Eigen::Index i = pick(rng);
            double& v = p->value.data()[i];
            const double saved = v;
            v = saved + h;
            const double up = objective(m.forward(x, w, true), weights);
            v = saved - h;
            const double down = objective(m.forward(x, w, true), weights);
            v = saved;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p->grad.data()[i];
            const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-4});
            worst = std::max(worst, rel);
            ++checked;
            EXPECT_LE(rel, 1e-4) << p->name << "[" << i << "] numeric " << numeric << " analytic " << analytic;
        }
    }
    EXPECT_GT(checked, 40);
}

INSTANTIATE_TEST_SUITE_P(AllVariants, GradientCheck,
                         ::testing::Values(ModelKind::kStatic1, ModelKind::kStatic2, ModelKind::kS1Lstm));

TEST(Models, InputGradientReachesEveryWindowFrame) {
    auto m = init_parameters<double>({ModelKind::kS1Lstm, 4}, 5, tiny_dims());
    const auto x = random_images<double>(8, 12, 16, 3);
    m.zero_grad();
    m.forward(x, contiguous_windows(2, 4), true);
    const auto dx = m.backward(nn::Matrix<double>::Ones(2, 2), true);
    ASSERT_TRUE(dx.same_shape(x));
    for (int i = 0; i < 8; ++i) {
        double norm = 0.0;
        for (std::size_t k = 0; k < dx.sample_size(); ++k) norm += std::abs(dx.sample(i)[k]);
        EXPECT_GT(norm, 0.0) << "frame " << i;
    }
}

TEST(Models, ImagesScaledToUnitRange) {
    EyeFrame f;
    f.at(0, 0) = 255;
    f.at(0, 1) = 51;
    const std::vector<EyeFrame> frames{f};
    const auto x = frames_to_tensor<float>(frames);
    EXPECT_FLOAT_EQ(x.at(0, 0, 0, 0), 1.0f);
    EXPECT_FLOAT_EQ(x.at(0, 0, 0, 1), 0.2f);
    EXPECT_FLOAT_EQ(x.at(0, 0, 1, 0), 0.0f);
}

TEST(Layers, ReductionsIgnoreAlignment) {
    Rng rng(4);
    std::normal_distribution<float> g(0.0f, 3.0f);
    for (std::size_t n : {1u, 15u, 16u, 17u, 250u, 4000u}) {
        std::vector<float> src(n);
        for (auto& v : src) v = g(rng);
        double first = 0.0;
        for (std::size_t offset = 0; offset < 16; ++offset) {
            std::vector<float> buf(n + offset);
            std::copy(src.begin(), src.end(), buf.begin() + static_cast<std::ptrdiff_t>(offset));
            const double s = nn::detail::lane_sum(buf.data() + offset, n, [](float v) { return v; });
            if (offset == 0) first = s;
            EXPECT_EQ(s, first) << "n " << n << " offset " << offset;
        }
        double ref = 0.0;
        for (float v : src) ref += v;
        EXPECT_NEAR(first, ref, 1e-3 * (1.0 + std::sqrt(double(n))));
    }
}

TEST(Layers, Im2colMatchesDirectIndexing) {
    Rng rng(6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 2, 0}, {3, 2, 0}}) {
        const int c = 2, h = 7, w = 9;
        const int ho = (h + 2 * pad - k) / stride + 1;
        const int wo = (w + 2 * pad - k) / stride + 1;
        std::vector<double> x(static_cast<std::size_t>(c * h * w));
        for (auto& v : x) v = u(rng);
        std::vector<double> col(static_cast<std::size_t>(c * k * k * ho * wo), 99.0);
        nn::detail::im2col(x.data(), c, h, w, k, stride, pad, ho, wo, col.data());
        std::vector<double> back(x.size(), 0.0);
        nn::detail::col2im_add(col.data(), c, h, w, k, stride, pad, ho, wo, back.data());
        std::vector<double> uses(x.size(), 0.0);
        for (int ci = 0; ci < c; ++ci) {
            for (int ki = 0; ki < k; ++ki) {
                for (int kj = 0; kj < k; ++kj) {
                    for (int oy = 0; oy < ho; ++oy) {
                        for (int ox = 0; ox < wo; ++ox) {
                            const int iy = oy * stride - pad + ki, ix = ox * stride - pad + kj;
                            const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
                            const double expected = inside ? x[static_cast<std::size_t>((ci * h + iy) * w + ix)] : 0.0;
                            const auto row = static_cast<std::size_t>((ci * k + ki) * k + kj);
                            ASSERT_EQ(col[row * ho * wo + static_cast<std::size_t>(oy * wo + ox)], expected);
                            if (inside) uses[static_cast<std::size_t>((ci * h + iy) * w + ix)] += 1.0;
                        }
                    }
                }
            }
        }
        // col2im is the adjoint of im2col: each input collects itself once per use.
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], uses[i] * x[i], 1e-12);
    }
}
