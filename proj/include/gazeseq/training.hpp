#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gazeseq/dataset.hpp"
#include "gazeseq/error.hpp"
#include "gazeseq/metrics.hpp"
#include "gazeseq/models.hpp"
#include "gazeseq/rng.hpp"

namespace gazeseq {

// ---------------------------------------------------------------------------
// Configuration and logs
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 0.0005;
    int batch_size = 32;
    double weight_decay = 0.00001;
    int max_epochs_stage1 = 150;
    int max_epochs_stage2 = 30;
    int patience_stage1 = 10;
    int patience_stage2 = 5;
    std::string loss = "L1";
    std::uint64_t seed = 1;
    int window = 15;  ///< stage-2 window length s
    /// Training units drawn per epoch from the reshuffled pool; 0 uses all.
    int samples_per_epoch = 0;
    /// Stage 2 shuffles runs of this many consecutive windows of one sequence
    /// so overlapping windows share backbone passes; 1 shuffles windows individually.
    int window_group = 8;
    /// Stops after this many optimizer steps in total; 0 means no cap.
    long max_steps = 0;
};

inline void validate(const TrainConfig& c) {
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw InvalidInput("learning_rate must be positive");
    if (c.batch_size < 1) throw InvalidInput("batch_size must be positive");
    if (!(c.weight_decay >= 0.0) || !std::isfinite(c.weight_decay)) throw InvalidInput("weight_decay must be >= 0");
    if (c.max_epochs_stage1 < 1 || c.max_epochs_stage2 < 1) throw InvalidInput("epoch limits must be positive");
    if (c.patience_stage1 < 1 || c.patience_stage2 < 1) throw InvalidInput("early-stop patience must be positive");
    if (c.loss != "L1") throw InvalidInput("only the L1 loss is supported");
    if (c.window < 1 || c.window > kFramesPerSequence) throw InvalidInput("window must lie in [1, 100]");
    if (c.samples_per_epoch < 0) throw InvalidInput("samples_per_epoch must be >= 0");
    if (c.window_group < 1) throw InvalidInput("window_group must be positive");
    if (c.max_steps < 0) throw InvalidInput("max_steps must be >= 0");
}

struct EpochRecord {
    int epoch = 0;  ///< 1-based
    double train_l1 = 0.0;
    double val_mae_yaw = 0.0;
    double val_mae_pitch = 0.0;
    double val_mae_mean = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    std::string stop_reason;
    long steps = 0;

    const EpochRecord& best() const { return epochs.at(static_cast<std::size_t>(best_epoch - 1)); }
};

inline std::string encode_trainlog_csv(const TrainLog& log) {
    std::string out = "epoch,train_l1,val_mae_yaw,val_mae_pitch,val_mae_mean\n";
    for (const auto& e : log.epochs) {
        out += std::to_string(e.epoch) + "," + format_fixed6(e.train_l1) + "," + format_fixed6(e.val_mae_yaw) + "," +
               format_fixed6(e.val_mae_pitch) + "," + format_fixed6(e.val_mae_mean) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss, optimizer, early stopping
// ---------------------------------------------------------------------------

/// Mean over all entries of |pred - target|.
template <typename T>
double l1_loss(const nn::Matrix<T>& pred, const nn::Matrix<T>& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.size() == 0) {
        throw ShapeError("l1_loss: prediction and target shapes differ");
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) sum += std::abs(double(pred.data()[i]) - double(target.data()[i]));
    return sum / static_cast<double>(pred.size());
}

/// d(l1_loss)/d(pred): sign(pred - target) / numel, zero at the kink.
template <typename T>
nn::Matrix<T> l1_loss_grad(const nn::Matrix<T>& pred, const nn::Matrix<T>& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.size() == 0) {
        throw ShapeError("l1_loss: prediction and target shapes differ");
    }
    const T scale = T(1) / static_cast<T>(pred.size());
    nn::Matrix<T> g(pred.rows(), pred.cols());
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        const T d = pred.data()[i] - target.data()[i];
        g.data()[i] = d > T(0) ? scale : (d < T(0) ? -scale : T(0));
    }
    return g;
}

struct AdamConfig {
    double learning_rate = 0.0005;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// ADAM with weight decay folded into the gradient (g + wd * theta).
template <typename T>
class Adam {
public:
    Adam(nn::ParameterList<T> params, AdamConfig cfg) : cfg_(cfg) {
        for (auto* p : params) {
            if (!p->trainable) continue;
            params_.push_back(p);
            m_.push_back(nn::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(nn::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
        }
    }

    long steps() const { return t_; }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(cfg_.beta1);
        const T b2 = static_cast<T>(cfg_.beta2);
        const T wd = static_cast<T>(cfg_.weight_decay);
        const T step_size = static_cast<T>(cfg_.learning_rate / c1);
        const T inv_c2 = static_cast<T>(1.0 / c2);
        const T eps = static_cast<T>(cfg_.eps);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = *params_[k];
            T* theta = p.value.data();
            const T* grad = p.grad.data();
            T* m = m_[k].data();
            T* v = v_[k].data();
            for (Eigen::Index i = 0; i < p.value.size(); ++i) {
                const T g = grad[i] + wd * theta[i];
                m[i] = b1 * m[i] + (T(1) - b1) * g;
                v[i] = b2 * v[i] + (T(1) - b2) * g * g;
                theta[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    nn::ParameterList<T> params_;
    std::vector<nn::Matrix<T>> m_;
    std::vector<nn::Matrix<T>> v_;
    long t_ = 0;
};

struct EarlyStopDecision {
    bool stop = false;
    int best_epoch = 0;  ///< 1-based; earliest minimum
};

inline EarlyStopDecision early_stop(std::span<const double> history, int patience) {
    if (history.empty()) throw InvalidInput("early_stop: empty history");
    if (patience < 1) throw InvalidInput("early_stop: patience must be positive");
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i) {
        if (history[i] < history[best]) best = i;
    }
    const auto since = static_cast<long>(history.size() - 1 - best);
    return {since >= patience, static_cast<int>(best) + 1};
}

// ---------------------------------------------------------------------------
// Prepared sequences
// ---------------------------------------------------------------------------

/// One 100-frame sequence mapped onto left-eye geometry: right-eye frames are
/// mirrored and their targets yaw-negated. `gt` keeps the stored angles.
struct PreparedSequence {
    int subject_id = 0;
    Side source_side = Side::kLeft;
    int sequence_index = 0;
    std::vector<EyeFrame> frames;
    std::vector<GazeAngles> targets;
    std::vector<GazeAngles> gt;
    std::vector<FrameLabel> labels;
    std::vector<double> t_ms;

    int length() const { return static_cast<int>(frames.size()); }
};

/// Maps a normalized-geometry estimate back to the source eye's coordinates.
inline GazeAngles to_source_side(const GazeAngles& a, Side source) {
    return source == Side::kRight ? mirror_angles(a) : a;
}

inline std::vector<PreparedSequence> prepare_sequences(std::vector<Recording> recordings) {
    std::vector<PreparedSequence> out;
    for (auto& rec : recordings) {
        for (auto& seq : rec.sequences) {
            PreparedSequence p;
            p.subject_id = rec.subject_id;
            p.source_side = rec.side;
            p.sequence_index = seq.index;
            for (auto& fr : seq.frames) {
                p.gt.push_back(fr.gt);
                p.labels.push_back(fr.label);
                p.t_ms.push_back(fr.t_ms);
                WindowSample w;
                w.frames.push_back(std::move(fr.frame));
                w.target = fr.gt;
                w = normalize_side(std::move(w));
                p.frames.push_back(std::move(w.frames.front()));
                p.targets.push_back(w.target);
            }
            seq.frames.clear();
            out.push_back(std::move(p));
        }
    }
    return out;
}

inline std::vector<PreparedSequence> load_split(const std::filesystem::path& root, Split split) {
    return prepare_sequences(load_dataset(root, {split}).recordings);
}

// ---------------------------------------------------------------------------
// Inference over whole sequences
// ---------------------------------------------------------------------------

/// Estimates for every window of length `model.variant().window` in the
/// sequence, in normalized geometry; entry k predicts frame k + s - 1.
/// Backbone features are computed once per frame.
template <typename T>
std::vector<GazeAngles> predict_sequence(GazeModel<T>& model, const PreparedSequence& seq) {
    const int s = model.variant().window;
    const int L = seq.length();
    if (s > L) throw InvalidInput("predict_sequence: window longer than the sequence");
    const nn::Matrix<T> feats = model.features(frames_to_tensor<T>(seq.frames), false);
    WindowIndex idx(L - s + 1, s);
    for (int b = 0; b < idx.rows(); ++b) {
        for (int t = 0; t < s; ++t) idx(b, t) = b + t;
    }
    const nn::Matrix<T> out = model.forward_from_features(feats, idx, false);
    std::vector<GazeAngles> preds;
    preds.reserve(static_cast<std::size_t>(out.rows()));
    for (Eigen::Index b = 0; b < out.rows(); ++b) preds.push_back({double(out(b, 0)), double(out(b, 1))});
    return preds;
}

/// Validation MAE over every window of every sequence.
template <typename T>
ErrorStats validation_error(GazeModel<T>& model, const std::vector<PreparedSequence>& sequences) {
    std::vector<SampleError> errors;
    const int s = model.variant().window;
    for (const auto& seq : sequences) {
        const auto preds = predict_sequence(model, seq);
        for (std::size_t k = 0; k < preds.size(); ++k) {
            errors.push_back(sample_error(preds[k], seq.targets[k + static_cast<std::size_t>(s) - 1]));
        }
    }
    return error_stats(errors);
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// A training unit: the window of length s ending at `last` in sequence `seq`.
struct TrainUnit {
    int seq = 0;
    int last = 0;
};

/// What reaches the loss in one optimizer step. Exposed to hooks so tests can
/// audit the pipeline (e.g. that right-eye samples arrive mirrored).
struct TrainBatch {
    std::vector<const EyeFrame*> frames;  ///< unique frames fed to the backbone
    WindowIndex windows;                  ///< rows index `frames`, one per sample
    std::vector<TrainUnit> units;
    std::vector<GazeAngles> targets;      ///< last-frame targets only
};

struct TrainHooks {
    std::function<void(const TrainBatch&)> on_batch;
    std::function<void(const EpochRecord&)> on_epoch;
};

inline TrainBatch make_batch(const std::vector<PreparedSequence>& data, std::span<const TrainUnit> units, int s) {
    TrainBatch b;
    b.windows.resize(static_cast<Eigen::Index>(units.size()), s);
    std::map<std::pair<int, int>, int> row_of;
    for (std::size_t u = 0; u < units.size(); ++u) {
        const auto& unit = units[u];
        const auto& seq = data[static_cast<std::size_t>(unit.seq)];
        for (int t = 0; t < s; ++t) {
            const int frame = unit.last - s + 1 + t;
            auto [it, inserted] = row_of.try_emplace({unit.seq, frame}, static_cast<int>(b.frames.size()));
            if (inserted) b.frames.push_back(&seq.frames[static_cast<std::size_t>(frame)]);
            b.windows(static_cast<Eigen::Index>(u), t) = it->second;
        }
        b.units.push_back(unit);
        b.targets.push_back(seq.targets[static_cast<std::size_t>(unit.last)]);
    }
    return b;
}

template <typename T>
nn::Tensor4<T> pack_frames(const std::vector<const EyeFrame*>& frames) {
    if (frames.empty()) throw ShapeError("pack_frames: no frames");
    nn::Tensor4<T> x(static_cast<int>(frames.size()), 1, frames.front()->rows, frames.front()->cols);
    for (int i = 0; i < x.n; ++i) {
        const EyeFrame& f = *frames[static_cast<std::size_t>(i)];
        if (f.rows != x.h || f.cols != x.w) throw ShapeError("pack_frames: frame sizes differ");
        T* dst = x.sample(i);
        for (std::size_t k = 0; k < f.pixels.size(); ++k) dst[k] = static_cast<T>(f.pixels[k]) / T(255);
    }
    return x;
}

/// Shuffled unit order for one epoch: runs of `group` consecutive windows of
/// one sequence are permuted as blocks, then truncated to `limit` units.
inline std::vector<TrainUnit> epoch_order(const std::vector<PreparedSequence>& data, int s, int group, int limit,
                                          std::uint64_t seed) {
    std::vector<std::vector<TrainUnit>> blocks;
    for (std::size_t q = 0; q < data.size(); ++q) {
        std::vector<TrainUnit> block;
        for (int last = s - 1; last < data[q].length(); ++last) {
            block.push_back({static_cast<int>(q), last});
            if (static_cast<int>(block.size()) == group) blocks.push_back(std::exchange(block, {}));
        }
        if (!block.empty()) blocks.push_back(std::move(block));
    }
    Rng rng(seed);
    std::shuffle(blocks.begin(), blocks.end(), rng);
    std::vector<TrainUnit> order;
    for (const auto& b : blocks) order.insert(order.end(), b.begin(), b.end());
    if (limit > 0 && static_cast<std::size_t>(limit) < order.size()) order.resize(static_cast<std::size_t>(limit));
    return order;
}

/// One optimizer step on a batch; returns the batch L1 loss.
template <typename T>
double train_step(GazeModel<T>& model, Adam<T>& optimizer, const nn::Tensor4<T>& frames, const WindowIndex& windows,
                  const nn::Matrix<T>& targets) {
    model.zero_grad();
    const nn::Matrix<T> pred = model.forward(frames, windows, true);
    const double loss = l1_loss(pred, targets);
    model.backward(l1_loss_grad(pred, targets));
    optimizer.step();
    model.release();
    return loss;
}

template <typename T>
nn::Matrix<T> target_matrix(std::span<const GazeAngles> targets) {
    nn::Matrix<T> m(static_cast<Eigen::Index>(targets.size()), 2);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        m(static_cast<Eigen::Index>(i), 0) = static_cast<T>(targets[i].yaw_deg);
        m(static_cast<Eigen::Index>(i), 1) = static_cast<T>(targets[i].pitch_deg);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Stage drivers
// ---------------------------------------------------------------------------

template <typename T>
struct TrainResult {
    GazeModel<T> model;
    TrainLog log;
};

namespace detail {

template <typename T>
std::vector<nn::Matrix<T>> snapshot(GazeModel<T>& model) {
    std::vector<nn::Matrix<T>> out;
    for (auto* p : model.parameters()) out.push_back(p->value);
    return out;
}

template <typename T>
void restore(GazeModel<T>& model, const std::vector<nn::Matrix<T>>& values) {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

/// Shared epoch loop: trains on units of length `model.variant().window`,
/// validates after every epoch, keeps the best-validation parameters.
template <typename T>
TrainLog fit(GazeModel<T>& model, const std::vector<PreparedSequence>& train, const std::vector<PreparedSequence>& val,
             const TrainConfig& cfg, int stage, int max_epochs, int patience, int group, const TrainHooks& hooks) {
    const int s = model.variant().window;
    Adam<T> optimizer(model.parameters(), {cfg.learning_rate, cfg.weight_decay});
    TrainLog log;
    std::vector<double> history;
    std::vector<nn::Matrix<T>> best;
    for (int epoch = 1; epoch <= max_epochs; ++epoch) {
        const auto order = epoch_order(train, s, group, cfg.samples_per_epoch,
                                       derive_seed(cfg.seed, {tag(SeedStream::kShuffle), std::uint64_t(stage),
                                                              std::uint64_t(epoch)}));
        double loss_sum = 0.0;
        std::size_t seen = 0;
        bool capped = false;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            if (cfg.max_steps > 0 && optimizer.steps() >= cfg.max_steps) {
                capped = true;
                break;
            }
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
            const TrainBatch batch = make_batch(train, std::span(order).subspan(start, n), s);
            if (hooks.on_batch) hooks.on_batch(batch);
            const double loss = train_step(model, optimizer, pack_frames<T>(batch.frames), batch.windows,
                                           target_matrix<T>(batch.targets));
            loss_sum += loss * static_cast<double>(n);
            seen += n;
        }
        if (seen == 0) {
            log.stop_reason = "step limit";
            break;
        }
        const ErrorStats v = validation_error(model, val);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), v.mae_yaw, v.mae_pitch, v.mae_mean};
        log.epochs.push_back(rec);
        history.push_back(v.mae_mean);
        if (hooks.on_epoch) hooks.on_epoch(rec);
        const EarlyStopDecision d = early_stop(history, patience);
        if (d.best_epoch == epoch) best = snapshot(model);
        log.best_epoch = d.best_epoch;
        if (d.stop) {
            log.stop_reason = "early stop";
            break;
        }
        if (capped) {
            log.stop_reason = "step limit";
            break;
        }
    }
    if (log.epochs.empty()) throw InvalidInput("training: no optimizer step was taken");
    if (log.stop_reason.empty()) log.stop_reason = "max epochs";
    log.steps = optimizer.steps();
    restore(model, best);
    return log;
}

inline void require_nonempty(const std::vector<PreparedSequence>& train, const std::vector<PreparedSequence>& val) {
    if (train.empty()) throw InvalidInput("training: the TRAIN split is empty");
    if (val.empty()) throw InvalidInput("training: the VAL split is empty");
}

}  // namespace detail

/// Stage 1: STATIC1 end-to-end on single frames.
template <typename T = float>
TrainResult<T> train_stage1(const std::vector<PreparedSequence>& train, const std::vector<PreparedSequence>& val,
                            const TrainConfig& cfg, const TrainHooks& hooks = {}, const ModelDims& dims = {}) {
    validate(cfg);
    detail::require_nonempty(train, val);
    GazeModel<T> model = init_parameters<T>({ModelKind::kStatic1, 1}, cfg.seed, dims);
    TrainLog log = detail::fit(model, train, val, cfg, 1, cfg.max_epochs_stage1, cfg.patience_stage1, 1, hooks);
    return {std::move(model), std::move(log)};
}

/// Stage-2 starting point: the stage-1 backbone (including batch-norm
/// statistics) under a fresh LSTM and head.
template <typename T>
GazeModel<T> stage2_model(GazeModel<T>& stage1, int window, std::uint64_t seed) {
    if (stage1.variant().kind != ModelKind::kStatic1) {
        throw InvalidInput("stage 2 needs a STATIC1 checkpoint, got " + std::string(to_string(stage1.variant().kind)));
    }
    if (window < 1) throw InvalidInput("stage 2: window must be positive");
    GazeModel<T> model({ModelKind::kS1Lstm, window}, stage1.dims());
    auto src = stage1.backbone_parameters();
    auto dst = model.backbone_parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
    init_head(model, seed);
    model.zero_grad();
    return model;
}

/// Stage 2: S1_LSTM fine-tuned end-to-end on stride-1 windows.
template <typename T = float>
TrainResult<T> train_stage2(GazeModel<T>& stage1, const std::vector<PreparedSequence>& train,
                            const std::vector<PreparedSequence>& val, const TrainConfig& cfg,
                            const TrainHooks& hooks = {}) {
    validate(cfg);
    detail::require_nonempty(train, val);
    GazeModel<T> model = stage2_model(stage1, cfg.window, cfg.seed);
    TrainLog log = detail::fit(model, train, val, cfg, 2, cfg.max_epochs_stage2, cfg.patience_stage2,
                               cfg.window_group, hooks);
    return {std::move(model), std::move(log)};
}

}  // namespace gazeseq
