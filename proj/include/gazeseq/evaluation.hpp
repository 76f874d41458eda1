#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gazeseq/error.hpp"
#include "gazeseq/geometry.hpp"
#include "gazeseq/image_io.hpp"
#include "gazeseq/metrics.hpp"
#include "gazeseq/models.hpp"
#include "gazeseq/oculomotor.hpp"
#include "gazeseq/stats.hpp"
#include "gazeseq/training.hpp"

namespace gazeseq {

// ---------------------------------------------------------------------------
// Movement annotation
// ---------------------------------------------------------------------------

enum class MovementLabel { kFixation, kSaccade, kFixToSac, kSacToFix, kFixSacFix, kOther };

inline constexpr std::array<MovementLabel, 6> kMovementLabels{MovementLabel::kFixation,  MovementLabel::kSaccade,
                                                              MovementLabel::kFixToSac,  MovementLabel::kSacToFix,
                                                              MovementLabel::kFixSacFix, MovementLabel::kOther};

inline std::string_view to_string(MovementLabel l) {
    switch (l) {
        case MovementLabel::kFixation: return "FIXATION";
        case MovementLabel::kSaccade: return "SACCADE";
        case MovementLabel::kFixToSac: return "FIX_TO_SAC";
        case MovementLabel::kSacToFix: return "SAC_TO_FIX";
        case MovementLabel::kFixSacFix: return "FIX_SAC_FIX";
        case MovementLabel::kOther: return "OTHER";
    }
    return "?";
}

inline MovementLabel parse_movement_label(std::string_view s) {
    for (MovementLabel l : kMovementLabels) {
        if (to_string(l) == s) return l;
    }
    throw DataError("unknown movement label '" + std::string(s) + "'");
}

inline constexpr double kDefaultVelocityThreshold = 75.0;  // deg/s

/// Velocity-threshold (I-VT) labelling of a 100 Hz gaze trace. The speed of
/// frame i is the angular distance from frame i-1 times the frame rate; the
/// first frame takes the label of the second.
inline std::vector<FrameLabel> annotate_frames(std::span<const GazeAngles> trace,
                                               double threshold_deg_s = kDefaultVelocityThreshold) {
    if (trace.size() < 2) throw InvalidInput("annotate_frames: need at least two samples");
    if (!(threshold_deg_s >= 0.0)) throw InvalidInput("annotate_frames: threshold must be >= 0");
    const double rate = 1000.0 / kFramePeriodMs;
    std::vector<FrameLabel> labels(trace.size());
    for (std::size_t i = 1; i < trace.size(); ++i) {
        const double speed = angular_distance_deg(trace[i - 1], trace[i]) * rate;
        labels[i] = speed > threshold_deg_s ? FrameLabel::kSac : FrameLabel::kFix;
    }
    labels[0] = labels[1];
    return labels;
}

/// Classifies a window by the run-length pattern of its frame labels.
inline MovementLabel label_window(std::span<const FrameLabel> labels) {
    if (labels.empty()) throw InvalidInput("label_window: empty window");
    std::vector<FrameLabel> runs{labels.front()};
    for (FrameLabel l : labels) {
        if (l != runs.back()) runs.push_back(l);
    }
    using F = FrameLabel;
    if (runs.size() == 1) return runs[0] == F::kFix ? MovementLabel::kFixation : MovementLabel::kSaccade;
    if (runs.size() == 2) return runs[0] == F::kFix ? MovementLabel::kFixToSac : MovementLabel::kSacToFix;
    if (runs.size() == 3 && runs[0] == F::kFix) return MovementLabel::kFixSacFix;
    return MovementLabel::kOther;
}

// ---------------------------------------------------------------------------
// Common subset
// ---------------------------------------------------------------------------

struct SampleKey {
    int subject_id = 0;
    Side side = Side::kLeft;
    int sequence_index = 0;
    int frame = 0;

    friend bool operator==(const SampleKey&, const SampleKey&) = default;
};

/// Last-frame indices of one sequence reachable by an s_max window.
inline std::vector<int> common_subset_frames(int s_max, int length = kFramesPerSequence) {
    if (s_max < 1) throw InvalidInput("common_subset: s_max must be >= 1");
    if (s_max > length) throw InvalidInput("common_subset: s_max exceeds the sequence length");
    std::vector<int> frames;
    for (int f = s_max - 1; f < length; ++f) frames.push_back(f);
    return frames;
}

inline double coverage(int s_max, int length = kFramesPerSequence) {
    return static_cast<double>(common_subset_frames(s_max, length).size()) / static_cast<double>(length);
}

inline std::vector<SampleKey> common_subset(const std::vector<PreparedSequence>& sequences, int s_max) {
    std::vector<SampleKey> keys;
    for (const auto& seq : sequences) {
        for (int f : common_subset_frames(s_max, seq.length())) {
            keys.push_back({seq.subject_id, seq.source_side, seq.sequence_index, f});
        }
    }
    return keys;
}

/// Movement class of every common-subset sample, from the I-VT labels of the
/// `s_label` ground-truth frames ending at the sample.
inline std::vector<MovementLabel> window_labels(const std::vector<PreparedSequence>& sequences, int s_max, int s_label,
                                                double threshold_deg_s = kDefaultVelocityThreshold) {
    if (s_label < 1 || s_label > s_max) throw InvalidInput("window_labels: label window must lie in [1, s_max]");
    std::vector<MovementLabel> out;
    for (const auto& seq : sequences) {
        const auto frame_labels = annotate_frames(seq.gt, threshold_deg_s);
        for (int f : common_subset_frames(s_max, seq.length())) {
            out.push_back(label_window(std::span(frame_labels).subspan(static_cast<std::size_t>(f - s_label + 1),
                                                                       static_cast<std::size_t>(s_label))));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

/// Anything producing per-window gaze estimates for a sequence. Estimates are
/// in the source eye's coordinates; entry k predicts frame k + window() - 1.
class GazeEstimator {
public:
    virtual ~GazeEstimator() = default;
    virtual std::string name() const = 0;
    virtual int window() const = 0;
    virtual std::vector<GazeAngles> estimate(const PreparedSequence& seq) = 0;
};

class ModelEstimator final : public GazeEstimator {
public:
    ModelEstimator(std::string name, GazeModel<float> model) : name_(std::move(name)), model_(std::move(model)) {}

    std::string name() const override { return name_; }
    int window() const override { return model_.variant().window; }
    GazeModel<float>& model() { return model_; }

    std::vector<GazeAngles> estimate(const PreparedSequence& seq) override {
        auto preds = predict_sequence(model_, seq);
        for (auto& p : preds) p = to_source_side(p, seq.source_side);
        return preds;
    }

private:
    std::string name_;
    GazeModel<float> model_;
};

/// Returns the ground truth itself.
class GroundTruthEcho final : public GazeEstimator {
public:
    explicit GroundTruthEcho(int window = 1, std::string name = "echo") : window_(window), name_(std::move(name)) {}
    std::string name() const override { return name_; }
    int window() const override { return window_; }
    std::vector<GazeAngles> estimate(const PreparedSequence& seq) override {
        return {seq.gt.begin() + (window_ - 1), seq.gt.end()};
    }

private:
    int window_;
    std::string name_;
};

class ConstantEstimator final : public GazeEstimator {
public:
    explicit ConstantEstimator(GazeAngles value, int window = 1, std::string name = "constant")
        : value_(value), window_(window), name_(std::move(name)) {}
    std::string name() const override { return name_; }
    int window() const override { return window_; }
    std::vector<GazeAngles> estimate(const PreparedSequence& seq) override {
        return std::vector<GazeAngles>(static_cast<std::size_t>(seq.length() - window_ + 1), value_);
    }

private:
    GazeAngles value_;
    int window_;
    std::string name_;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ModelEvaluation {
    std::string name;
    int window = 1;
    ErrorStats stats;
    std::vector<SampleKey> samples;
    std::vector<SampleError> errors;
    std::vector<GazeAngles> estimates;
};

/// Scores an estimator on the s_max common subset of `sequences`.
inline ModelEvaluation evaluate_model(GazeEstimator& estimator, const std::vector<PreparedSequence>& sequences,
                                      int s_max) {
    const int w = estimator.window();
    if (w > s_max) {
        throw InvalidInput("evaluate_model: window " + std::to_string(w) + " of '" + estimator.name() +
                           "' exceeds s_max " + std::to_string(s_max));
    }
    if (sequences.empty()) throw InvalidInput("evaluate_model: no test sequences");
    ModelEvaluation ev{estimator.name(), w, {}, {}, {}, {}};
    for (const auto& seq : sequences) {
        if (seq.length() != kFramesPerSequence || seq.gt.size() != seq.frames.size()) {
            throw DataError("evaluate_model: sequence " + std::to_string(seq.sequence_index) + " of subject " +
                            std::to_string(seq.subject_id) + " is missing frames");
        }
        const auto est = estimator.estimate(seq);
        if (est.size() != static_cast<std::size_t>(seq.length() - w + 1)) {
            throw DataError("evaluate_model: estimator returned the wrong number of estimates");
        }
        for (int f : common_subset_frames(s_max, seq.length())) {
            const GazeAngles& e = est[static_cast<std::size_t>(f - w + 1)];
            ev.samples.push_back({seq.subject_id, seq.source_side, seq.sequence_index, f});
            ev.estimates.push_back(e);
            ev.errors.push_back(sample_error(e, seq.gt[static_cast<std::size_t>(f)]));
        }
    }
    ev.stats = error_stats(ev.errors);
    return ev;
}

/// Per-class, per-axis improvement of `other` over `base` (positive = other is better).
struct ClassImprovement {
    MovementLabel label = MovementLabel::kOther;
    std::string axis;  ///< "yaw" or "pitch"
    double improvement_deg = 0.0;
    std::optional<double> sem;
    std::optional<double> ks_p;
    std::size_t n = 0;

    bool tested() const { return ks_p.has_value(); }
};

struct Comparison {
    std::string baseline;
    std::string model;
    double improvement_mean_deg = 0.0;
    double relative_improvement_pct = 0.0;
    std::optional<TestResult> wilcoxon;
    std::string wilcoxon_note;  ///< why the test is missing, if it is
    std::vector<ClassImprovement> classes;
};

namespace detail {

inline double mean_of(std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

/// Standard error of the mean with the n-1 sample deviation.
inline double sem_of(std::span<const double> xs) {
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
}

}  // namespace detail

inline Comparison compare_models(const ModelEvaluation& base, const ModelEvaluation& other,
                                 std::span<const MovementLabel> labels) {
    if (base.samples != other.samples) throw InvalidInput("compare_models: models were scored on different samples");
    if (labels.size() != base.samples.size()) throw InvalidInput("compare_models: one label per sample is required");
    Comparison c;
    c.baseline = base.name;
    c.model = other.name;
    c.improvement_mean_deg = base.stats.mae_mean - other.stats.mae_mean;
    c.relative_improvement_pct = base.stats.mae_mean > 0.0 ? relative_improvement(base.stats.mae_mean,
                                                                                   other.stats.mae_mean)
                                                            : 0.0;
    std::vector<double> a, b;
    for (std::size_t i = 0; i < base.errors.size(); ++i) {
        a.push_back(base.errors[i].mean);
        b.push_back(other.errors[i].mean);
    }
    try {
        c.wilcoxon = wilcoxon_signed_rank(a, b);
    } catch (const DegenerateInput&) {
        c.wilcoxon_note = "degenerate: all paired differences are zero";
    } catch (const InvalidInput& e) {
        c.wilcoxon_note = e.what();
    }

    for (MovementLabel label : kMovementLabels) {
        for (int axis = 0; axis < 2; ++axis) {
            std::vector<double> eb, eo, diff;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] != label) continue;
                const double x = axis == 0 ? base.errors[i].yaw : base.errors[i].pitch;
                const double y = axis == 0 ? other.errors[i].yaw : other.errors[i].pitch;
                eb.push_back(x);
                eo.push_back(y);
                diff.push_back(x - y);
            }
            if (diff.empty()) continue;
            ClassImprovement ci;
            ci.label = label;
            ci.axis = axis == 0 ? "yaw" : "pitch";
            ci.n = diff.size();
            ci.improvement_deg = detail::mean_of(diff);
            if (diff.size() >= 2) {
                ci.sem = detail::sem_of(diff);
                ci.ks_p = ks_two_sample(eb, eo).p_value;
            }
            c.classes.push_back(std::move(ci));
        }
    }
    return c;
}

/// Spread of the estimates while the eye is still: per-axis population standard
/// deviation inside each maximal run of consecutive FIXATION samples (runs of at
/// least `min_run` samples), averaged over runs.
struct FixationJitter {
    double yaw = 0.0;
    double pitch = 0.0;
    double mean = 0.0;
    std::size_t runs = 0;
};

inline FixationJitter fixation_jitter(const ModelEvaluation& ev, std::span<const MovementLabel> labels,
                                      std::size_t min_run = 5) {
    if (labels.size() != ev.samples.size()) throw InvalidInput("fixation_jitter: one label per sample is required");
    FixationJitter out;
    std::vector<GazeAngles> run;
    auto close_run = [&] {
        if (run.size() >= std::max<std::size_t>(min_run, 2)) {
            double my = 0.0, mp = 0.0;
            for (const auto& g : run) {
                my += g.yaw_deg;
                mp += g.pitch_deg;
            }
            my /= static_cast<double>(run.size());
            mp /= static_cast<double>(run.size());
            double sy = 0.0, sp = 0.0;
            for (const auto& g : run) {
                sy += (g.yaw_deg - my) * (g.yaw_deg - my);
                sp += (g.pitch_deg - mp) * (g.pitch_deg - mp);
            }
            out.yaw += std::sqrt(sy / static_cast<double>(run.size()));
            out.pitch += std::sqrt(sp / static_cast<double>(run.size()));
            ++out.runs;
        }
        run.clear();
    };
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool contiguous = i > 0 && ev.samples[i].subject_id == ev.samples[i - 1].subject_id &&
                                ev.samples[i].side == ev.samples[i - 1].side &&
                                ev.samples[i].sequence_index == ev.samples[i - 1].sequence_index &&
                                ev.samples[i].frame == ev.samples[i - 1].frame + 1;
        if (!contiguous) close_run();
        if (labels[i] == MovementLabel::kFixation) {
            run.push_back(ev.estimates[i]);
        } else {
            close_run();
        }
    }
    close_run();
    if (out.runs == 0) throw InvalidInput("fixation_jitter: no fixation runs");
    out.yaw /= static_cast<double>(out.runs);
    out.pitch /= static_cast<double>(out.runs);
    out.mean = 0.5 * (out.yaw + out.pitch);
    return out;
}

// ---------------------------------------------------------------------------
// Per-subject breakdown
// ---------------------------------------------------------------------------

struct SubjectRow {
    int subject_id = 0;
    ErrorStats stats;
    std::optional<double> ks_p;  ///< vs. the pooled remaining subjects, on mean errors
    bool flagged = false;
};

inline constexpr double kSubjectAlpha = 0.01;

/// ErrorStats per subject; a subject is flagged when its error distribution
/// differs from the pooled rest at alpha / n_subjects.
inline std::vector<SubjectRow> per_subject_report(std::span<const SampleKey> samples,
                                                  std::span<const SampleError> errors,
                                                  double alpha = kSubjectAlpha) {
    if (samples.size() != errors.size()) throw InvalidInput("per_subject_report: one error per sample is required");
    std::map<int, std::vector<SampleError>> by_subject;
    for (std::size_t i = 0; i < samples.size(); ++i) by_subject[samples[i].subject_id].push_back(errors[i]);
    std::vector<SubjectRow> rows;
    const double threshold = alpha / static_cast<double>(by_subject.size());
    for (const auto& [id, errs] : by_subject) {
        SubjectRow row;
        row.subject_id = id;
        row.stats = error_stats(errs);
        if (by_subject.size() > 1) {
            std::vector<double> mine, rest;
            for (const auto& e : errs) mine.push_back(e.mean);
            for (const auto& [other, oe] : by_subject) {
                if (other == id) continue;
                for (const auto& e : oe) rest.push_back(e.mean);
            }
            row.ks_p = ks_two_sample(mine, rest).p_value;
            row.flagged = *row.ks_p < threshold;
        }
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

struct TraceTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::optional<double>>> rows;
};

/// Ground truth and every estimator's output per frame of one sequence. A
/// window-s estimator has no output for the first s-1 frames.
inline TraceTable export_trace(std::span<GazeEstimator* const> estimators, const PreparedSequence& seq) {
    TraceTable t;
    t.columns = {"frame", "t_ms", "gt_yaw", "gt_pitch"};
    std::vector<std::vector<GazeAngles>> est;
    for (auto* e : estimators) {
        t.columns.push_back(e->name() + "_yaw");
        t.columns.push_back(e->name() + "_pitch");
        est.push_back(e->estimate(seq));
    }
    for (int f = 0; f < seq.length(); ++f) {
        std::vector<std::optional<double>> row{double(f), seq.t_ms[static_cast<std::size_t>(f)],
                                               seq.gt[static_cast<std::size_t>(f)].yaw_deg,
                                               seq.gt[static_cast<std::size_t>(f)].pitch_deg};
        for (std::size_t m = 0; m < estimators.size(); ++m) {
            const int k = f - estimators[m]->window() + 1;
            if (k < 0) {
                row.insert(row.end(), {std::nullopt, std::nullopt});
            } else {
                const auto& g = est[m][static_cast<std::size_t>(k)];
                row.insert(row.end(), {g.yaw_deg, g.pitch_deg});
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Report tables
// ---------------------------------------------------------------------------

namespace detail {

inline std::string cell(const std::optional<double>& v) { return v ? format_fixed6(*v) : std::string(); }

inline std::string p_cell(const std::optional<double>& v) {
    if (!v) return {};
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", *v);
    return buf;
}

inline std::optional<double> parse_optional(std::string_view s) {
    if (s.empty()) return std::nullopt;
    return parse_double(s);
}

}  // namespace detail

inline std::string encode_trace_csv(const TraceTable& t) {
    std::string out;
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
    out += "\n";
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ",";
            if (i == 0 && row[i]) {
                out += std::to_string(static_cast<int>(*row[i]));
            } else {
                out += detail::cell(row[i]);
            }
        }
        out += "\n";
    }
    return out;
}

inline TraceTable parse_trace_csv(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty()) throw DataError("trace: empty file");
    TraceTable t;
    for (auto c : split_csv_line(lines[0])) t.columns.emplace_back(c);
    if (t.columns.size() < 4 || t.columns.size() % 2 != 0) throw DataError("trace: malformed header");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto fields = split_csv_line(lines[i]);
        if (fields.size() != t.columns.size()) throw DataError("trace: row has the wrong number of fields");
        std::vector<std::optional<double>> row;
        for (auto f : fields) row.push_back(detail::parse_optional(f));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline std::string encode_metrics_csv(std::span<const ModelEvaluation> evals) {
    std::string out = "model,window,mae_yaw,std_yaw,mae_pitch,std_pitch,mae_mean,std_mean\n";
    for (const auto& e : evals) {
        const auto& s = e.stats;
        out += e.name + "," + std::to_string(e.window) + "," + format_fixed6(s.mae_yaw) + "," +
               format_fixed6(s.std_yaw) + "," + format_fixed6(s.mae_pitch) + "," + format_fixed6(s.std_pitch) + "," +
               format_fixed6(s.mae_mean) + "," + format_fixed6(s.std_mean) + "\n";
    }
    return out;
}

inline std::string encode_improvement_csv(const Comparison& c) {
    std::string out = "class,axis,improvement_deg,sem,ks_p,n\n";
    for (const auto& ci : c.classes) {
        out += std::string(to_string(ci.label)) + "," + ci.axis + "," + format_fixed6(ci.improvement_deg) + "," +
               detail::cell(ci.sem) + "," + detail::p_cell(ci.ks_p) + "," + std::to_string(ci.n) + "\n";
    }
    return out;
}

inline std::vector<ClassImprovement> parse_improvement_csv(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty() || lines[0] != "class,axis,improvement_deg,sem,ks_p,n") {
        throw DataError("movement_improvement: unexpected header");
    }
    std::vector<ClassImprovement> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split_csv_line(lines[i]);
        if (f.size() != 6) throw DataError("movement_improvement: malformed row");
        ClassImprovement ci;
        ci.label = parse_movement_label(f[0]);
        ci.axis = std::string(f[1]);
        if (ci.axis != "yaw" && ci.axis != "pitch") throw DataError("movement_improvement: unknown axis");
        ci.improvement_deg = parse_double(f[2]);
        ci.sem = detail::parse_optional(f[3]);
        ci.ks_p = detail::parse_optional(f[4]);
        ci.n = static_cast<std::size_t>(parse_double(f[5]));
        out.push_back(std::move(ci));
    }
    return out;
}

inline std::string encode_per_subject_csv(std::span<const SubjectRow> rows) {
    std::string out = "subject,n,mae_yaw,std_yaw,mae_pitch,std_pitch,mae_mean,std_mean,ks_p,flagged\n";
    for (const auto& r : rows) {
        const auto& s = r.stats;
        out += std::to_string(r.subject_id) + "," + std::to_string(s.n) + "," + format_fixed6(s.mae_yaw) + "," +
               format_fixed6(s.std_yaw) + "," + format_fixed6(s.mae_pitch) + "," + format_fixed6(s.std_pitch) + "," +
               format_fixed6(s.mae_mean) + "," + format_fixed6(s.std_mean) + "," + detail::p_cell(r.ks_p) + "," +
               (r.flagged ? "1" : "0") + "\n";
    }
    return out;
}

/// Ground-truth angles of the evaluated samples (input to the distribution plot).
inline std::string encode_gt_samples_csv(const std::vector<PreparedSequence>& sequences, int s_max) {
    std::string out = "subject,side,sequence,frame,yaw_deg,pitch_deg\n";
    for (const auto& seq : sequences) {
        for (int f : common_subset_frames(s_max, seq.length())) {
            const auto& g = seq.gt[static_cast<std::size_t>(f)];
            out += std::to_string(seq.subject_id) + "," + std::string(to_string(seq.source_side)) + "," +
                   std::to_string(seq.sequence_index) + "," + std::to_string(f) + "," + format_fixed6(g.yaw_deg) +
                   "," + format_fixed6(g.pitch_deg) + "\n";
        }
    }
    return out;
}

inline std::vector<GazeAngles> parse_gt_samples_csv(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty() || lines[0] != "subject,side,sequence,frame,yaw_deg,pitch_deg") {
        throw DataError("gt_samples: unexpected header");
    }
    std::vector<GazeAngles> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split_csv_line(lines[i]);
        if (f.size() != 6) throw DataError("gt_samples: malformed row");
        out.push_back({parse_double(f[4]), parse_double(f[5])});
    }
    return out;
}

}  // namespace gazeseq
