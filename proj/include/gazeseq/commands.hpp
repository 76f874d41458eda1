#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gazeseq/checkpoint.hpp"
#include "gazeseq/dataset.hpp"
#include "gazeseq/evaluation.hpp"
#include "gazeseq/plot.hpp"
#include "gazeseq/training.hpp"

// Subcommand bodies behind tools/gazeseq. Argument parsing lives in the tool;
// everything here takes resolved options and reports progress to `log`.
namespace gazeseq::commands {

namespace fs = std::filesystem;

/// Worker count: hardware concurrency, capped by GAZESEQ_THREADS when set.
inline int thread_budget() {
    int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("GAZESEQ_THREADS")) {
        try {
            const int cap = std::stoi(env);
            if (cap >= 1) n = std::min(n, cap);
        } catch (const std::exception&) {
            throw InvalidInput("GAZESEQ_THREADS must be a positive integer");
        }
    }
    return n;
}

// ---------------------------------------------------------------------------
// Training configuration as JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"weight_decay", c.weight_decay},
            {"max_epochs_stage1", c.max_epochs_stage1},
            {"max_epochs_stage2", c.max_epochs_stage2},
            {"patience_stage1", c.patience_stage1},
            {"patience_stage2", c.patience_stage2},
            {"loss", c.loss},
            {"seed", c.seed},
            {"window", c.window},
            {"samples_per_epoch", c.samples_per_epoch},
            {"window_group", c.window_group},
            {"max_steps", c.max_steps}};
}

/// Overlays the keys of `j` on `c`. Unknown keys are rejected so that typos
/// in a config file do not silently fall back to defaults.
inline void apply_json(TrainConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidInput("training config must be a JSON object");
    const nlohmann::json known = to_json(TrainConfig{});
    try {
        for (const auto& [key, value] : j.items()) {
            if (!known.contains(key)) throw InvalidInput("unknown training config key '" + key + "'");
            if (key == "learning_rate") c.learning_rate = value.get<double>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "max_epochs_stage1") c.max_epochs_stage1 = value.get<int>();
            else if (key == "max_epochs_stage2") c.max_epochs_stage2 = value.get<int>();
            else if (key == "patience_stage1") c.patience_stage1 = value.get<int>();
            else if (key == "patience_stage2") c.patience_stage2 = value.get<int>();
            else if (key == "loss") c.loss = value.get<std::string>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "window") c.window = value.get<int>();
            else if (key == "samples_per_epoch") c.samples_per_epoch = value.get<int>();
            else if (key == "window_group") c.window_group = value.get<int>();
            else if (key == "max_steps") c.max_steps = value.get<long>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("bad training config value: ") + e.what());
    }
}

/// Defaults, then the config file, then flag overrides.
inline TrainConfig resolve_config(const std::optional<fs::path>& file, const nlohmann::json& overrides) {
    TrainConfig c;
    if (file) {
        try {
            apply_json(c, nlohmann::json::parse(read_file(*file)));
        } catch (const nlohmann::json::parse_error& e) {
            throw InvalidInput("cannot parse config '" + file->string() + "': " + e.what());
        }
    }
    apply_json(c, overrides);
    validate(c);
    return c;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOptions {
    int subjects = 84;
    std::uint64_t seed = 7;
    fs::path out;
    AngleRange yaw_range{-20.0, 20.0};
    AngleRange pitch_range{-20.0, 20.0};
    double noise_sigma = GenerationParams{}.noise_sigma;
};

struct SynthResult {
    DatasetManifest manifest;
    std::uint64_t manifest_hash = 0;
    std::uint64_t digest = 0;
};

inline SynthResult synth(const SynthOptions& o, std::ostream& log) {
    if (o.out.empty()) throw InvalidInput("--out is required");
    GenerationParams params;
    params.yaw_range = o.yaw_range;
    params.pitch_range = o.pitch_range;
    params.noise_sigma = o.noise_sigma;
    if (!(o.noise_sigma >= 0.0)) throw InvalidInput("noise sigma must be >= 0");
    SynthResult r;
    r.manifest = build_dataset(o.subjects, o.seed, o.out, params, thread_budget());
    r.manifest_hash = manifest_hash(r.manifest);
    r.digest = dataset_digest(o.out);
    log << r.manifest.n_frames << " frames\n";
    log << "manifest hash " << hex64(r.manifest_hash) << "\n";
    log << "content digest " << hex64(r.digest) << "\n";
    return r;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
    int stage = 1;
    fs::path data;
    fs::path run;
    TrainConfig config;
};

struct TrainOutcome {
    fs::path checkpoint_dir;
    TrainLog log;
    CheckpointMeta meta;
};

inline fs::path stage2_dir(const fs::path& run, int window) { return run / ("s1_lstm" + std::to_string(window)); }

inline TrainOutcome train(const TrainOptions& o, std::ostream& log) {
    if (o.stage != 1 && o.stage != 2) throw InvalidInput("--stage must be 1 or 2");
    if (o.data.empty() || o.run.empty()) throw InvalidInput("--data and --run are required");
    validate(o.config);
    const DatasetManifest manifest = load_manifest(o.data);
    const std::string data_hash = hex64(manifest_hash(manifest));

    std::optional<GazeModel<float>> stage1;
    CheckpointMeta parent_meta;
    if (o.stage == 2) {
        if (o.config.window < 2) throw InvalidInput("stage 2 needs --window >= 2");
        if (!fs::exists(checkpoint_files::meta(o.run)) || !fs::exists(checkpoint_files::blob(o.run))) {
            throw InvalidInput("stage-1 checkpoint required in '" + o.run.string() + "'");
        }
        stage1.emplace(load_checkpoint<float>(o.run, &parent_meta));
        if (parent_meta.variant.kind != ModelKind::kStatic1) {
            throw InvalidInput("stage-1 checkpoint required: '" + o.run.string() + "' holds " +
                               std::string(to_string(parent_meta.variant.kind)));
        }
        if (!parent_meta.dataset_hash.empty() && parent_meta.dataset_hash != data_hash) {
            throw DataError("stage-1 checkpoint was trained on a different dataset");
        }
    }

    log << "loading TRAIN and VAL splits from " << o.data.string() << "\n";
    const auto train_set = load_split(o.data, Split::kTrain);
    const auto val_set = load_split(o.data, Split::kVal);
    log << train_set.size() << " train sequences, " << val_set.size() << " validation sequences\n";

    TrainHooks hooks;
    hooks.on_epoch = [&log](const EpochRecord& r) {
        log << "epoch " << r.epoch << "  train_l1 " << format_fixed6(r.train_l1) << "  val_mae " << format_fixed6(r.val_mae_mean)
            << " (yaw " << format_fixed6(r.val_mae_yaw) << ", pitch " << format_fixed6(r.val_mae_pitch) << ")\n";
        log.flush();
    };

    TrainOutcome out;
    std::optional<TrainResult<float>> result;
    if (o.stage == 1) {
        result.emplace(train_stage1(train_set, val_set, o.config, hooks));
        out.checkpoint_dir = o.run;
    } else {
        result.emplace(train_stage2(*stage1, train_set, val_set, o.config, hooks));
        out.checkpoint_dir = stage2_dir(o.run, o.config.window);
        out.meta.parent = fs::absolute(o.run).lexically_normal().string();
    }
    out.log = result->log;
    out.meta.epoch = out.log.best_epoch;
    out.meta.val_mae_mean_deg = out.log.best().val_mae_mean;
    out.meta.seed = o.config.seed;
    out.meta.dataset_root = manifest.root;
    out.meta.dataset_seed = manifest.seed;
    out.meta.dataset_hash = data_hash;
    save_checkpoint(out.checkpoint_dir, result->model, out.meta);
    out.meta = load_checkpoint_meta(out.checkpoint_dir);
    write_file(out.checkpoint_dir / "trainlog.csv", encode_trainlog_csv(out.log));
    write_file(out.checkpoint_dir / "config.json", to_json(o.config).dump(2) + "\n");

    log << "stopped: " << out.log.stop_reason << " after " << out.log.epochs.size() << " epochs ("
        << out.log.steps << " steps)\n";
    log << "best validation MAE " << format_fixed6(out.meta.val_mae_mean_deg) << " deg at epoch "
        << out.log.best_epoch << "\n";
    log << "checkpoint written to " << out.checkpoint_dir.string() << "\n";
    return out;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
    fs::path data;
    std::vector<fs::path> runs;
    int smax = 20;
    fs::path out;
    std::optional<int> label_window;  ///< defaults to the longest model window
    double threshold_deg_s = kDefaultVelocityThreshold;
    int traces = 1;  ///< test sequences exported as trace_*.csv
};

struct EvalReport {
    std::vector<ModelEvaluation> evaluations;
    std::vector<Comparison> comparisons;  ///< first run against each later run
    std::vector<FixationJitter> jitter;   ///< per evaluation
    std::vector<SubjectRow> per_subject;  ///< last run
    double coverage = 0.0;
    nlohmann::json json;
};

namespace detail {

inline nlohmann::json stats_json(const ErrorStats& s) {
    return {{"mae_yaw", s.mae_yaw},   {"std_yaw", s.std_yaw},   {"mae_pitch", s.mae_pitch}, {"std_pitch", s.std_pitch},
            {"mae_mean", s.mae_mean}, {"std_mean", s.std_mean}, {"n", s.n}};
}

inline std::string trace_name(const PreparedSequence& s) {
    return "trace_sub" + layout::zero_pad(s.subject_id, 3) + "_" + std::string(to_string(s.source_side)) + "_seq" +
           layout::zero_pad(s.sequence_index, 2) + ".csv";
}

}  // namespace detail

inline EvalReport evaluate(const EvalOptions& o, std::ostream& log) {
    if (o.runs.empty()) throw InvalidInput("--runs needs at least one run directory");
    if (o.out.empty() || o.data.empty()) throw InvalidInput("--data and --out are required");
    const DatasetManifest manifest = load_manifest(o.data);
    const std::string data_hash = hex64(manifest_hash(manifest));

    std::vector<std::unique_ptr<ModelEstimator>> estimators;
    std::vector<std::string> names;
    int longest = 1;
    for (const auto& run : o.runs) {
        CheckpointMeta meta;
        auto model = load_checkpoint<float>(run, &meta);
        if (meta.dataset_hash.empty() || meta.dataset_hash != data_hash) {
            throw DataError("run '" + run.string() + "' was not trained on the dataset at '" + o.data.string() + "'");
        }
        std::string name = meta.variant.label();
        int dup = 1;
        while (std::find(names.begin(), names.end(), name) != names.end()) {
            name = meta.variant.label() + "#" + std::to_string(++dup);
        }
        names.push_back(name);
        longest = std::max(longest, meta.variant.window);
        estimators.push_back(std::make_unique<ModelEstimator>(name, std::move(model)));
    }
    if (o.smax < longest) {
        throw InvalidInput("--smax " + std::to_string(o.smax) + " is shorter than the longest model window " +
                           std::to_string(longest));
    }
    const int s_label = o.label_window.value_or(longest);

    log << "loading TEST split from " << o.data.string() << "\n";
    const auto test = load_split(o.data, Split::kTest);
    EvalReport r;
    r.coverage = coverage(o.smax);
    for (auto& e : estimators) {
        log << "evaluating " << e->name() << "\n";
        r.evaluations.push_back(evaluate_model(*e, test, o.smax));
        e->model().release();
    }
    const auto labels = window_labels(test, o.smax, s_label, o.threshold_deg_s);
    for (const auto& ev : r.evaluations) {
        try {
            r.jitter.push_back(fixation_jitter(ev, labels));
        } catch (const InvalidInput&) {
            r.jitter.push_back({});
        }
    }
    for (std::size_t i = 1; i < r.evaluations.size(); ++i) {
        r.comparisons.push_back(compare_models(r.evaluations.front(), r.evaluations[i], labels));
    }
    r.per_subject = per_subject_report(r.evaluations.back().samples, r.evaluations.back().errors);

    std::error_code ec;
    fs::create_directories(o.out, ec);
    if (ec) throw PersistenceError("cannot create '" + o.out.string() + "': " + ec.message());
    write_file(o.out / "metrics.csv", encode_metrics_csv(r.evaluations));
    if (!r.comparisons.empty()) write_file(o.out / "movement_improvement.csv", encode_improvement_csv(r.comparisons.back()));
    write_file(o.out / "per_subject.csv", encode_per_subject_csv(r.per_subject));
    write_file(o.out / "gt_samples.csv", encode_gt_samples_csv(test, o.smax));
    std::vector<GazeEstimator*> raw;
    for (auto& e : estimators) raw.push_back(e.get());
    std::vector<std::string> trace_files;
    for (int i = 0; i < std::min<int>(o.traces, static_cast<int>(test.size())); ++i) {
        const auto& seq = test[static_cast<std::size_t>(i)];
        trace_files.push_back(detail::trace_name(seq));
        write_file(o.out / trace_files.back(), encode_trace_csv(export_trace(raw, seq)));
    }

    nlohmann::json j;
    j["dataset_root"] = manifest.root;
    j["dataset_hash"] = data_hash;
    j["smax"] = o.smax;
    j["coverage"] = r.coverage;
    j["label_window"] = s_label;
    j["velocity_threshold_deg_s"] = o.threshold_deg_s;
    j["n_test_sequences"] = test.size();
    j["n_samples"] = r.evaluations.front().samples.size();
    j["traces"] = trace_files;
    nlohmann::json class_counts = nlohmann::json::object();
    for (MovementLabel l : kMovementLabels) {
        class_counts[std::string(to_string(l))] = std::count(labels.begin(), labels.end(), l);
    }
    j["class_counts"] = class_counts;
    for (std::size_t i = 0; i < r.evaluations.size(); ++i) {
        const auto& ev = r.evaluations[i];
        nlohmann::json m{{"name", ev.name},
                         {"run", fs::absolute(o.runs[i]).lexically_normal().string()},
                         {"window", ev.window},
                         {"stats", detail::stats_json(ev.stats)}};
        if (r.jitter[i].runs > 0) {
            m["fixation_jitter"] = {{"yaw", r.jitter[i].yaw},
                                    {"pitch", r.jitter[i].pitch},
                                    {"mean", r.jitter[i].mean},
                                    {"runs", r.jitter[i].runs}};
        }
        j["models"].push_back(m);
    }
    j["comparisons"] = nlohmann::json::array();
    for (const auto& c : r.comparisons) {
        nlohmann::json cj{{"baseline", c.baseline},
                          {"model", c.model},
                          {"improvement_mean_deg", c.improvement_mean_deg},
                          {"relative_improvement_pct", c.relative_improvement_pct}};
        if (c.wilcoxon) {
            cj["wilcoxon"] = {{"statistic", c.wilcoxon->statistic}, {"p_value", c.wilcoxon->p_value}, {"n", c.wilcoxon->n}};
        } else {
            cj["wilcoxon"] = nullptr;
            cj["wilcoxon_note"] = c.wilcoxon_note;
        }
        j["comparisons"].push_back(cj);
    }
    j["per_subject_model"] = r.evaluations.back().name;
    j["flagged_subjects"] = nlohmann::json::array();
    for (const auto& row : r.per_subject) {
        if (row.flagged) j["flagged_subjects"].push_back(row.subject_id);
    }
    write_file(o.out / "report.json", j.dump(2) + "\n");
    r.json = std::move(j);

    log << "common subset: s_max " << o.smax << ", coverage " << std::fixed << std::setprecision(2) << r.coverage
        << std::defaultfloat << " (" << r.evaluations.front().samples.size() << " samples)\n";
    for (std::size_t i = 0; i < r.evaluations.size(); ++i) {
        const auto& s = r.evaluations[i].stats;
        log << r.evaluations[i].name << ": MAE yaw " << format_fixed6(s.mae_yaw) << ", pitch " << format_fixed6(s.mae_pitch)
            << ", mean " << format_fixed6(s.mae_mean) << " deg\n";
    }
    for (const auto& c : r.comparisons) {
        log << c.model << " vs " << c.baseline << ": " << format_fixed6(c.relative_improvement_pct) << "% ";
        if (c.wilcoxon) {
            log << "(Wilcoxon p = " << c.wilcoxon->p_value << ")\n";
        } else {
            log << "(" << c.wilcoxon_note << ")\n";
        }
    }
    log << "report written to " << o.out.string() << "\n";
    return r;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct PlotOptions {
    fs::path report;
    std::string kind;
    fs::path out;
    std::optional<fs::path> trace;  ///< defaults to the first trace_*.csv of the report
    double bin_deg = 1.0;
};

inline void plot(const PlotOptions& o, std::ostream& log) {
    if (o.out.empty()) throw InvalidInput("--out is required");
    std::string svg;
    if (o.kind == "trace") {
        fs::path file;
        if (o.trace) {
            file = *o.trace;
        } else {
            std::vector<fs::path> found;
            if (fs::is_directory(o.report)) {
                for (const auto& e : fs::directory_iterator(o.report)) {
                    const std::string n = e.path().filename().string();
                    if (n.starts_with("trace_") && n.ends_with(".csv")) found.push_back(e.path());
                }
            }
            if (found.empty()) throw DataError("no trace_*.csv in '" + o.report.string() + "'");
            file = *std::min_element(found.begin(), found.end());
        }
        svg = svg::trace_chart(parse_trace_csv(read_file(file)));
    } else if (o.kind == "improvement") {
        const fs::path file = o.report / "movement_improvement.csv";
        if (!fs::exists(file)) throw DataError("'" + file.string() + "' not found; evaluate at least two runs");
        svg = svg::improvement_chart(parse_improvement_csv(read_file(file)));
    } else if (o.kind == "distribution") {
        svg = svg::distribution_chart(parse_gt_samples_csv(read_file(o.report / "gt_samples.csv")), o.bin_deg);
    } else {
        throw InvalidInput("unknown plot kind '" + o.kind + "' (expected trace, improvement or distribution)");
    }
    if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
    write_file(o.out, svg);
    log << "wrote " << o.out.string() << "\n";
}

// ---------------------------------------------------------------------------
// annotate
// ---------------------------------------------------------------------------

struct AnnotateOptions {
    fs::path data;
    Split split = Split::kTest;
    double threshold_deg_s = kDefaultVelocityThreshold;
    fs::path out;
};

/// I-VT labels for every frame of a split next to the simulator's labels.
/// Returns the fraction of frames on which the two agree.
inline double annotate(const AnnotateOptions& o, std::ostream& log) {
    if (o.out.empty()) throw InvalidInput("--out is required");
    const Dataset d = load_dataset(o.data, {o.split});
    std::string csv = "subject,side,sequence,frame,simulator,ivt\n";
    std::size_t agree = 0, total = 0;
    for (const auto& rec : d.recordings) {
        for (const auto& seq : rec.sequences) {
            std::vector<GazeAngles> gt;
            for (const auto& f : seq.frames) gt.push_back(f.gt);
            const auto ivt = annotate_frames(gt, o.threshold_deg_s);
            for (std::size_t i = 0; i < ivt.size(); ++i) {
                agree += ivt[i] == seq.frames[i].label;
                ++total;
                csv += std::to_string(rec.subject_id) + "," + std::string(to_string(rec.side)) + "," +
                       std::to_string(seq.index) + "," + std::to_string(i) + "," +
                       std::string(to_string(seq.frames[i].label)) + "," + std::string(to_string(ivt[i])) + "\n";
            }
        }
    }
    if (total == 0) throw DataError("split " + std::string(to_string(o.split)) + " is empty");
    if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
    write_file(o.out, csv);
    const double rate = static_cast<double>(agree) / static_cast<double>(total);
    log << total << " frames annotated, agreement with simulator labels " << format_fixed6(100.0 * rate) << "%\n";
    return rate;
}

}  // namespace gazeseq::commands
