#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gazeseq/commands.hpp"

namespace {

using namespace gazeseq;
namespace fs = std::filesystem;

/// "A" means [-A, A]; "LO,HI" is taken literally.
AngleRange parse_range(const std::string& text) {
    const auto comma = text.find(',');
    try {
        if (comma == std::string::npos) {
            const double a = std::stod(text);
            return {-a, a};
        }
        return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
    } catch (const std::exception&) {
        throw InvalidInput("malformed angle range '" + text + "' (use A or LO,HI)");
    }
}

struct TrainFlags {
    std::optional<std::string> config;
    std::optional<int> window;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    std::optional<int> batch_size;
    std::optional<double> weight_decay;
    std::optional<int> max_epochs;
    std::optional<int> patience;
    std::optional<int> samples_per_epoch;
    std::optional<int> window_group;
    std::optional<long> max_steps;

    nlohmann::json overrides(int stage) const {
        nlohmann::json j = nlohmann::json::object();
        const std::string suffix = "_stage" + std::to_string(stage);
        if (window) j["window"] = *window;
        if (seed) j["seed"] = *seed;
        if (lr) j["learning_rate"] = *lr;
        if (batch_size) j["batch_size"] = *batch_size;
        if (weight_decay) j["weight_decay"] = *weight_decay;
        if (max_epochs) j["max_epochs" + suffix] = *max_epochs;
        if (patience) j["patience" + suffix] = *patience;
        if (samples_per_epoch) j["samples_per_epoch"] = *samples_per_epoch;
        if (window_group) j["window_group"] = *window_group;
        if (max_steps) j["max_steps"] = *max_steps;
        return j;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic eye-image sequences, static and temporal gaze regressors, and their evaluation."};
    app.require_subcommand(1);

    // synth
    commands::SynthOptions synth;
    std::string synth_out, yaw_range = "20", pitch_range = "20";
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset and its manifest");
    synth_cmd->add_option("--subjects", synth.subjects, "Number of subjects (>= 8)")->required();
    synth_cmd->add_option("--seed", synth.seed, "Generation seed")->capture_default_str();
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--yaw-range", yaw_range, "Target yaw range in degrees: A for +-A, or LO,HI")
        ->capture_default_str();
    synth_cmd->add_option("--pitch-range", pitch_range, "Target pitch range in degrees: A for +-A, or LO,HI")
        ->capture_default_str();
    synth_cmd->add_option("--noise", synth.noise_sigma, "Sensor noise sigma in gray levels")->capture_default_str();

    // train
    commands::TrainOptions train;
    std::string train_data, train_run;
    TrainFlags tf;
    auto* train_cmd = app.add_subcommand("train", "Train stage 1 (Static1) or stage 2 (S1+LSTM)");
    train_cmd->add_option("--stage", train.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
    train_cmd->add_option("--data", train_data, "Dataset directory")->required();
    train_cmd->add_option("--run", train_run,
                          "Run directory; stage 2 reads its stage-1 checkpoint and writes to RUN/s1_lstm<window>")
        ->required();
    train_cmd->add_option("--window", tf.window, "Stage-2 window length s (default 15)");
    train_cmd->add_option("--config", tf.config, "JSON file with training config fields");
    train_cmd->add_option("--seed", tf.seed, "Training seed");
    train_cmd->add_option("--lr", tf.lr, "Learning rate");
    train_cmd->add_option("--batch-size", tf.batch_size, "Batch size");
    train_cmd->add_option("--weight-decay", tf.weight_decay, "Weight decay");
    train_cmd->add_option("--max-epochs", tf.max_epochs, "Epoch cap for this stage");
    train_cmd->add_option("--patience", tf.patience, "Early-stopping patience for this stage");
    train_cmd->add_option("--samples-per-epoch", tf.samples_per_epoch, "Training units per epoch (0 = all)");
    train_cmd->add_option("--window-group", tf.window_group, "Consecutive stage-2 windows shuffled as one block");
    train_cmd->add_option("--max-steps", tf.max_steps, "Optimizer step cap (0 = none)");

    // eval
    commands::EvalOptions eval;
    std::string eval_data, eval_out;
    std::vector<std::string> eval_runs;
    std::optional<int> label_window;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate runs on the TEST split and write report tables");
    eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
    eval_cmd->add_option("--runs", eval_runs, "Comma-separated checkpoint directories; the first is the baseline")
        ->required()
        ->delimiter(',');
    eval_cmd->add_option("--smax", eval.smax, "Longest window; defines the common subset")->capture_default_str();
    eval_cmd->add_option("--out", eval_out, "Report directory")->required();
    eval_cmd->add_option("--label-window", label_window, "Frames used to classify movement (default: longest window)");
    eval_cmd->add_option("--threshold", eval.threshold_deg_s, "I-VT velocity threshold in deg/s")->capture_default_str();
    eval_cmd->add_option("--traces", eval.traces, "Number of test sequences exported as traces")->capture_default_str();

    // plot
    commands::PlotOptions plot;
    std::string plot_report, plot_out;
    std::optional<std::string> plot_trace;
    auto* plot_cmd = app.add_subcommand("plot", "Render a report table as SVG");
    plot_cmd->add_option("--report", plot_report, "Report directory written by eval")->required();
    plot_cmd->add_option("--kind", plot.kind, "trace, improvement or distribution")->required();
    plot_cmd->add_option("--out", plot_out, "Output SVG file")->required();
    plot_cmd->add_option("--trace", plot_trace, "Trace CSV to draw (default: first in the report)");
    plot_cmd->add_option("--bin", plot.bin_deg, "Distribution bin size in degrees")->capture_default_str();

    // annotate
    commands::AnnotateOptions annotate;
    std::string annotate_data, annotate_out, annotate_split = "TEST";
    auto* annotate_cmd = app.add_subcommand("annotate", "Label frames of a split with the velocity-threshold annotator");
    annotate_cmd->add_option("--data", annotate_data, "Dataset directory")->required();
    annotate_cmd->add_option("--split", annotate_split, "TRAIN, VAL or TEST")->capture_default_str();
    annotate_cmd->add_option("--threshold", annotate.threshold_deg_s, "Velocity threshold in deg/s")
        ->capture_default_str();
    annotate_cmd->add_option("--out", annotate_out, "Output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*synth_cmd) {
            synth.out = synth_out;
            synth.yaw_range = parse_range(yaw_range);
            synth.pitch_range = parse_range(pitch_range);
            commands::synth(synth, std::cout);
        } else if (*train_cmd) {
            train.data = train_data;
            train.run = train_run;
            std::optional<fs::path> config_file;
            if (tf.config) config_file = *tf.config;
            train.config = commands::resolve_config(config_file, tf.overrides(train.stage));
            std::cout << "config " << commands::to_json(train.config).dump() << "\n";
            commands::train(train, std::cout);
        } else if (*eval_cmd) {
            eval.data = eval_data;
            eval.out = eval_out;
            eval.label_window = label_window;
            for (const auto& r : eval_runs) eval.runs.emplace_back(r);
            commands::evaluate(eval, std::cout);
        } else if (*plot_cmd) {
            plot.report = plot_report;
            plot.out = plot_out;
            if (plot_trace) plot.trace = fs::path(*plot_trace);
            commands::plot(plot, std::cout);
        } else if (*annotate_cmd) {
            annotate.data = annotate_data;
            annotate.out = annotate_out;
            annotate.split = parse_split(annotate_split);
            commands::annotate(annotate, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
