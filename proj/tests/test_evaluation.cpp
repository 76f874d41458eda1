#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <regex>

#include "gazeseq/evaluation.hpp"
#include "gazeseq/plot.hpp"

using namespace gazeseq;

namespace {

/// 100-frame sequences following simulated scanpaths. Frames are 1x1
/// placeholders: the estimators used here never look at pixels.
std::vector<PreparedSequence> scanpath_sequences(int n_subjects, int per_subject, std::uint64_t seed) {
    std::vector<PreparedSequence> out;
    for (int subject = 0; subject < n_subjects; ++subject) {
        const auto script = generate_stimulus(seed + subject, 12, {}, {});
        const auto path = simulate_scanpath(script, {}, seed + 100 + subject);
        for (int q = 0; q < per_subject; ++q) {
            PreparedSequence p;
            p.subject_id = subject;
            p.source_side = q % 2 ? Side::kRight : Side::kLeft;
            p.sequence_index = q;
            for (int i = 0; i < 100; ++i) {
                const auto& f = path[static_cast<std::size_t>(q * 100 + i)];
                EyeFrame px;
                px.rows = px.cols = 1;
                px.pixels.assign(1, 0);
                p.frames.push_back(px);
                p.gt.push_back(f.gaze);
                p.targets.push_back(to_source_side(f.gaze, p.source_side));
                p.labels.push_back(f.label);
                p.t_ms.push_back(10.0 * (q * 100 + i));
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::vector<PreparedSequence> constant_sequences(int n, GazeAngles g) {
    auto seqs = scanpath_sequences(1, n, 1);
    for (auto& s : seqs) std::fill(s.gt.begin(), s.gt.end(), g);
    return seqs;
}

/// Reference classifier over the F/S string of a window.
MovementLabel regex_label(const std::string& s) {
    if (std::regex_match(s, std::regex("F+"))) return MovementLabel::kFixation;
    if (std::regex_match(s, std::regex("S+"))) return MovementLabel::kSaccade;
    if (std::regex_match(s, std::regex("F+S+"))) return MovementLabel::kFixToSac;
    if (std::regex_match(s, std::regex("S+F+"))) return MovementLabel::kSacToFix;
    if (std::regex_match(s, std::regex("F+S+F+"))) return MovementLabel::kFixSacFix;
    return MovementLabel::kOther;
}

std::size_t count_substr(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// annotation
// ---------------------------------------------------------------------------

TEST(Annotate, VelocityThreshold) {
    std::vector<GazeAngles> trace{{0, 0}, {0, 0}, {1, 0}, {2, 0}, {2.7, 0}, {2.7, 0}};
    const auto l = annotate_frames(trace);
    using F = FrameLabel;
    EXPECT_EQ(l, (std::vector<F>{F::kFix, F::kFix, F::kSac, F::kSac, F::kFix, F::kFix}));

    std::vector<GazeAngles> fast{{0, 0}, {5, 0}, {5, 0}};
    EXPECT_EQ(annotate_frames(fast)[0], F::kSac);
    EXPECT_EQ(annotate_frames(fast, 600.0)[1], F::kFix);
    EXPECT_THROW(annotate_frames(std::vector<GazeAngles>{{0, 0}}), InvalidInput);
}

TEST(Annotate, AgreesWithSimulatorOnSaccadeFrames) {
    const auto seqs = scanpath_sequences(3, 10, 4);
    std::size_t agree = 0, total = 0;
    for (const auto& s : seqs) {
        const auto l = annotate_frames(s.gt);
        for (std::size_t i = 0; i < l.size(); ++i) agree += l[i] == s.labels[i];
        total += l.size();
    }
    EXPECT_GT(static_cast<double>(agree) / static_cast<double>(total), 0.97);
}

TEST(LabelWindow, MatchesRegexOracleOnEveryShortString) {
    for (int len = 1; len <= 8; ++len) {
        for (int bits = 0; bits < (1 << len); ++bits) {
            std::vector<FrameLabel> labels;
            std::string s;
            for (int i = 0; i < len; ++i) {
                const bool sac = (bits >> i) & 1;
                labels.push_back(sac ? FrameLabel::kSac : FrameLabel::kFix);
                s += sac ? 'S' : 'F';
            }
            EXPECT_EQ(label_window(labels), regex_label(s)) << s;
        }
    }
    EXPECT_THROW(label_window(std::vector<FrameLabel>{}), InvalidInput);
}

TEST(LabelWindow, StringRoundTrip) {
    for (MovementLabel l : kMovementLabels) EXPECT_EQ(parse_movement_label(to_string(l)), l);
    EXPECT_THROW(parse_movement_label("BLINK"), DataError);
}

// ---------------------------------------------------------------------------
// common subset and scoring
// ---------------------------------------------------------------------------

TEST(CommonSubset, FramesAndCoverage) {
    const auto f = common_subset_frames(20);
    ASSERT_EQ(f.size(), 81u);
    EXPECT_EQ(f.front(), 19);
    EXPECT_EQ(f.back(), 99);
    EXPECT_DOUBLE_EQ(coverage(20), 0.81);
    EXPECT_DOUBLE_EQ(coverage(1), 1.0);
    EXPECT_THROW(common_subset_frames(0), InvalidInput);
    EXPECT_THROW(common_subset_frames(101), InvalidInput);
    const auto seqs = scanpath_sequences(2, 3, 1);
    EXPECT_EQ(common_subset(seqs, 10).size(), 6u * 91u);
}

TEST(Evaluate, EchoScoresZeroAtEveryWindow) {
    const auto seqs = scanpath_sequences(2, 4, 2);
    for (int w : {1, 5, 20}) {
        GroundTruthEcho echo(w);
        const auto ev = evaluate_model(echo, seqs, 20);
        EXPECT_EQ(ev.samples.size(), 8u * 81u);
        EXPECT_EQ(ev.stats.mae_mean, 0.0);
        EXPECT_EQ(ev.samples, common_subset(seqs, 20));
    }
    GroundTruthEcho too_long(25);
    EXPECT_THROW(evaluate_model(too_long, seqs, 20), InvalidInput);
}

TEST(Evaluate, ConstantMatchesDirectAverage) {
    const auto seqs = scanpath_sequences(2, 4, 3);
    ConstantEstimator c({1.5, -2.0}, 10);
    const auto ev = evaluate_model(c, seqs, 15);
    double yaw = 0.0, pitch = 0.0;
    std::size_t n = 0;
    for (const auto& s : seqs) {
        for (int f = 14; f < 100; ++f) {
            yaw += std::abs(s.gt[static_cast<std::size_t>(f)].yaw_deg - 1.5);
            pitch += std::abs(s.gt[static_cast<std::size_t>(f)].pitch_deg + 2.0);
            ++n;
        }
    }
    EXPECT_EQ(ev.stats.n, n);
    EXPECT_NEAR(ev.stats.mae_yaw, yaw / n, 1e-12);
    EXPECT_NEAR(ev.stats.mae_pitch, pitch / n, 1e-12);
}

TEST(Evaluate, MissingFramesAreADataError) {
    auto seqs = scanpath_sequences(1, 2, 1);
    seqs[1].frames.pop_back();
    seqs[1].gt.pop_back();
    GroundTruthEcho echo;
    EXPECT_THROW(evaluate_model(echo, seqs, 10), DataError);
}

// ---------------------------------------------------------------------------
// comparisons
// ---------------------------------------------------------------------------

TEST(Compare, IdenticalModelsAreDegenerate) {
    const auto seqs = scanpath_sequences(1, 3, 1);
    ConstantEstimator a({0, 0}, 1, "a"), b({0, 0}, 5, "b");
    const auto ea = evaluate_model(a, seqs, 5);
    const auto eb = evaluate_model(b, seqs, 5);
    const auto labels = window_labels(seqs, 5, 5);
    const auto c = compare_models(ea, eb, labels);
    EXPECT_FALSE(c.wilcoxon.has_value());
    EXPECT_FALSE(c.wilcoxon_note.empty());
    EXPECT_EQ(c.improvement_mean_deg, 0.0);
    for (const auto& ci : c.classes) EXPECT_EQ(ci.improvement_deg, 0.0);
}

TEST(Compare, ConstantDifferenceHasZeroSem) {
    const auto seqs = constant_sequences(4, {0.0, 0.0});
    ConstantEstimator far({3.0, 3.0}, 1, "far"), near({1.0, -1.0}, 1, "near");
    const auto labels = window_labels(seqs, 10, 10);
    const auto c = compare_models(evaluate_model(far, seqs, 10), evaluate_model(near, seqs, 10), labels);
    ASSERT_EQ(c.classes.size(), 2u);  // FIXATION only, both axes
    for (const auto& ci : c.classes) {
        EXPECT_EQ(ci.label, MovementLabel::kFixation);
        EXPECT_DOUBLE_EQ(ci.improvement_deg, 2.0);
        ASSERT_TRUE(ci.sem.has_value());
        EXPECT_DOUBLE_EQ(*ci.sem, 0.0);
        EXPECT_EQ(ci.n, 4u * 91u);
    }
    EXPECT_DOUBLE_EQ(c.relative_improvement_pct, 100.0 * 2.0 / 3.0);
    ASSERT_TRUE(c.wilcoxon.has_value());
    EXPECT_LT(c.wilcoxon->p_value, 1e-10);
}

TEST(Compare, GroupByMatchesOracle) {
    Rng rng(21);
    std::uniform_int_distribution<int> pick(0, 5);
    std::exponential_distribution<double> err(1.0);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 60;
        ModelEvaluation a, b;
        a.name = "a";
        b.name = "b";
        std::vector<MovementLabel> labels;
        for (int i = 0; i < n; ++i) {
            a.samples.push_back({0, Side::kLeft, 0, i});
            SampleError ea{err(rng), err(rng), 0}, eb{err(rng), err(rng), 0};
            ea.mean = 0.5 * (ea.yaw + ea.pitch);
            eb.mean = 0.5 * (eb.yaw + eb.pitch);
            a.errors.push_back(ea);
            b.errors.push_back(eb);
            // Skew toward a few classes so that some are rare.
            const int k = pick(rng);
            labels.push_back(kMovementLabels[static_cast<std::size_t>(k < 3 ? 0 : k == 3 ? 1 : trial % 6)]);
        }
        b.samples = a.samples;
        a.stats = error_stats(a.errors);
        b.stats = error_stats(b.errors);
        const auto c = compare_models(a, b, labels);

        std::map<std::pair<MovementLabel, int>, std::vector<double>> groups;
        for (int i = 0; i < n; ++i) {
            groups[{labels[i], 0}].push_back(a.errors[i].yaw - b.errors[i].yaw);
            groups[{labels[i], 1}].push_back(a.errors[i].pitch - b.errors[i].pitch);
        }
        ASSERT_EQ(c.classes.size(), groups.size());
        for (const auto& ci : c.classes) {
            const auto& d = groups.at({ci.label, ci.axis == "yaw" ? 0 : 1});
            ASSERT_EQ(ci.n, d.size());
            double m = 0.0;
            for (double x : d) m += x;
            m /= d.size();
            EXPECT_NEAR(ci.improvement_deg, m, 1e-12);
            if (d.size() < 2) {
                EXPECT_FALSE(ci.tested());
                EXPECT_FALSE(ci.sem.has_value());
                continue;
            }
            double ss = 0.0;
            for (double x : d) ss += (x - m) * (x - m);
            EXPECT_NEAR(*ci.sem, std::sqrt(ss / (d.size() - 1) / d.size()), 1e-12);
            EXPECT_TRUE(ci.tested());
            EXPECT_GE(*ci.ks_p, 0.0);
            EXPECT_LE(*ci.ks_p, 1.0);
        }
    }
}

TEST(Compare, RejectsMismatchedSamples) {
    const auto seqs = scanpath_sequences(1, 2, 1);
    GroundTruthEcho e;
    const auto a = evaluate_model(e, seqs, 5);
    const auto b = evaluate_model(e, seqs, 10);
    EXPECT_THROW(compare_models(a, b, window_labels(seqs, 5, 5)), InvalidInput);
    EXPECT_THROW(compare_models(a, a, window_labels(seqs, 10, 10)), InvalidInput);
}

// ---------------------------------------------------------------------------
// fixation jitter
// ---------------------------------------------------------------------------

TEST(FixationJitter, PopulationStdPerRun) {
    ModelEvaluation ev;
    std::vector<MovementLabel> labels;
    for (int f = 0; f < 20; ++f) {
        ev.samples.push_back({0, Side::kLeft, 0, f});
        // Run one: frames 0-9, yaw alternates 0/2. Frame 10 breaks it.
        // Run two: frames 11-19, yaw constant, pitch alternates 1/-1.
        if (f < 10) {
            ev.estimates.push_back({f % 2 ? 2.0 : 0.0, 5.0});
        } else {
            ev.estimates.push_back({7.0, f % 2 ? 1.0 : -1.0});
        }
        labels.push_back(f == 10 ? MovementLabel::kSaccade : MovementLabel::kFixation);
    }
    ev.estimates[11] = {7.0, 1.0};
    // Run two has 9 samples: pitch values 1,-1,1,...,1 -> mean 1/9.
    double m = 0.0;
    for (int f = 11; f < 20; ++f) m += ev.estimates[static_cast<std::size_t>(f)].pitch_deg;
    m /= 9.0;
    double ss = 0.0;
    for (int f = 11; f < 20; ++f) ss += std::pow(ev.estimates[static_cast<std::size_t>(f)].pitch_deg - m, 2);
    const auto j = fixation_jitter(ev, labels);
    EXPECT_EQ(j.runs, 2u);
    EXPECT_NEAR(j.yaw, (1.0 + 0.0) / 2.0, 1e-12);
    EXPECT_NEAR(j.pitch, (0.0 + std::sqrt(ss / 9.0)) / 2.0, 1e-12);
    EXPECT_NEAR(j.mean, 0.5 * (j.yaw + j.pitch), 1e-12);
}

TEST(FixationJitter, ShortAndBrokenRunsAreIgnored) {
    ModelEvaluation ev;
    std::vector<MovementLabel> labels;
    // Two sequences of four fixation samples each: too short on their own.
    for (int q = 0; q < 2; ++q) {
        for (int f = 0; f < 4; ++f) {
            ev.samples.push_back({0, Side::kLeft, q, f});
            ev.estimates.push_back({double(f), 0.0});
            labels.push_back(MovementLabel::kFixation);
        }
    }
    EXPECT_THROW(fixation_jitter(ev, labels), InvalidInput);
    EXPECT_EQ(fixation_jitter(ev, labels, 4).runs, 2u);
}

// ---------------------------------------------------------------------------
// per-subject breakdown
// ---------------------------------------------------------------------------

TEST(PerSubject, RarelyFlagsUnderTheNull) {
    Rng rng(5);
    std::gamma_distribution<double> g(2.0, 0.5);
    int flagged = 0;
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<SampleKey> keys;
        std::vector<SampleError> errors;
        for (int s = 0; s < 8; ++s) {
            for (int i = 0; i < 150; ++i) {
                keys.push_back({s, Side::kLeft, 0, i});
                const double y = g(rng), p = g(rng);
                errors.push_back({y, p, 0.5 * (y + p)});
            }
        }
        for (const auto& row : per_subject_report(keys, errors)) flagged += row.flagged;
    }
    // Family-wise rate alpha = 0.01 per trial.
    EXPECT_LE(flagged, 3);
}

TEST(PerSubject, FlagsAShiftedSubject) {
    Rng rng(6);
    std::gamma_distribution<double> g(2.0, 0.5);
    std::vector<SampleKey> keys;
    std::vector<SampleError> errors;
    for (int s = 0; s < 6; ++s) {
        for (int i = 0; i < 200; ++i) {
            keys.push_back({s, Side::kLeft, 0, i});
            const double shift = s == 3 ? 1.5 : 0.0;
            const double y = g(rng) + shift, p = g(rng) + shift;
            errors.push_back({y, p, 0.5 * (y + p)});
        }
    }
    const auto rows = per_subject_report(keys, errors);
    ASSERT_EQ(rows.size(), 6u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.stats.n, 200u);
        EXPECT_LE(*rows[3].ks_p, *r.ks_p);
    }
    EXPECT_TRUE(rows[3].flagged);
    EXPECT_LT(*rows[3].ks_p, 1e-20);
    const std::string csv = encode_per_subject_csv(rows);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

// ---------------------------------------------------------------------------
// traces and tables
// ---------------------------------------------------------------------------

TEST(Trace, AlignsEstimatesToTheirLastFrame) {
    auto seqs = scanpath_sequences(1, 1, 9);
    GroundTruthEcho echo(1, "echo");
    ConstantEstimator c({1, 2}, 5, "c5");
    GazeEstimator* ests[] = {&echo, &c};
    const auto t = export_trace(ests, seqs[0]);
    EXPECT_EQ(t.columns, (std::vector<std::string>{"frame", "t_ms", "gt_yaw", "gt_pitch", "echo_yaw", "echo_pitch",
                                                   "c5_yaw", "c5_pitch"}));
    ASSERT_EQ(t.rows.size(), 100u);
    for (int f = 0; f < 100; ++f) {
        const auto& row = t.rows[static_cast<std::size_t>(f)];
        EXPECT_EQ(*row[4], *row[2]);
        EXPECT_EQ(row[6].has_value(), f >= 4);
    }

    const auto back = parse_trace_csv(encode_trace_csv(t));
    EXPECT_EQ(back.columns, t.columns);
    ASSERT_EQ(back.rows.size(), t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        for (std::size_t k = 0; k < t.columns.size(); ++k) {
            ASSERT_EQ(back.rows[r][k].has_value(), t.rows[r][k].has_value());
            if (t.rows[r][k]) EXPECT_NEAR(*back.rows[r][k], *t.rows[r][k], 5e-7);
        }
    }
}

TEST(Tables, ImprovementRoundTrip) {
    Comparison c;
    c.classes.push_back({MovementLabel::kFixation, "yaw", 0.25, 0.01, 3.2e-5, 120});
    c.classes.push_back({MovementLabel::kSaccade, "pitch", -0.5, std::nullopt, std::nullopt, 1});
    const auto back = parse_improvement_csv(encode_improvement_csv(c));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].label, MovementLabel::kFixation);
    EXPECT_DOUBLE_EQ(back[0].improvement_deg, 0.25);
    EXPECT_DOUBLE_EQ(*back[0].sem, 0.01);
    EXPECT_DOUBLE_EQ(*back[0].ks_p, 3.2e-5);
    EXPECT_EQ(back[0].n, 120u);
    EXPECT_FALSE(back[1].sem.has_value());
    EXPECT_FALSE(back[1].tested());
    EXPECT_THROW(parse_improvement_csv("class,axis\n"), DataError);
}

TEST(Tables, GroundTruthSamplesRoundTrip) {
    const auto seqs = scanpath_sequences(2, 2, 3);
    const auto back = parse_gt_samples_csv(encode_gt_samples_csv(seqs, 20));
    ASSERT_EQ(back.size(), 4u * 81u);
    EXPECT_NEAR(back[0].yaw_deg, seqs[0].gt[19].yaw_deg, 5e-7);
    EXPECT_NEAR(back.back().pitch_deg, seqs[3].gt[99].pitch_deg, 5e-7);
}

TEST(Tables, MetricsHeader) {
    const auto seqs = scanpath_sequences(1, 1, 3);
    GroundTruthEcho e;
    const std::vector<ModelEvaluation> evs{evaluate_model(e, seqs, 1)};
    const std::string csv = encode_metrics_csv(evs);
    EXPECT_EQ(csv, "model,window,mae_yaw,std_yaw,mae_pitch,std_pitch,mae_mean,std_mean\n"
                   "echo,1,0.000000,0.000000,0.000000,0.000000,0.000000,0.000000\n");
}

// ---------------------------------------------------------------------------
// charts
// ---------------------------------------------------------------------------

TEST(Charts, TraceHasOnePolylinePerSeriesAndAxis) {
    const auto seqs = scanpath_sequences(1, 1, 9);
    GroundTruthEcho echo;
    ConstantEstimator c({1, 2}, 5, "c5");
    GazeEstimator* ests[] = {&echo, &c};
    const std::string svg = svg::trace_chart(export_trace(ests, seqs[0]));
    EXPECT_EQ(count_substr(svg, "<polyline class=\"series\""), 6u);
    EXPECT_EQ(count_substr(svg, "data-series=\"gt\""), 2u);
    EXPECT_EQ(count_substr(svg, "data-series=\"c5\""), 2u);
    EXPECT_EQ(count_substr(svg, "<svg"), 1u);
    EXPECT_EQ(count_substr(svg, "</svg>"), 1u);
}

TEST(Charts, ImprovementBarsWhiskersAndMarkers) {
    std::vector<ClassImprovement> rows{
        {MovementLabel::kFixation, "yaw", 0.3, 0.05, 0.0005, 100},
        {MovementLabel::kFixation, "pitch", 0.1, 0.02, 0.2, 100},
        {MovementLabel::kSaccade, "yaw", -0.2, 0.1, 0.004, 10},
        {MovementLabel::kSaccade, "pitch", 0.4, std::nullopt, std::nullopt, 1},
    };
    const std::string svg = svg::improvement_chart(rows);
    EXPECT_EQ(count_substr(svg, "<rect class=\"bar\""), 4u);
    EXPECT_EQ(count_substr(svg, "<line class=\"sem\""), 3u);
    EXPECT_EQ(count_substr(svg, "class=\"significance\""), 2u);
    EXPECT_NE(svg.find(">***</text>"), std::string::npos);
    EXPECT_NE(svg.find(">**</text>"), std::string::npos);
    EXPECT_EQ(svg::significance_marker(0.03), "*");
    EXPECT_EQ(svg::significance_marker(0.5), "");
    EXPECT_EQ(svg::significance_marker(std::nullopt), "");
    EXPECT_THROW(svg::improvement_chart(std::vector<ClassImprovement>{}), InvalidInput);
}

TEST(Charts, DistributionCountsSumToSamples) {
    Rng rng(3);
    std::uniform_real_distribution<double> u(-20.0, 20.0);
    std::vector<GazeAngles> samples(3000);
    for (auto& s : samples) s = {u(rng), u(rng)};
    const std::string svg = svg::distribution_chart(samples);
    std::size_t total = 0, bins = 0;
    const std::regex count_re("data-count=\"(\\d+)\"");
    for (std::sregex_iterator it(svg.begin(), svg.end(), count_re), end; it != end; ++it) {
        total += std::stoul((*it)[1]);
        ++bins;
    }
    EXPECT_EQ(total, samples.size());
    EXPECT_LE(bins, 41u * 41u);
    EXPECT_GT(bins, 1000u);
    EXPECT_THROW(svg::distribution_chart(samples, 0.0), InvalidInput);
}
