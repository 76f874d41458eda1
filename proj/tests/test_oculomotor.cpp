#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gazeseq/oculomotor.hpp"

using namespace gazeseq;

TEST(Stimulus, DurationArithmetic) {
    const StimulusScript s = generate_stimulus(1, 2, {}, {});
    EXPECT_EQ(s.total_duration_ms, 2100);
    ASSERT_EQ(s.events.size(), 2u);
    EXPECT_EQ(s.events[1].onset_ms, 1100);
    EXPECT_EQ(s.jump_ms(1), 1000);
    EXPECT_NO_THROW(validate(s));
}

TEST(Stimulus, Deterministic) {
    const StimulusScript a = generate_stimulus(42, 12, {}, {});
    const StimulusScript b = generate_stimulus(42, 12, {}, {});
    ASSERT_EQ(a.events.size(), b.events.size());
    for (std::size_t i = 0; i < a.events.size(); ++i) EXPECT_EQ(a.events[i].target, b.events[i].target);
    const StimulusScript c = generate_stimulus(43, 12, {}, {});
    EXPECT_NE(a.events[0].target, c.events[0].target);
}

TEST(Stimulus, TargetsUniformWithinRange) {
    const StimulusScript s = generate_stimulus(9, 10000, {-20, 20}, {-10, 15});
    constexpr int kBins = 20;
    std::vector<int> yaw_bins(kBins, 0), pitch_bins(kBins, 0);
    for (const auto& e : s.events) {
        ASSERT_GE(e.target.yaw_deg, -20.0);
        ASSERT_LE(e.target.yaw_deg, 20.0);
        ASSERT_GE(e.target.pitch_deg, -10.0);
        ASSERT_LE(e.target.pitch_deg, 15.0);
        ++yaw_bins[std::min(kBins - 1, static_cast<int>((e.target.yaw_deg + 20.0) / 40.0 * kBins))];
        ++pitch_bins[std::min(kBins - 1, static_cast<int>((e.target.pitch_deg + 10.0) / 25.0 * kBins))];
    }
    // chi-square critical value, 19 degrees of freedom, alpha = 0.001
    constexpr double kCritical = 43.82;
    for (const auto* bins : {&yaw_bins, &pitch_bins}) {
        double chi2 = 0.0;
        for (int c : *bins) chi2 += (c - 500.0) * (c - 500.0) / 500.0;
        EXPECT_LT(chi2, kCritical);
    }
}

TEST(Stimulus, RejectsBadRanges) {
    EXPECT_THROW(generate_stimulus(1, 0, {}, {}), InvalidInput);
    EXPECT_THROW(generate_stimulus(1, 3, {5, 5}, {}), InvalidInput);
    EXPECT_THROW(generate_stimulus(1, 3, {-50, 0}, {}), InvalidInput);
}

TEST(MinimumJerk, Endpoints) {
    EXPECT_DOUBLE_EQ(minimum_jerk(0.0), 0.0);
    EXPECT_DOUBLE_EQ(minimum_jerk(1.0), 1.0);
    EXPECT_DOUBLE_EQ(minimum_jerk(0.5), 0.5);
    EXPECT_THROW(minimum_jerk(1.5), InvalidInput);
    EXPECT_THROW(minimum_jerk(-0.1), InvalidInput);
}

TEST(MinimumJerk, FlatAtEndpointsPeakSpeedAtMiddle) {
    const double h = 1e-7;
    EXPECT_LE(std::abs((minimum_jerk(h) - minimum_jerk(0.0)) / h), 1e-6);
    EXPECT_LE(std::abs((minimum_jerk(1.0) - minimum_jerk(1.0 - h)) / h), 1e-6);
    auto speed = [h](double t) { return (minimum_jerk(t + h) - minimum_jerk(t - h)) / (2 * h); };
    EXPECT_NEAR(speed(0.5), 1.875, 1e-6);
    for (double t = 0.05; t < 0.95; t += 0.05) EXPECT_LE(speed(t), speed(0.5) + 1e-9);
}

TEST(Scanpath, NoiselessSingleFixationSitsOnTarget) {
    StimulusScript s;
    s.events.push_back({{7.5, -3.0}, 0, kFixationMs});
    s.total_duration_ms = kFixationMs;
    OculomotorParams p;
    p.fixation_jitter_sigma_deg = 0.0;
    p.landing_noise_sigma_deg = 0.0;
    const auto frames = simulate_scanpath(s, p, 5);
    ASSERT_EQ(frames.size(), 100u);
    for (const auto& f : frames) {
        EXPECT_EQ(f.gaze, (GazeAngles{7.5, -3.0}));
        EXPECT_EQ(f.label, FrameLabel::kFix);
    }
}

TEST(Scanpath, TenDegreeSaccadeSpansFourOrFiveFrames) {
    // c0 + c1 * 10 = 42 ms at 100 Hz.
    StimulusScript s;
    s.events.push_back({{0.0, 0.0}, 0, kFixationMs});
    s.events.push_back({{10.0, 0.0}, kFixationMs + kTransitionMs, kFixationMs});
    s.total_duration_ms = 2100;
    OculomotorParams p;
    p.fixation_jitter_sigma_deg = 0.0;
    p.landing_noise_sigma_deg = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto frames = simulate_scanpath(s, p, seed);
        int sac = 0;
        for (const auto& f : frames) sac += f.label == FrameLabel::kSac;
        EXPECT_GE(sac, 4);
        EXPECT_LE(sac, 5);
        EXPECT_EQ(frames.back().gaze, (GazeAngles{10.0, 0.0}));
    }
}

TEST(Scanpath, SaccadeMidpointAtHalfDuration) {
    Rng rng(1);
    StimulusScript s;
    s.events.push_back({{0.0, 0.0}, 0, kFixationMs});
    s.events.push_back({{10.0, 4.0}, 1100, kFixationMs});
    s.total_duration_ms = 2100;
    OculomotorParams p;
    p.landing_noise_sigma_deg = 0.0;
    const auto segs = plan_saccades(s, p, rng);
    ASSERT_EQ(segs.size(), 1u);
    const GazeAngles mid = segs[0].position(segs[0].start_ms + segs[0].duration_ms / 2);
    EXPECT_NEAR(mid.yaw_deg, 5.0, 1e-12);
    EXPECT_NEAR(mid.pitch_deg, 2.0, 1e-12);
    EXPECT_NEAR(segs[0].duration_ms, p.saccade_duration_ms(std::hypot(10.0, 4.0)), 1e-12);
    EXPECT_GE(segs[0].start_ms, 1000 + 150);
    EXPECT_LE(segs[0].start_ms, 1000 + 250);
}

TEST(Scanpath, DeterministicAndEvenlyTimed) {
    const StimulusScript s = generate_stimulus(3, 12, {}, {});
    const auto a = simulate_scanpath(s, {}, 17);
    const auto b = simulate_scanpath(s, {}, 17);
    ASSERT_EQ(a.size(), b.size());
    ASSERT_EQ(a.size(), static_cast<std::size_t>(s.total_duration_ms / kFramePeriodMs));
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].gaze, b[i].gaze);
        EXPECT_EQ(a[i].label, b[i].label);
        EXPECT_DOUBLE_EQ(a[i].t_ms, 10.0 * static_cast<double>(i));
    }
}

TEST(Scanpath, FixationJitterStaysWithinFourSigma) {
    const OculomotorParams p;
    std::size_t frames = 0, outside = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const StimulusScript s = generate_stimulus(seed, 12, {}, {});
        Rng rng(derive_seed(seed, {tag(SeedStream::kScanpath)}));
        const auto segs = plan_saccades(s, p, rng);
        const auto path = simulate_scanpath(s, p, seed);
        // Fixation centers: the first target, then each saccade's landing point.
        for (const auto& f : path) {
            if (f.label != FrameLabel::kFix) continue;
            GazeAngles center = s.events.front().target;
            for (const auto& seg : segs) {
                if (seg.end_ms <= f.t_ms) center = seg.to;
            }
            ++frames;
            if (std::abs(f.gaze.yaw_deg - center.yaw_deg) > 4 * p.fixation_jitter_sigma_deg ||
                std::abs(f.gaze.pitch_deg - center.pitch_deg) > 4 * p.fixation_jitter_sigma_deg) {
                ++outside;
            }
        }
    }
    EXPECT_GT(frames, 40000u);
    EXPECT_LE(static_cast<double>(outside) / static_cast<double>(frames), 0.001);
}

TEST(Scanpath, SaccadeRunsAreFlankedAndCoverTheJump) {
    OculomotorParams p;
    p.fixation_jitter_sigma_deg = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const StimulusScript s = generate_stimulus(seed, 12, {}, {});
        const auto path = simulate_scanpath(s, p, seed);
        std::size_t i = 0;
        int runs = 0;
        while (i < path.size()) {
            if (path[i].label != FrameLabel::kSac) {
                ++i;
                continue;
            }
            const std::size_t start = i;
            while (i < path.size() && path[i].label == FrameLabel::kSac) ++i;
            ASSERT_GT(start, 0u);
            ASSERT_LT(i, path.size());
            ++runs;
            // Displacement across the run matches a target jump up to landing noise.
            const GazeAngles before = path[start - 1].gaze;
            const GazeAngles after = path[i].gaze;
            double best = 1e9;
            for (std::size_t k = 1; k < s.events.size(); ++k) {
                best = std::min(best, std::hypot(after.yaw_deg - s.events[k].target.yaw_deg,
                                                 after.pitch_deg - s.events[k].target.pitch_deg));
            }
            EXPECT_LT(best, 5 * p.landing_noise_sigma_deg * std::sqrt(2.0));
            EXPECT_GT(std::hypot(after.yaw_deg - before.yaw_deg, after.pitch_deg - before.pitch_deg), 0.0);
        }
        EXPECT_EQ(runs, 11);
    }
}

TEST(Scanpath, ParameterValidation) {
    OculomotorParams p;
    p.main_sequence_c1_ms_per_deg = 0.0;
    EXPECT_THROW(validate(p), InvalidInput);
    p = {};
    p.latency_max_ms = 100.0;
    EXPECT_THROW(validate(p), InvalidInput);
    StimulusScript bad;
    EXPECT_THROW(validate(bad), InvalidInput);
}
