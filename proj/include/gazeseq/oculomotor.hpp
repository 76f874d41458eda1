#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gazeseq/error.hpp"
#include "gazeseq/geometry.hpp"
#include "gazeseq/rng.hpp"

namespace gazeseq {

inline constexpr int kFramePeriodMs = 10;  // 100 Hz
inline constexpr int kFixationMs = 1000;
inline constexpr int kTransitionMs = 100;

enum class FrameLabel { kFix, kSac };

inline std::string_view to_string(FrameLabel l) { return l == FrameLabel::kFix ? "FIX" : "SAC"; }

inline FrameLabel parse_frame_label(std::string_view s) {
    if (s == "FIX") return FrameLabel::kFix;
    if (s == "SAC") return FrameLabel::kSac;
    throw DataError("unknown frame label '" + std::string(s) + "'");
}

struct AngleRange {
    double lo = -20.0;
    double hi = 20.0;

    friend bool operator==(const AngleRange&, const AngleRange&) = default;
};

struct StimulusEvent {
    GazeAngles target;
    int onset_ms = 0;
    int duration_ms = kFixationMs;
};

/// Fixation targets shown for 1 s each; between two fixations the target jumps
/// during a 100 ms transition. The target of event k is displayed from the
/// start of the transition that precedes it.
struct StimulusScript {
    std::vector<StimulusEvent> events;
    int total_duration_ms = 0;

    /// Time at which the target moves to event k (k >= 1).
    int jump_ms(std::size_t k) const { return events[k].onset_ms - kTransitionMs; }
};

inline void validate(const StimulusScript& script) {
    if (script.events.empty()) throw InvalidInput("stimulus script has no events");
    int expected_onset = 0;
    for (const auto& e : script.events) {
        if (e.onset_ms != expected_onset || e.duration_ms != kFixationMs) {
            throw InvalidInput("stimulus events must be 1000 ms fixations separated by 100 ms transitions");
        }
        if (!is_finite(e.target)) throw InvalidInput("stimulus target must be finite");
        expected_onset += kFixationMs + kTransitionMs;
    }
    if (script.total_duration_ms != expected_onset - kTransitionMs) {
        throw InvalidInput("stimulus total duration inconsistent with its events");
    }
}

inline StimulusScript generate_stimulus(std::uint64_t seed, int n_fixations, AngleRange yaw_range,
                                        AngleRange pitch_range) {
    if (n_fixations < 1) throw InvalidInput("generate_stimulus: need at least one fixation");
    for (const auto& r : {yaw_range, pitch_range}) {
        if (!(r.lo < r.hi)) throw InvalidInput("generate_stimulus: empty angle range");
        if (r.lo < -45.0 || r.hi > 45.0) throw InvalidInput("generate_stimulus: range exceeds +-45 deg");
    }
    Rng rng(derive_seed(seed, {tag(SeedStream::kStimulus)}));
    std::uniform_real_distribution<double> yaw(yaw_range.lo, yaw_range.hi);
    std::uniform_real_distribution<double> pitch(pitch_range.lo, pitch_range.hi);

    StimulusScript script;
    for (int i = 0; i < n_fixations; ++i) {
        const double y = yaw(rng);
        const double p = pitch(rng);
        script.events.push_back({{y, p}, i * (kFixationMs + kTransitionMs), kFixationMs});
    }
    script.total_duration_ms = n_fixations * kFixationMs + (n_fixations - 1) * kTransitionMs;
    return script;
}

/// Saccade kinematics and fixational noise.
struct OculomotorParams {
    double latency_min_ms = 150.0;
    double latency_max_ms = 250.0;
    double main_sequence_c0_ms = 20.0;      ///< duration intercept
    double main_sequence_c1_ms_per_deg = 2.2;  ///< duration slope per degree of amplitude
    double fixation_jitter_sigma_deg = 0.1;
    double landing_noise_sigma_deg = 0.3;

    double saccade_duration_ms(double amplitude_deg) const {
        return main_sequence_c0_ms + main_sequence_c1_ms_per_deg * amplitude_deg;
    }
};

inline void validate(const OculomotorParams& p) {
    if (!(p.main_sequence_c0_ms > 0.0) || !(p.main_sequence_c1_ms_per_deg > 0.0)) {
        throw InvalidInput("main sequence coefficients must be positive");
    }
    if (!(p.fixation_jitter_sigma_deg >= 0.0) || !(p.landing_noise_sigma_deg >= 0.0)) {
        throw InvalidInput("noise sigmas must be non-negative");
    }
    if (!(p.latency_min_ms >= 0.0) || !(p.latency_max_ms >= p.latency_min_ms)) {
        throw InvalidInput("latency range must satisfy 0 <= min <= max");
    }
}

/// Normalized minimum-jerk position profile 10t^3 - 15t^4 + 6t^5.
inline double minimum_jerk(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidInput("minimum_jerk: t must lie in [0, 1]");
    const double t3 = t * t * t;
    return t3 * (10.0 + t * (-15.0 + 6.0 * t));
}

struct ScanpathFrame {
    int index = 0;
    double t_ms = 0.0;
    GazeAngles gaze;
    FrameLabel label = FrameLabel::kFix;
};

/// One simulated saccade. `end_ms` may be earlier than `start_ms + duration_ms`
/// when a later target interrupts it.
struct SaccadeSegment {
    double start_ms = 0.0;
    double duration_ms = 0.0;
    double end_ms = 0.0;
    GazeAngles from;
    GazeAngles to;

    GazeAngles position(double t_ms) const {
        const double u = minimum_jerk(std::clamp((t_ms - start_ms) / duration_ms, 0.0, 1.0));
        return {from.yaw_deg + (to.yaw_deg - from.yaw_deg) * u,
                from.pitch_deg + (to.pitch_deg - from.pitch_deg) * u};
    }
};

/// Plans the saccades elicited by the target jumps of `script`.
inline std::vector<SaccadeSegment> plan_saccades(const StimulusScript& script, const OculomotorParams& p,
                                                 Rng& rng) {
    std::uniform_real_distribution<double> latency(p.latency_min_ms, p.latency_max_ms);
    std::normal_distribution<double> landing(0.0, 1.0);

    std::vector<SaccadeSegment> segments;
    GazeAngles rest = script.events.front().target;
    double last_launch = 0.0;
    for (std::size_t k = 1; k < script.events.size(); ++k) {
        const double launch = std::max(last_launch, script.jump_ms(k) + latency(rng));
        last_launch = launch;
        const double dy = landing(rng) * p.landing_noise_sigma_deg;
        const double dp = landing(rng) * p.landing_noise_sigma_deg;

        GazeAngles from = rest;
        if (!segments.empty() && launch < segments.back().end_ms) {
            // Retarget mid-flight from wherever the eye currently is.
            from = segments.back().position(launch);
            segments.back().end_ms = launch;
        }
        const GazeAngles to{script.events[k].target.yaw_deg + dy, script.events[k].target.pitch_deg + dp};
        const double amplitude = std::hypot(to.yaw_deg - from.yaw_deg, to.pitch_deg - from.pitch_deg);
        const double duration = p.saccade_duration_ms(amplitude);
        segments.push_back({launch, duration, launch + duration, from, to});
        rest = to;
    }
    return segments;
}

inline std::vector<ScanpathFrame> simulate_scanpath(const StimulusScript& script, const OculomotorParams& p,
                                                    std::uint64_t seed) {
    validate(script);
    validate(p);
    Rng rng(derive_seed(seed, {tag(SeedStream::kScanpath)}));
    const auto segments = plan_saccades(script, p, rng);
    std::normal_distribution<double> jitter(0.0, 1.0);

    const int n_frames = script.total_duration_ms / kFramePeriodMs;
    std::vector<ScanpathFrame> frames;
    frames.reserve(static_cast<std::size_t>(n_frames));
    std::size_t seg = 0;  // first segment that has not yet ended
    GazeAngles center = script.events.front().target;
    for (int i = 0; i < n_frames; ++i) {
        const double t = static_cast<double>(i * kFramePeriodMs);
        while (seg < segments.size() && segments[seg].end_ms <= t) center = segments[seg++].to;
        ScanpathFrame f{i, t, center, FrameLabel::kFix};
        if (seg < segments.size() && segments[seg].start_ms <= t) {
            f.gaze = segments[seg].position(t);
            f.label = FrameLabel::kSac;
        } else {
            f.gaze.yaw_deg += jitter(rng) * p.fixation_jitter_sigma_deg;
            f.gaze.pitch_deg += jitter(rng) * p.fixation_jitter_sigma_deg;
        }
        frames.push_back(f);
    }
    return frames;
}

}  // namespace gazeseq
