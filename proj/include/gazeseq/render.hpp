#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "gazeseq/error.hpp"
#include "gazeseq/geometry.hpp"
#include "gazeseq/rng.hpp"

namespace gazeseq {

inline constexpr int kFrameRows = 100;
inline constexpr int kFrameCols = 160;

enum class Side { kLeft, kRight };

inline std::string_view to_string(Side s) { return s == Side::kLeft ? "L" : "R"; }
inline Side other(Side s) { return s == Side::kLeft ? Side::kRight : Side::kLeft; }

/// 8-bit grayscale eye crop, row-major.
struct EyeFrame {
    int rows = kFrameRows;
    int cols = kFrameCols;
    std::vector<std::uint8_t> pixels = std::vector<std::uint8_t>(kFrameRows * kFrameCols, 0);
    Side side = Side::kLeft;

    std::uint8_t at(int r, int c) const { return pixels[static_cast<std::size_t>(r * cols + c)]; }
    std::uint8_t& at(int r, int c) { return pixels[static_cast<std::size_t>(r * cols + c)]; }

    friend bool operator==(const EyeFrame&, const EyeFrame&) = default;
};

inline EyeFrame mirror_image(const EyeFrame& f) {
    EyeFrame out = f;
    out.side = other(f.side);
    for (int r = 0; r < f.rows; ++r) {
        const auto row = f.pixels.begin() + r * f.cols;
        std::reverse_copy(row, row + f.cols, out.pixels.begin() + r * f.cols);
    }
    return out;
}

/// Per-subject appearance of a synthetic eye, expressed in left-eye geometry.
struct SubjectAppearance {
    int subject_id = 0;
    double iris_radius_px = 20.0;
    double pupil_to_iris_ratio = 0.4;
    double sclera_intensity = 200.0;
    double iris_intensity = 90.0;
    double skin_intensity = 140.0;
    double eyelid_aperture_px = 44.0;
    std::array<double, 2> eye_center_offset_px{0.0, 0.0};   ///< (column, row)
    std::array<double, 2> gain_per_degree_px{2.0, 1.05};     ///< (yaw, pitch)
    bool glints_enabled = false;
    std::uint64_t seed = 0;

    friend bool operator==(const SubjectAppearance&, const SubjectAppearance&) = default;
};

// Fixed scene constants shared by every subject.
inline constexpr double kPupilIntensity = 18.0;
inline constexpr double kLashIntensity = 35.0;
inline constexpr double kGlintIntensity = 250.0;
inline constexpr double kEyeHalfWidthPx = 62.0;

inline void validate(const SubjectAppearance& a) {
    auto in_range = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    if (!(a.pupil_to_iris_ratio > 0.0 && a.pupil_to_iris_ratio < 1.0)) {
        throw InvalidInput("pupil_to_iris_ratio must lie in (0, 1)");
    }
    for (double v : {a.sclera_intensity, a.iris_intensity, a.skin_intensity}) {
        if (!in_range(v, 0.0, 255.0)) throw InvalidInput("intensities must lie in [0, 255]");
    }
    const double cx = kFrameCols / 2.0 + a.eye_center_offset_px[0];
    const double cy = kFrameRows / 2.0 + a.eye_center_offset_px[1];
    if (!(a.iris_radius_px > 0.0) || cx - a.iris_radius_px < 0.0 || cx + a.iris_radius_px > kFrameCols ||
        cy - a.iris_radius_px < 0.0 || cy + a.iris_radius_px > kFrameRows) {
        throw InvalidInput("iris must fit inside the frame at straight-ahead gaze");
    }
    if (!(a.eyelid_aperture_px > 0.0)) throw InvalidInput("eyelid aperture must be positive");
}

/// Documented sampling ranges for `sample_subject`.
struct AppearanceRanges {
    static constexpr std::array<double, 2> iris_radius{17.0, 23.0};
    static constexpr std::array<double, 2> pupil_ratio{0.30, 0.55};
    static constexpr std::array<double, 2> sclera{170.0, 230.0};
    static constexpr std::array<double, 2> iris{60.0, 120.0};
    static constexpr std::array<double, 2> skin{110.0, 170.0};
    static constexpr std::array<double, 2> aperture{38.0, 50.0};
    static constexpr std::array<double, 2> offset_col{-6.0, 6.0};
    static constexpr std::array<double, 2> offset_row{-4.0, 4.0};
    static constexpr std::array<double, 2> gain_yaw{1.8, 2.2};
    static constexpr std::array<double, 2> gain_pitch{0.9, 1.2};
};

inline SubjectAppearance sample_subject(int subject_id, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {tag(SeedStream::kSubject), static_cast<std::uint64_t>(subject_id)}));
    auto draw = [&rng](const std::array<double, 2>& r) {
        return std::uniform_real_distribution<double>(r[0], r[1])(rng);
    };
    using R = AppearanceRanges;
    SubjectAppearance a;
    a.subject_id = subject_id;
    a.iris_radius_px = draw(R::iris_radius);
    a.pupil_to_iris_ratio = draw(R::pupil_ratio);
    a.sclera_intensity = draw(R::sclera);
    a.iris_intensity = draw(R::iris);
    a.skin_intensity = draw(R::skin);
    a.eyelid_aperture_px = draw(R::aperture);
    a.eye_center_offset_px = {draw(R::offset_col), draw(R::offset_row)};
    a.gain_per_degree_px = {draw(R::gain_yaw), draw(R::gain_pitch)};
    a.glints_enabled = false;
    a.seed = rng();
    return a;
}

enum class EyeRegion { kSkin, kLash, kSclera, kIris, kPupil, kGlint };

/// Analytic left-eye scene for one gaze direction. Coordinates are continuous
/// pixel positions (column x, row y); pixel (r, c) has its center at (c + 0.5, r + 0.5).
class EyeScene {
public:
    EyeScene(const GazeAngles& gaze, const SubjectAppearance& app) : app_(app) {
        eye_cx_ = kFrameCols / 2.0 + app.eye_center_offset_px[0];
        eye_cy_ = kFrameRows / 2.0 + app.eye_center_offset_px[1];
        iris_cx_ = eye_cx_ + app.gain_per_degree_px[0] * gaze.yaw_deg;
        iris_cy_ = eye_cy_ - app.gain_per_degree_px[1] * gaze.pitch_deg;
        iris_r_ = app.iris_radius_px;
        pupil_r_ = iris_r_ * app.pupil_to_iris_ratio;
        // The upper lid follows the gaze: looking down lowers it and covers the limbus.
        const double ap = app.eyelid_aperture_px;
        upper_height_ = ap * std::clamp(0.55 + 0.02 * gaze.pitch_deg, 0.12, 0.85);
        lower_height_ = ap * std::clamp(0.45 - 0.006 * gaze.pitch_deg, 0.30, 0.65);
        Rng rng(app.seed);
        texture_freq_ = 5 + static_cast<int>(rng() % 5);
        texture_phase_ = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
    }

    double iris_center_x() const { return iris_cx_; }
    double iris_center_y() const { return iris_cy_; }
    double iris_radius() const { return iris_r_; }

    bool iris_outside_frame() const {
        const double nx = std::clamp(iris_cx_, 0.0, static_cast<double>(kFrameCols));
        const double ny = std::clamp(iris_cy_, 0.0, static_cast<double>(kFrameRows));
        return std::hypot(nx - iris_cx_, ny - iris_cy_) >= iris_r_;
    }

    EyeRegion region_at(double x, double y) const {
        const double u = (x - eye_cx_) / kEyeHalfWidthPx;
        if (std::abs(u) >= 1.0) return EyeRegion::kSkin;
        const double shape = 1.0 - u * u;
        const double upper = eye_cy_ - upper_height_ * shape;
        const double lower = eye_cy_ + lower_height_ * shape;
        if (y < upper - 2.0 || y > lower) return EyeRegion::kSkin;
        if (y < upper) return EyeRegion::kLash;
        if (app_.glints_enabled) {
            for (double gx : {-4.0, 4.0}) {
                if (std::hypot(x - (iris_cx_ + gx), y - (iris_cy_ - 3.0)) < 1.6) return EyeRegion::kGlint;
            }
        }
        const double d = std::hypot(x - iris_cx_, y - iris_cy_);
        if (d < pupil_r_) return EyeRegion::kPupil;
        if (d < iris_r_) return EyeRegion::kIris;
        return EyeRegion::kSclera;
    }

    double intensity_at(double x, double y) const {
        switch (region_at(x, y)) {
            case EyeRegion::kSkin: return app_.skin_intensity;
            case EyeRegion::kLash: return kLashIntensity;
            case EyeRegion::kSclera: return app_.sclera_intensity;
            case EyeRegion::kPupil: return kPupilIntensity;
            case EyeRegion::kGlint: return kGlintIntensity;
            case EyeRegion::kIris: {
                const double theta = std::atan2(y - iris_cy_, x - iris_cx_);
                return app_.iris_intensity + 12.0 * std::cos(texture_freq_ * theta + texture_phase_);
            }
        }
        return 0.0;
    }

private:
    SubjectAppearance app_;
    double eye_cx_ = 0.0, eye_cy_ = 0.0;
    double iris_cx_ = 0.0, iris_cy_ = 0.0, iris_r_ = 0.0, pupil_r_ = 0.0;
    double upper_height_ = 0.0, lower_height_ = 0.0;
    int texture_freq_ = 5;
    double texture_phase_ = 0.0;
};

/// Renders the left-eye geometry with 2x2 supersampling and additive sensor noise.
inline EyeFrame render_left(const GazeAngles& gaze, const SubjectAppearance& app, double noise_sigma,
                            std::uint64_t frame_rng_seed) {
    if (std::abs(gaze.yaw_deg) > 45.0 || std::abs(gaze.pitch_deg) > 45.0 || !is_finite(gaze)) {
        throw InvalidInput("render_eye: gaze must lie within +-45 deg");
    }
    if (!(noise_sigma >= 0.0)) throw InvalidInput("render_eye: noise sigma must be non-negative");
    const EyeScene scene(gaze, app);
    if (scene.iris_outside_frame()) throw InvalidInput("render_eye: iris projects fully outside the frame");

    Rng rng(derive_seed(frame_rng_seed, {tag(SeedStream::kFrameNoise)}));
    std::normal_distribution<double> noise(0.0, 1.0);
    EyeFrame frame;
    frame.side = Side::kLeft;
    for (int r = 0; r < kFrameRows; ++r) {
        for (int c = 0; c < kFrameCols; ++c) {
            double v = 0.0;
            for (double dy : {0.25, 0.75}) {
                for (double dx : {0.25, 0.75}) v += scene.intensity_at(c + dx, r + dy);
            }
            v *= 0.25;
            if (noise_sigma > 0.0) v += noise_sigma * noise(rng);
            frame.at(r, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
    }
    return frame;
}

/// Right eyes are rendered as the horizontal mirror of the left-eye geometry.
inline EyeFrame render_eye(const GazeAngles& gaze, const SubjectAppearance& app, double noise_sigma,
                           std::uint64_t frame_rng_seed, Side side) {
    if (side == Side::kLeft) return render_left(gaze, app, noise_sigma, frame_rng_seed);
    return mirror_image(render_left(mirror_angles(gaze), app, noise_sigma, frame_rng_seed));
}

}  // namespace gazeseq
