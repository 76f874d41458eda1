#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "gazeseq/error.hpp"

namespace gazeseq {

/// Gaze direction as 2D spherical angles in degrees.
///
/// Vector convention: x right, y up, z forward. Positive yaw turns the line of
/// sight towards +x, positive pitch towards +y.
struct GazeAngles {
    double yaw_deg = 0.0;
    double pitch_deg = 0.0;

    friend bool operator==(const GazeAngles&, const GazeAngles&) = default;
};

using Vec3 = std::array<double, 3>;

constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

inline bool is_finite(const GazeAngles& a) {
    return std::isfinite(a.yaw_deg) && std::isfinite(a.pitch_deg);
}

inline Vec3 angles_to_vector(const GazeAngles& a) {
    const double yaw = deg_to_rad(a.yaw_deg);
    const double pitch = deg_to_rad(a.pitch_deg);
    return {std::cos(pitch) * std::sin(yaw), std::sin(pitch), std::cos(pitch) * std::cos(yaw)};
}

inline GazeAngles vector_to_angles(const Vec3& v) {
    const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw InvalidInput("vector_to_angles: vector must be finite and non-zero");
    }
    const double y = std::clamp(v[1] / norm, -1.0, 1.0);
    // atan2 of the horizontal components is undefined straight up/down; yaw 0 there.
    const double horizontal = std::hypot(v[0], v[2]);
    const double yaw = horizontal > 0.0 ? std::atan2(v[0], v[2]) : 0.0;
    return {rad_to_deg(yaw), rad_to_deg(std::asin(y))};
}

/// Horizontal flip: maps a right-eye gaze onto the left-eye frame of reference.
constexpr GazeAngles mirror_angles(const GazeAngles& a) { return {-a.yaw_deg, a.pitch_deg}; }

/// Great-circle angle between two gaze directions, in degrees.
inline double angular_distance_deg(const GazeAngles& a, const GazeAngles& b) {
    const Vec3 u = angles_to_vector(a);
    const Vec3 v = angles_to_vector(b);
    const Vec3 cross{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    const double sin_part = std::sqrt(cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]);
    const double cos_part = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    return rad_to_deg(std::atan2(sin_part, cos_part));
}

}  // namespace gazeseq
