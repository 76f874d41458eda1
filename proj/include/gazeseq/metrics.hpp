#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "gazeseq/error.hpp"
#include "gazeseq/geometry.hpp"

namespace gazeseq {

/// Mean absolute angular error per axis, with population standard deviations
/// of the per-sample absolute errors.
struct ErrorStats {
    double mae_yaw = 0.0;
    double mae_pitch = 0.0;
    double mae_mean = 0.0;
    double std_yaw = 0.0;
    double std_pitch = 0.0;
    double std_mean = 0.0;
    std::size_t n = 0;
};

/// Absolute errors of one sample; `mean` is the average of the two axes.
struct SampleError {
    double yaw = 0.0;
    double pitch = 0.0;
    double mean = 0.0;
};

inline SampleError sample_error(const GazeAngles& pred, const GazeAngles& gt) {
    const double yaw = std::abs(pred.yaw_deg - gt.yaw_deg);
    const double pitch = std::abs(pred.pitch_deg - gt.pitch_deg);
    return {yaw, pitch, 0.5 * (yaw + pitch)};
}

namespace detail {

inline void mean_and_std(std::span<const double> xs, double& mean, double& sd) {
    double sum = 0.0;
    for (double x : xs) sum += x;
    mean = sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace detail

inline ErrorStats error_stats(std::span<const SampleError> errors) {
    if (errors.empty()) throw InvalidInput("error_stats: no samples");
    std::vector<double> yaw, pitch, mean;
    yaw.reserve(errors.size());
    pitch.reserve(errors.size());
    mean.reserve(errors.size());
    for (const auto& e : errors) {
        yaw.push_back(e.yaw);
        pitch.push_back(e.pitch);
        mean.push_back(e.mean);
    }
    ErrorStats s;
    s.n = errors.size();
    detail::mean_and_std(yaw, s.mae_yaw, s.std_yaw);
    detail::mean_and_std(pitch, s.mae_pitch, s.std_pitch);
    detail::mean_and_std(mean, s.mae_mean, s.std_mean);
    return s;
}

inline ErrorStats mae(std::span<const GazeAngles> preds, std::span<const GazeAngles> gts) {
    if (preds.empty() || preds.size() != gts.size()) {
        throw InvalidInput("mae: predictions and ground truth must be non-empty and equally long");
    }
    std::vector<SampleError> errors;
    errors.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) errors.push_back(sample_error(preds[i], gts[i]));
    return error_stats(errors);
}

/// Percentage by which `other` improves on `base`.
inline double relative_improvement(double base, double other) {
    if (!(base > 0.0)) throw InvalidInput("relative_improvement: base must be positive");
    return 100.0 * (base - other) / base;
}

}  // namespace gazeseq
