#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gazeseq/error.hpp"
#include "gazeseq/evaluation.hpp"

namespace gazeseq::svg {

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string header(double w, double h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
           "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
           "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline std::string text(double x, double y, std::string_view s, std::string_view anchor = "middle") {
    return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + std::string(anchor) + "\">" +
           escape(s) + "</text>\n";
}

inline std::string line(double x1, double y1, double x2, double y2, std::string_view stroke = "black") {
    return "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
           "\" stroke=\"" + std::string(stroke) + "\"/>\n";
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

/// Linear map from [lo, hi] onto [a, b]; degenerate ranges are widened.
struct Scale {
    double lo, hi, a, b;
    Scale(double lo_, double hi_, double a_, double b_) : lo(lo_), hi(hi_), a(a_), b(b_) {
        if (!(hi > lo)) {
            lo -= 1.0;
            hi += 1.0;
        }
    }
    double operator()(double v) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

}  // namespace detail

/// Two stacked panels (yaw, pitch) with one polyline per series.
inline std::string trace_chart(const TraceTable& t) {
    if (t.columns.size() < 4 || t.columns.size() % 2 != 0 || t.rows.empty()) throw InvalidInput("trace plot: empty trace");
    using detail::num;
    const double W = 720, panel_h = 220, left = 60, right = 150, top = 30, gap = 50;
    std::string out = detail::header(W, top + 2 * panel_h + gap + 40);
    const double t0 = *t.rows.front()[1];
    const double t1 = *t.rows.back()[1];
    const detail::Scale sx(t0, t1, left, W - right);
    const std::size_t n_series = (t.columns.size() - 2) / 2;  // gt + models
    for (int axis = 0; axis < 2; ++axis) {
        const double y0 = top + axis * (panel_h + gap);
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& row : t.rows) {
            for (std::size_t s = 0; s < n_series; ++s) {
                if (const auto& v = row[2 + 2 * s + axis]) {
                    lo = std::min(lo, *v);
                    hi = std::max(hi, *v);
                }
            }
        }
        const detail::Scale sy(lo - 1.0, hi + 1.0, y0 + panel_h, y0);
        out += "<rect x=\"" + num(left) + "\" y=\"" + num(y0) + "\" width=\"" + num(W - left - right) +
               "\" height=\"" + num(panel_h) + "\" fill=\"none\" stroke=\"#888\"/>\n";
        out += detail::text(left - 40, y0 + panel_h / 2, axis == 0 ? "yaw (deg)" : "pitch (deg)");
        out += detail::text(left, y0 + panel_h + 14, num(t0)) + detail::text(W - right, y0 + panel_h + 14, num(t1));
        out += detail::text(left - 4, y0 + 10, num(sy.hi), "end") + detail::text(left - 4, y0 + panel_h, num(sy.lo), "end");
        for (std::size_t s = 0; s < n_series; ++s) {
            const std::string& col = t.columns[2 + 2 * s];
            const std::string name = s == 0 ? "gt" : col.substr(0, col.size() - 4);
            const char* colour = s == 0 ? "black" : detail::kPalette[(s - 1) % std::size(detail::kPalette)];
            std::string points;
            for (const auto& row : t.rows) {
                if (const auto& v = row[2 + 2 * s + axis]) points += num(sx(*row[1])) + "," + num(sy(*v)) + " ";
            }
            out += "<polyline class=\"series\" data-series=\"" + detail::escape(name) + "\" data-axis=\"" +
                   (axis == 0 ? "yaw" : "pitch") + "\" fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"" +
                   (s == 0 ? "2" : "1.2") + "\" points=\"" + points + "\"/>\n";
            if (axis == 0) {
                const double ly = top + 14 * static_cast<double>(s);
                out += detail::line(W - right + 10, ly, W - right + 30, ly, colour);
                out += detail::text(W - right + 34, ly + 4, name, "start");
            }
        }
    }
    out += detail::text((left + W - right) / 2, top + 2 * panel_h + gap + 30, "time (ms)");
    out += "</svg>\n";
    return out;
}

inline std::string significance_marker(const std::optional<double>& p) {
    if (!p) return "";
    if (*p < 0.001) return "***";
    if (*p < 0.01) return "**";
    if (*p < 0.05) return "*";
    return "";
}

/// Grouped bars: one group per movement class, one bar per axis, SEM whiskers
/// and KS significance markers.
inline std::string improvement_chart(std::span<const ClassImprovement> rows) {
    if (rows.empty()) throw InvalidInput("improvement plot: no movement classes");
    using detail::num;
    std::vector<MovementLabel> classes;
    for (const auto& r : rows) {
        if (std::find(classes.begin(), classes.end(), r.label) == classes.end()) classes.push_back(r.label);
    }
    const double W = 120.0 * static_cast<double>(classes.size()) + 120, H = 360, left = 70, top = 30, bottom = 60;
    double lo = 0.0, hi = 0.0;
    for (const auto& r : rows) {
        const double e = r.sem.value_or(0.0);
        lo = std::min(lo, r.improvement_deg - e);
        hi = std::max(hi, r.improvement_deg + e);
    }
    const double pad = 0.1 * std::max(hi - lo, 1e-3);
    const detail::Scale sy(lo - pad, hi + pad, H - bottom, top);
    std::string out = detail::header(W, H);
    out += detail::line(left, sy(0.0), W - 40, sy(0.0), "#444");
    out += detail::line(left, top, left, H - bottom, "#444");
    out += detail::text(left - 6, sy(sy.hi) + 10, num(sy.hi), "end") + detail::text(left - 6, sy(sy.lo), num(sy.lo), "end");
    out += detail::text(20, top - 10, "improvement (deg)", "start");
    const double group_w = (W - 40 - left) / static_cast<double>(classes.size());
    const double bar_w = group_w * 0.3;
    for (std::size_t g = 0; g < classes.size(); ++g) {
        const double gx = left + group_w * static_cast<double>(g);
        out += detail::text(gx + group_w / 2, H - bottom + 16, to_string(classes[g]));
        for (const auto& r : rows) {
            if (r.label != classes[g]) continue;
            const int axis = r.axis == "yaw" ? 0 : 1;
            const double x = gx + group_w / 2 - bar_w + axis * bar_w;
            const double y_top = sy(std::max(r.improvement_deg, 0.0));
            const double h = std::abs(sy(r.improvement_deg) - sy(0.0));
            out += "<rect class=\"bar\" data-class=\"" + std::string(to_string(r.label)) + "\" data-axis=\"" + r.axis +
                   "\" data-value=\"" + format_fixed6(r.improvement_deg) + "\" x=\"" + num(x) + "\" y=\"" +
                   num(y_top) + "\" width=\"" + num(bar_w * 0.9) + "\" height=\"" + num(h) + "\" fill=\"" +
                   (axis == 0 ? "#1f77b4" : "#ff7f0e") + "\"/>\n";
            const double cx = x + bar_w * 0.45;
            if (r.sem) {
                out += "<line class=\"sem\" x1=\"" + num(cx) + "\" y1=\"" + num(sy(r.improvement_deg - *r.sem)) +
                       "\" x2=\"" + num(cx) + "\" y2=\"" + num(sy(r.improvement_deg + *r.sem)) +
                       "\" stroke=\"black\"/>\n";
            }
            const std::string mark = significance_marker(r.ks_p);
            if (!mark.empty()) {
                const double ty = sy(r.improvement_deg + (r.improvement_deg >= 0 ? 1 : -1) * r.sem.value_or(0.0));
                out += "<text class=\"significance\" x=\"" + num(cx) + "\" y=\"" +
                       num(r.improvement_deg >= 0 ? ty - 4 : ty + 12) + "\" text-anchor=\"middle\">" + mark +
                       "</text>\n";
            }
        }
    }
    out += "<rect x=\"" + num(W - 150) + "\" y=\"" + num(H - 24) + "\" width=\"10\" height=\"10\" fill=\"#1f77b4\"/>\n";
    out += detail::text(W - 136, H - 15, "yaw", "start");
    out += "<rect x=\"" + num(W - 90) + "\" y=\"" + num(H - 24) + "\" width=\"10\" height=\"10\" fill=\"#ff7f0e\"/>\n";
    out += detail::text(W - 76, H - 15, "pitch", "start");
    out += "</svg>\n";
    return out;
}

/// 2D histogram of gaze angles with square bins of `bin_deg` degrees. Each
/// non-empty bin is a rect carrying its count.
inline std::string distribution_chart(std::span<const GazeAngles> samples, double bin_deg = 1.0) {
    if (samples.empty()) throw InvalidInput("distribution plot: no samples");
    if (!(bin_deg > 0.0)) throw InvalidInput("distribution plot: bin size must be positive");
    using detail::num;
    double ylo = samples[0].yaw_deg, yhi = ylo, plo = samples[0].pitch_deg, phi = plo;
    for (const auto& s : samples) {
        ylo = std::min(ylo, s.yaw_deg);
        yhi = std::max(yhi, s.yaw_deg);
        plo = std::min(plo, s.pitch_deg);
        phi = std::max(phi, s.pitch_deg);
    }
    const double x0 = std::floor(ylo / bin_deg) * bin_deg;
    const double y0 = std::floor(plo / bin_deg) * bin_deg;
    const int nx = static_cast<int>(std::floor((yhi - x0) / bin_deg)) + 1;
    const int ny = static_cast<int>(std::floor((phi - y0) / bin_deg)) + 1;
    std::vector<std::size_t> counts(static_cast<std::size_t>(nx) * ny, 0);
    for (const auto& s : samples) {
        const int ix = std::clamp(static_cast<int>(std::floor((s.yaw_deg - x0) / bin_deg)), 0, nx - 1);
        const int iy = std::clamp(static_cast<int>(std::floor((s.pitch_deg - y0) / bin_deg)), 0, ny - 1);
        ++counts[static_cast<std::size_t>(iy) * nx + ix];
    }
    const std::size_t peak = *std::max_element(counts.begin(), counts.end());
    const double left = 60, top = 20, size = 400;
    const double cell = size / std::max(nx, ny);
    std::string out = detail::header(left + size + 40, top + size + 50);
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            const std::size_t c = counts[static_cast<std::size_t>(iy) * nx + ix];
            if (c == 0) continue;
            const double shade = std::log1p(static_cast<double>(c)) / std::log1p(static_cast<double>(peak));
            const int level = 255 - static_cast<int>(std::lround(215.0 * shade));
            out += "<rect class=\"bin\" data-count=\"" + std::to_string(c) + "\" x=\"" + num(left + ix * cell) +
                   "\" y=\"" + num(top + (ny - 1 - iy) * cell) + "\" width=\"" + num(cell) + "\" height=\"" +
                   num(cell) + "\" fill=\"rgb(" + std::to_string(level) + "," + std::to_string(level) + ",255)\"/>\n";
        }
    }
    out += "<rect x=\"" + num(left) + "\" y=\"" + num(top) +
           "\" width=\"" + num(nx * cell) + "\" height=\"" + num(ny * cell) + "\" fill=\"none\" stroke=\"#888\"/>\n";
    out += detail::text(left + nx * cell / 2, top + ny * cell + 30, "yaw (deg)");
    out += detail::text(left, top + ny * cell + 14, num(x0)) +
           detail::text(left + nx * cell, top + ny * cell + 14, num(x0 + nx * bin_deg));
    out += detail::text(left - 6, top + ny * cell, num(y0), "end") + detail::text(left - 6, top + 10, num(y0 + ny * bin_deg), "end");
    out += detail::text(20, top + ny * cell / 2, "pitch", "start");
    out += "</svg>\n";
    return out;
}

}  // namespace gazeseq::svg
