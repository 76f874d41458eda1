#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "gazeseq/error.hpp"

namespace gazeseq {

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

/// Ranks of `values` (1-based), ties receive the average of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

/// Largest reduced sample size for which the signed-rank null distribution is
/// enumerated exactly.
inline constexpr std::size_t kWilcoxonExactMaxN = 25;

/// Two-sided paired Wilcoxon signed-rank test on a - b.
///
/// Zero differences are dropped (Wilcoxon's treatment). The statistic is
/// min(W+, W-). The p-value is exact for n <= 25 (null distribution built over
/// doubled average ranks, so ties stay exact) and uses the tie-corrected normal
/// approximation otherwise.
inline TestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidInput("wilcoxon_signed_rank: samples must be paired");
    std::vector<double> diffs;
    diffs.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (!std::isfinite(d)) throw InvalidInput("wilcoxon_signed_rank: non-finite difference");
        if (d != 0.0) diffs.push_back(d);
    }
    if (diffs.empty()) throw DegenerateInput("wilcoxon_signed_rank: all differences are zero");
    if (diffs.size() < 5) {
        throw InvalidInput("wilcoxon_signed_rank: need at least 5 non-zero differences");
    }

    std::vector<double> magnitudes(diffs.size());
    std::transform(diffs.begin(), diffs.end(), magnitudes.begin(), [](double d) { return std::abs(d); });
    const auto ranks = average_ranks(magnitudes);

    double w_plus = 0.0;
    double w_minus = 0.0;
    for (std::size_t i = 0; i < diffs.size(); ++i) (diffs[i] > 0 ? w_plus : w_minus) += ranks[i];
    const double w = std::min(w_plus, w_minus);
    const std::size_t n = diffs.size();

    TestResult result{w, 1.0, n};
    if (n <= kWilcoxonExactMaxN) {
        // Doubled ranks are integers even with ties.
        std::vector<int> doubled(n);
        int total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            doubled[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
            total += doubled[i];
        }
        std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
        counts[0] = 1.0;
        for (int r : doubled) {
            for (int s = total; s >= r; --s) counts[s] += counts[s - r];
        }
        const int threshold = static_cast<int>(std::lround(2.0 * w));
        double tail = 0.0;
        for (int s = 0; s <= threshold; ++s) tail += counts[s];
        result.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(n)));
    } else {
        const double nn = static_cast<double>(n);
        const double mean = nn * (nn + 1.0) / 4.0;
        double tie_term = 0.0;
        auto sorted = magnitudes;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size();) {
            std::size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            tie_term += t * t * t - t;
            i = j + 1;
        }
        const double variance = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
        const double z = (w - mean) / std::sqrt(variance);
        result.p_value = std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), 0.0, 1.0);
    }
    return result;
}

/// Survival function of the Kolmogorov distribution, Q(lambda) = P(K > lambda).
inline double kolmogorov_survival(double lambda) {
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-16 * std::abs(sum)) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Two-sample, two-sided Kolmogorov-Smirnov test with asymptotic p-value
/// (Stephens' small-sample correction of the effective size).
inline TestResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw InvalidInput("ks_two_sample: both samples must be non-empty");
    std::vector<double> xs(a.begin(), a.end());
    std::vector<double> ys(b.begin(), b.end());
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    const double na = static_cast<double>(xs.size());
    const double nb = static_cast<double>(ys.size());

    double d = 0.0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < xs.size() && j < ys.size()) {
        const double v = std::min(xs[i], ys[j]);
        while (i < xs.size() && xs[i] == v) ++i;
        while (j < ys.size() && ys[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }

    const double en = std::sqrt(na * nb / (na + nb));
    const double p = d == 0.0 ? 1.0 : kolmogorov_survival((en + 0.12 + 0.11 / en) * d);
    return {d, p, xs.size() + ys.size()};
}

}  // namespace gazeseq
