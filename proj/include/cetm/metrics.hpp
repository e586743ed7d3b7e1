#pragma once

// Evaluation metrics: AUC, censoring-aware MRAE, Harrell's concordance index
// and binned calibration curves.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace cetm {

class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Mann-Whitney statistic with midranks: P(score⁺ > score⁻) + ½ P(tie).
inline double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t lo = 0; lo < n;) {
        std::size_t hi = lo;
        while (hi + 1 < n && scores[order[hi + 1]] == scores[order[lo]]) ++hi;
        const double midrank = 0.5 * static_cast<double>(lo + hi) + 1.0;
        for (std::size_t k = lo; k <= hi; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum_pos += midrank;
                ++n_pos;
            } else if (labels[order[k]] != 0) {
                throw std::invalid_argument("auc: labels must be 0 or 1");
            }
        }
        lo = hi + 1;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("auc: both classes must be present");
    const double np = static_cast<double>(n_pos);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

// Mean of |t - t̂|/t_max for observed events and max(0, t - t̂)/t_max for
// censored ones.
inline double mrae(std::span<const double> t, std::span<const int> s, std::span<const double> t_hat, double t_max) {
    if (t.size() != s.size() || t.size() != t_hat.size()) throw std::invalid_argument("mrae: length mismatch");
    if (!(t_max > 0.0)) throw std::invalid_argument("mrae: t_max must be positive");
    if (t.empty()) throw UndefinedMetric("mrae: no samples");
    double total = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double err = s[i] == 1 ? std::abs(t[i] - t_hat[i]) : std::max(0.0, t[i] - t_hat[i]);
        total += err / t_max;
    }
    return total / static_cast<double>(t.size());
}

// Harrell's C. A pair is comparable when both times are observed events with
// distinct times, or when an observed event precedes the other sample's
// censoring time. Ties in t̂ score ½.
inline double concordance_index(std::span<const double> t, std::span<const int> s, std::span<const double> t_hat) {
    if (t.size() != s.size() || t.size() != t_hat.size()) {
        throw std::invalid_argument("concordance_index: length mismatch");
    }
    const std::size_t n = t.size();
    double concordant = 0.0;
    double comparable = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (s[i] != 1) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || !(t[i] < t[j])) continue;
            // i is an observed event strictly before j's time, whether j is an
            // event or a censoring time.
            comparable += 1.0;
            if (t_hat[i] < t_hat[j])
                concordant += 1.0;
            else if (t_hat[i] == t_hat[j])
                concordant += 0.5;
        }
    }
    if (comparable == 0.0) throw UndefinedMetric("concordance_index: no comparable pairs");
    return concordant / comparable;
}

struct CalibrationPoint {
    double bin_center = 0.0;
    double predicted_mean = 0.0;
    double empirical_freq = 0.0;
    std::size_t count = 0;
};

// Equal-width bins over [0, 1]; empty bins are omitted.
inline std::vector<CalibrationPoint> calibration_curve(std::span<const double> p, std::span<const int> c,
                                                       std::size_t bins) {
    if (bins < 2) throw std::invalid_argument("calibration_curve: need at least two bins");
    if (p.size() != c.size()) throw std::invalid_argument("calibration_curve: length mismatch");
    std::vector<double> sum_p(bins, 0.0), sum_c(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto b = std::min(bins - 1, static_cast<std::size_t>(std::clamp(p[i], 0.0, 1.0) * static_cast<double>(bins)));
        sum_p[b] += p[i];
        sum_c[b] += c[i];
        ++count[b];
    }
    std::vector<CalibrationPoint> out;
    for (std::size_t b = 0; b < bins; ++b) {
        if (count[b] == 0) continue;
        const double n = static_cast<double>(count[b]);
        out.push_back({(static_cast<double>(b) + 0.5) / static_cast<double>(bins), sum_p[b] / n, sum_c[b] / n, count[b]});
    }
    return out;
}

inline double max_calibration_gap(const std::vector<CalibrationPoint>& curve) {
    double gap = 0.0;
    for (const auto& pt : curve) gap = std::max(gap, std::abs(pt.empirical_freq - pt.predicted_mean));
    return gap;
}

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

// Sample mean and (n-1) standard deviation; sd is 0 for a single value.
inline MeanSd mean_sd(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("mean_sd: empty input");
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace cetm
