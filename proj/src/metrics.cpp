#include "dipair/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dipair/errors.hpp"

namespace dipair {

double auc_roc(const std::vector<float>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw MetricError("scores/labels size mismatch");
    std::int64_t pos = 0, neg = 0;
    for (int l : labels) {
        if (l == 1) ++pos;
        else if (l == 0) ++neg;
        else throw MetricError("labels must be 0 or 1");
    }
    if (pos == 0 || neg == 0) throw MetricError("AUC undefined with a single class");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks over tie groups, then the Mann-Whitney U statistic.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double pearson(const std::vector<float>& x, const std::vector<float>& y) {
    if (x.size() != y.size()) throw MetricError("pearson input size mismatch");
    if (x.size() < 2) throw MetricError("pearson needs at least 2 samples");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw MetricError("pearson undefined with zero variance");
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace dipair
