#include "pfdiqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pfdiqa/errors.hpp"

namespace pfd {

namespace {

void check_pair(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size())
        throw ArgumentError("correlation inputs have different lengths");
    if (pred.size() < 2)
        throw ArgumentError("correlation needs at least two samples");
    for (double v : pred)
        if (!std::isfinite(v)) throw ArgumentError("non-finite prediction");
    for (double v : truth)
        if (!std::isfinite(v)) throw ArgumentError("non-finite ground truth");
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0)
        throw UndefinedCorrelationError("correlation of a constant vector");
    return cov / std::sqrt(va * vb);
}

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

double srcc(const std::vector<double>& pred, const std::vector<double>& truth) {
    check_pair(pred, truth);
    return pearson(average_ranks(pred), average_ranks(truth));
}

double plcc(const std::vector<double>& pred, const std::vector<double>& truth) {
    check_pair(pred, truth);
    return pearson(pred, truth);
}

}  // namespace pfd
