#ifndef KDEHPD_TESTS_SUPPORT_HPP
#define KDEHPD_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "kdehpd/core.hpp"
#include "kdehpd/rng.hpp"

namespace testing_support {

using kdehpd::Dataset;
using kdehpd::Interval;
using kdehpd::PredictionRegion;

inline Dataset line_data(const std::vector<double>& x, const std::function<double(double)>& f) {
    std::vector<double> y;
    for (double v : x) y.push_back(f(v));
    return Dataset(x, 1, y);
}

inline std::vector<double> normal_draws(std::size_t n, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
    kdehpd::CounterRng rng(seed, 7);
    std::vector<double> v(n);
    for (auto& z : v) z = rng.normal(mean, sd);
    return v;
}

/// Plain distance from z to a union of closed intervals.
inline double dist_to_union(double z, const std::vector<Interval>& iv) {
    double best = INFINITY;
    for (const auto& i : iv) {
        const double d = z < i.lo ? i.lo - z : (z > i.hi ? z - i.hi : 0.0);
        best = std::min(best, d);
    }
    return best;
}

/// Hausdorff distance by walking both sets on a grid of the given step.
inline double brute_hausdorff(const PredictionRegion& a, const PredictionRegion& b, double step) {
    auto directed = [step](const PredictionRegion& from, const PredictionRegion& to) {
        double worst = 0.0;
        for (const auto& i : from.intervals()) {
            const auto m = static_cast<long long>(std::ceil((i.hi - i.lo) / step));
            for (long long k = 0; k <= m; ++k) {
                const double z = std::min(i.hi, i.lo + static_cast<double>(k) * step);
                worst = std::max(worst, dist_to_union(z, to.intervals()));
            }
        }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

/// Random region of up to `max_pieces` intervals inside [lo, hi], not
/// necessarily sorted or disjoint.
inline PredictionRegion random_region(kdehpd::CounterRng& rng, std::size_t max_pieces, double lo, double hi) {
    const auto pieces = 1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(max_pieces));
    std::vector<Interval> iv;
    for (std::size_t i = 0; i < std::min(pieces, max_pieces); ++i) {
        double a = rng.uniform(lo, hi);
        double b = rng.uniform(lo, hi);
        if (a > b) std::swap(a, b);
        iv.push_back({a, b});
    }
    return PredictionRegion(iv);
}

}  // namespace testing_support

#endif  // KDEHPD_TESTS_SUPPORT_HPP
