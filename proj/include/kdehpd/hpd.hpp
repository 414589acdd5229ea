#ifndef KDEHPD_HPD_HPP
#define KDEHPD_HPD_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "kdehpd/core.hpp"
#include "kdehpd/kde.hpp"

namespace kdehpd {

/// Tail masses of one HPD interval: `lower` = F(l), `upper` = 1 - F(u).
struct QuantilePair {
    double lower = 0.0;
    double upper = 0.0;
};

struct HpdResult {
    double alpha = 0.0;
    double lambda_hat = 0.0;
    std::vector<Interval> intervals;           // score units, sorted, disjoint
    std::vector<QuantilePair> quantile_pairs;  // one per interval
    std::size_t discarded = 0;                 // slivers removed below the mass threshold
};

/// Intervals with less KDE mass than this are treated as tail wiggles.
inline constexpr double kMinComponentMass = 1e-3;

/// Trapezoid mass of the grid density over grid points where f <= lambda.
inline double sublevel_mass(const KdeModel& m, double lambda) {
    const auto& f = m.grid_density();
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (f[i] <= lambda) s += m.trapezoid_weight(i) * f[i];
    }
    return s;
}

/// Density cutoff whose sublevel set carries mass alpha, by bisection on
/// lambda over [0, max grid density].
inline double find_cutoff(const KdeModel& m, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0,1)");
    const auto& f = m.grid_density();
    double lo = 0.0;
    double hi = *std::max_element(f.begin(), f.end());
    double mass_lo = sublevel_mass(m, lo);
    double mass_hi = sublevel_mass(m, hi);
    if (mass_lo >= alpha) return lo;
    while (hi - lo >= 1e-10) {
        const double mid = 0.5 * (lo + hi);
        const double mm = sublevel_mass(m, mid);
        if (std::abs(mm - alpha) < 1e-6) return mid;
        if (mm < alpha) {
            lo = mid;
            mass_lo = mm;
        } else {
            hi = mid;
            mass_hi = mm;
        }
    }
    return (alpha - mass_lo <= mass_hi - alpha) ? lo : hi;
}

/// Maximal runs of grid points with f > lambda, endpoints refined by 20
/// bisection steps on f(z) - lambda between neighbouring grid points.
inline std::vector<Interval> extract_intervals(const KdeModel& m, double lambda) {
    if (lambda < 0.0) throw Error("density cutoff must be non-negative");
    const auto& f = m.grid_density();
    if (lambda >= *std::max_element(f.begin(), f.end())) throw Error("empty HPD set");

    // Root of f - lambda in [a, b] where the sign at `a` is `above_at_a`.
    auto refine = [&](double a, double b, bool above_at_a) {
        for (int it = 0; it < 20; ++it) {
            const double mid = 0.5 * (a + b);
            const bool above = m.eval(mid) > lambda;
            if (above == above_at_a) a = mid;
            else b = mid;
        }
        return 0.5 * (a + b);
    };

    std::vector<Interval> out;
    const std::size_t n = f.size();
    std::size_t i = 0;
    while (i < n) {
        if (f[i] <= lambda) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < n && f[i] > lambda) ++i;
        const std::size_t stop = i - 1;
        const double lo = start == 0 ? m.grid_x(0) : refine(m.grid_x(start - 1), m.grid_x(start), false);
        const double hi = stop + 1 == n ? m.grid_x(n - 1) : refine(m.grid_x(stop), m.grid_x(stop + 1), true);
        out.push_back({lo, hi});
    }
    return out;
}

/// (F(l_j), 1 - F(u_j)) for each interval, using the exact kernel CDF.
inline std::vector<QuantilePair> quantile_pairs(const KdeModel& m, const std::vector<Interval>& intervals) {
    std::vector<QuantilePair> out;
    out.reserve(intervals.size());
    for (const auto& iv : intervals) out.push_back({m.cdf(iv.lo), 1.0 - m.cdf(iv.hi)});
    return out;
}

/// Smallest (1 - alpha) set of the KDE with slivers below
/// kMinComponentMass removed.
inline HpdResult fit_hpd(const KdeModel& m, double alpha) {
    HpdResult r;
    r.alpha = alpha;
    r.lambda_hat = find_cutoff(m, alpha);
    for (const auto& iv : extract_intervals(m, r.lambda_hat)) {
        if (m.cdf(iv.hi) - m.cdf(iv.lo) < kMinComponentMass) {
            ++r.discarded;
            continue;
        }
        r.intervals.push_back(iv);
    }
    r.quantile_pairs = quantile_pairs(m, r.intervals);
    return r;
}

}  // namespace kdehpd

#endif  // KDEHPD_HPD_HPP
