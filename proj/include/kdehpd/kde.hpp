#ifndef KDEHPD_KDE_HPP
#define KDEHPD_KDE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "kdehpd/core.hpp"

namespace kdehpd {

enum class Kernel { gaussian };

inline constexpr std::size_t kDefaultGridSize = 2048;

namespace detail {

inline double std_normal_pdf(double t) {
    return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}

inline double std_normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }

// Beyond this many bandwidths the Gaussian kernel underflows to zero and
// its CDF saturates, so truncating the sum there is exact in doubles.
inline constexpr double kKernelReach = 39.0;

}  // namespace detail

/// Bandwidth rule 0.9 * min(sd, IQR/1.34) * n^(-1/3), falling back to sd
/// when the IQR vanishes and to 1e-3 when both do.
inline double bandwidth_rule(double sd, double iqr, std::size_t n) {
    const double rate = std::pow(static_cast<double>(n), -1.0 / 3.0);
    const double spread = iqr / 1.34;
    if (sd > 0.0 && spread > 0.0) return 0.9 * std::min(sd, spread) * rate;
    if (sd > 0.0) return 0.9 * sd * rate;
    return 1e-3;
}

inline double bandwidth(std::span<const double> points) {
    if (points.size() < 2) throw Error("bandwidth needs at least two points");
    std::vector<double> s(points.begin(), points.end());
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : s) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const double iqr = detail::sorted_quantile(s, 0.75) - detail::sorted_quantile(s, 0.25);
    return bandwidth_rule(sd, iqr, s.size());
}

/// Univariate Gaussian kernel density estimate with a cached uniform grid
/// over [min - 4h, max + 4h].
class KdeModel {
public:
    KdeModel(std::vector<double> points, double h, std::size_t grid_size = kDefaultGridSize)
        : points_(std::move(points)), h_(h) {
        if (points_.empty()) throw Error("kernel density estimate needs points");
        if (!(h_ > 0.0) || !std::isfinite(h_)) throw Error("bandwidth must be positive");
        if (grid_size < 2) throw Error("grid needs at least two points");
        std::sort(points_.begin(), points_.end());
        grid_lo_ = points_.front() - 4.0 * h_;
        const double hi = points_.back() + 4.0 * h_;
        step_ = (hi - grid_lo_) / static_cast<double>(grid_size - 1);
        grid_f_.resize(grid_size);
        for (std::size_t i = 0; i < grid_size; ++i) grid_f_[i] = eval(grid_x(i));
    }

    /// Uses the default bandwidth rule.
    explicit KdeModel(std::vector<double> points)
        : KdeModel(points, kdehpd::bandwidth(points)) {}

    double bandwidth() const { return h_; }
    Kernel kernel() const { return Kernel::gaussian; }
    const std::vector<double>& points() const { return points_; }

    std::size_t grid_size() const { return grid_f_.size(); }
    double grid_step() const { return step_; }
    double grid_x(std::size_t i) const { return grid_lo_ + step_ * static_cast<double>(i); }
    const std::vector<double>& grid_density() const { return grid_f_; }
    double grid_lo() const { return grid_lo_; }
    double grid_hi() const { return grid_x(grid_f_.size() - 1); }

    /// Exact density (1/nh) sum K((z_i - z)/h).
    double eval(double z) const {
        const auto [first, last] = window(z);
        double s = 0.0;
        for (auto it = first; it != last; ++it) s += detail::std_normal_pdf((z - *it) / h_);
        return s / (static_cast<double>(points_.size()) * h_);
    }

    /// Exact CDF (1/n) sum Phi((z - z_i)/h).
    double cdf(double z) const {
        if (z == kInf) return 1.0;
        if (z == -kInf) return 0.0;
        const auto [first, last] = window(z);
        // Points left of the window contribute exactly 1.
        double s = static_cast<double>(std::distance(points_.begin(), first));
        for (auto it = first; it != last; ++it) s += detail::std_normal_cdf((z - *it) / h_);
        return std::clamp(s / static_cast<double>(points_.size()), 0.0, 1.0);
    }

    /// Trapezoid integral of the cached grid density.
    double grid_mass() const {
        double s = 0.0;
        for (std::size_t i = 0; i < grid_f_.size(); ++i) s += trapezoid_weight(i) * grid_f_[i];
        return s;
    }

    double trapezoid_weight(std::size_t i) const {
        return (i == 0 || i + 1 == grid_f_.size()) ? 0.5 * step_ : step_;
    }

private:
    using Iter = std::vector<double>::const_iterator;

    std::pair<Iter, Iter> window(double z) const {
        const double reach = detail::kKernelReach * h_;
        return {std::lower_bound(points_.begin(), points_.end(), z - reach),
                std::upper_bound(points_.begin(), points_.end(), z + reach)};
    }

    std::vector<double> points_;
    double h_;
    double grid_lo_ = 0.0;
    double step_ = 0.0;
    std::vector<double> grid_f_;
};

inline double kde_eval(const KdeModel& m, double z) { return m.eval(z); }
inline double kde_cdf(const KdeModel& m, double z) { return m.cdf(z); }

}  // namespace kdehpd

#endif  // KDEHPD_KDE_HPP
