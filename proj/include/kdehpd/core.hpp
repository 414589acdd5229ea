#ifndef KDEHPD_CORE_HPP
#define KDEHPD_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kdehpd {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Raised for invalid inputs and failed fits throughout the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Paired covariates and responses. Covariates are stored row-major.
class Dataset {
public:
    Dataset() = default;

    Dataset(std::vector<double> x, std::size_t dim, std::vector<double> y)
        : x_(std::move(x)), y_(std::move(y)), dim_(dim) {
        if (dim_ == 0) {
            throw Error("dataset needs at least one covariate column");
        }
        if (x_.size() != y_.size() * dim_) {
            throw Error("covariate row count does not match response length");
        }
        for (double v : x_) {
            if (!std::isfinite(v)) throw Error("non-finite covariate value");
        }
        for (double v : y_) {
            if (!std::isfinite(v)) throw Error("non-finite response value");
        }
    }

    std::size_t size() const { return y_.size(); }
    std::size_t dim() const { return dim_; }
    bool empty() const { return y_.empty(); }

    std::span<const double> row(std::size_t i) const {
        return {x_.data() + i * dim_, dim_};
    }
    double y(std::size_t i) const { return y_[i]; }

    const std::vector<double>& x_data() const { return x_; }
    const std::vector<double>& y_data() const { return y_; }

    /// Rows at `idx`, in the order given.
    Dataset subset(std::span<const std::size_t> idx) const {
        std::vector<double> x;
        std::vector<double> y;
        x.reserve(idx.size() * dim_);
        y.reserve(idx.size());
        for (std::size_t i : idx) {
            if (i >= size()) throw Error("row index out of range");
            auto r = row(i);
            x.insert(x.end(), r.begin(), r.end());
            y.push_back(y_[i]);
        }
        Dataset out;
        out.x_ = std::move(x);
        out.y_ = std::move(y);
        out.dim_ = dim_;
        return out;
    }

    /// Same covariates, responses replaced.
    Dataset with_response(std::vector<double> y) const {
        return Dataset(x_, dim_, std::move(y));
    }

private:
    std::vector<double> x_;
    std::vector<double> y_;
    std::size_t dim_ = 1;
};

/// Fold assignment for split conformal prediction. An empty `train2`
/// means the homoscedastic mode (unit scale).
struct SplitPlan {
    std::vector<std::size_t> train1;
    std::vector<std::size_t> train2;
    std::vector<std::size_t> cal;

    void validate(std::size_t n) const {
        std::vector<char> seen(n, 0);
        for (const auto* fold : {&train1, &train2, &cal}) {
            for (std::size_t i : *fold) {
                if (i >= n) throw Error("split index out of range");
                if (seen[i]) throw Error("split folds overlap");
                seen[i] = 1;
            }
        }
    }

    /// Contiguous folds sized by fractions of n (train1, train2, cal).
    static SplitPlan contiguous(std::size_t n, double f1, double f2, double fcal) {
        if (f1 < 0 || f2 < 0 || fcal < 0 || f1 + f2 + fcal > 1.0 + 1e-12) {
            throw Error("split fractions must be non-negative and sum to at most 1");
        }
        const auto n1 = static_cast<std::size_t>(std::llround(f1 * static_cast<double>(n)));
        const auto n2 = static_cast<std::size_t>(std::llround(f2 * static_cast<double>(n)));
        auto nc = static_cast<std::size_t>(std::llround(fcal * static_cast<double>(n)));
        if (n1 + n2 + nc > n) nc = n - n1 - n2;
        return from_counts(n1, n2, nc);
    }

    static SplitPlan from_counts(std::size_t n1, std::size_t n2, std::size_t ncal) {
        SplitPlan p;
        std::size_t i = 0;
        for (std::size_t k = 0; k < n1; ++k) p.train1.push_back(i++);
        for (std::size_t k = 0; k < n2; ++k) p.train2.push_back(i++);
        for (std::size_t k = 0; k < ncal; ++k) p.cal.push_back(i++);
        return p;
    }
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double length() const { return hi - lo; }
    bool contains(double v) const { return lo <= v && v <= hi; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

/// A finite union of closed intervals on the response axis.
///
/// Built through `coalesce`, the interval list is sorted and strictly
/// disjoint (hi_j < lo_{j+1}). Endpoints may be -inf/+inf when an order
/// statistic index was clamped.
class PredictionRegion {
public:
    PredictionRegion() = default;
    explicit PredictionRegion(std::vector<Interval> intervals)
        : intervals_(std::move(intervals)) {}

    const std::vector<Interval>& intervals() const { return intervals_; }
    std::size_t size() const { return intervals_.size(); }
    bool empty() const { return intervals_.empty(); }

    friend bool operator==(const PredictionRegion&, const PredictionRegion&) = default;

private:
    std::vector<Interval> intervals_;
};

inline PredictionRegion coalesce(const PredictionRegion& region) {
    std::vector<Interval> iv;
    iv.reserve(region.size());
    for (const auto& i : region.intervals()) {
        if (std::isnan(i.lo) || std::isnan(i.hi) || i.lo > i.hi) {
            throw Error("malformed interval");
        }
        iv.push_back(i);
    }
    std::stable_sort(iv.begin(), iv.end(),
                     [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
    std::vector<Interval> out;
    for (const auto& i : iv) {
        // Closed intervals that touch share a point and merge.
        if (!out.empty() && i.lo <= out.back().hi) {
            out.back().hi = std::max(out.back().hi, i.hi);
        } else {
            out.push_back(i);
        }
    }
    return PredictionRegion(std::move(out));
}

inline double region_length(const PredictionRegion& region) {
    double total = 0.0;
    for (const auto& i : region.intervals()) {
        if (std::isinf(i.lo) || std::isinf(i.hi)) return kInf;
        total += i.length();
    }
    return total;
}

inline bool region_contains(const PredictionRegion& region, double y) {
    const auto& iv = region.intervals();
    auto it = std::upper_bound(iv.begin(), iv.end(), y,
                               [](double v, const Interval& i) { return v < i.lo; });
    if (it == iv.begin()) return false;
    return std::prev(it)->contains(y);
}

namespace detail {

// Distance from point z to a coalesced union of intervals.
inline double point_to_region(double z, const std::vector<Interval>& iv) {
    double best = kInf;
    for (const auto& i : iv) {
        double d = 0.0;
        if (z < i.lo) d = i.lo - z;
        else if (z > i.hi) d = z - i.hi;
        best = std::min(best, d);
        if (best == 0.0) break;
    }
    return best;
}

// sup over a in A of d(a, B). On each interval of A, d(., B) is piecewise
// linear with maxima at the interval endpoints or at midpoints of B's gaps.
inline double directed_hausdorff(const std::vector<Interval>& a,
                                 const std::vector<Interval>& b) {
    double worst = 0.0;
    for (const auto& ia : a) {
        worst = std::max(worst, point_to_region(ia.lo, b));
        worst = std::max(worst, point_to_region(ia.hi, b));
        for (std::size_t j = 0; j + 1 < b.size(); ++j) {
            const double mid = 0.5 * (b[j].hi + b[j + 1].lo);
            if (ia.contains(mid)) worst = std::max(worst, point_to_region(mid, b));
        }
    }
    return worst;
}

}  // namespace detail

/// Exact Hausdorff distance between two interval unions, evaluated at
/// interval endpoints and gap midpoints. Infinite endpoints give +inf
/// unless the regions are identical.
inline double hausdorff(const PredictionRegion& a, const PredictionRegion& b) {
    if (a.empty() || b.empty()) throw Error("Hausdorff undefined for empty set");
    const auto ca = coalesce(a);
    const auto cb = coalesce(b);
    if (ca == cb) return 0.0;
    auto has_inf = [](const PredictionRegion& r) {
        return std::any_of(r.intervals().begin(), r.intervals().end(), [](const Interval& i) {
            return std::isinf(i.lo) || std::isinf(i.hi);
        });
    };
    if (has_inf(ca) || has_inf(cb)) return kInf;
    return std::max(detail::directed_hausdorff(ca.intervals(), cb.intervals()),
                    detail::directed_hausdorff(cb.intervals(), ca.intervals()));
}

/// Calibration nonconformity scores with a cached sorted copy.
class ScoreVector {
public:
    ScoreVector() = default;
    explicit ScoreVector(std::vector<double> v) : values_(std::move(v)), sorted_(values_) {
        std::stable_sort(sorted_.begin(), sorted_.end());
    }

    const std::vector<double>& values() const { return values_; }
    const std::vector<double>& sorted() const { return sorted_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    /// 1-based order statistic with the -inf/+inf clamp.
    double order_statistic(long long k) const {
        if (k < 1) return -kInf;
        if (k > static_cast<long long>(sorted_.size())) return kInf;
        return sorted_[static_cast<std::size_t>(k - 1)];
    }

private:
    std::vector<double> values_;
    std::vector<double> sorted_;
};

namespace detail {

// ceil(t) with t snapped to a nearby integer first so that products such as
// 0.05 * 100 do not pick up a spurious extra rank from binary rounding.
inline long long snapped_ceil(double t) {
    const double r = std::round(t);
    if (std::abs(t - r) <= 1e-9 * std::max(1.0, std::abs(t))) return static_cast<long long>(r);
    return static_cast<long long>(std::ceil(t));
}

/// Type-7 (linear interpolation) empirical quantile of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw Error("quantile of empty sample");
    if (sorted.size() == 1) return sorted.front();
    const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

/// Rank index ceil(delta * (n + 1)).
inline long long conformal_q_index(std::size_t n, double delta) {
    return detail::snapped_ceil(delta * static_cast<double>(n + 1));
}

/// Rank index ceil(delta * (n + 1) - 1).
inline long long conformal_r_index(std::size_t n, double delta) {
    return detail::snapped_ceil(delta * static_cast<double>(n + 1) - 1.0);
}

inline double conformal_q(const ScoreVector& v, double delta) {
    if (v.empty()) throw Error("no calibration scores");
    return v.order_statistic(conformal_q_index(v.size(), delta));
}

inline double conformal_r(const ScoreVector& v, double delta) {
    if (v.empty()) throw Error("no calibration scores");
    return v.order_statistic(conformal_r_index(v.size(), delta));
}

}  // namespace kdehpd

#endif  // KDEHPD_CORE_HPP
