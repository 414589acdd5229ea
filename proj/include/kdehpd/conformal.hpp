#ifndef KDEHPD_CONFORMAL_HPP
#define KDEHPD_CONFORMAL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "kdehpd/core.hpp"
#include "kdehpd/hpd.hpp"
#include "kdehpd/kde.hpp"
#include "kdehpd/regress.hpp"

namespace kdehpd {

// ---------------------------------------------------------------------------
// Signed-error building blocks
// ---------------------------------------------------------------------------

/// Score-space offsets (R_{a1}(V), Q_{1-a2}(V)) of the signed-error region.
inline Interval secpr_offsets(const ScoreVector& v, double alpha1, double alpha2) {
    return {conformal_r(v, alpha1), conformal_q(v, 1.0 - alpha2)};
}

/// Same region written with flipped scores V' = -V:
/// [-Q_{1-a1}(V'), -R_{a2}(V')]. Identical to `secpr_offsets` unless
/// a_i(n+1) is a positive integer, where that end moves up one rank; the
/// coverage bound holds either way.
inline Interval secpr_offsets_flipped(const ScoreVector& v, double alpha1, double alpha2) {
    std::vector<double> neg(v.values().size());
    std::transform(v.values().begin(), v.values().end(), neg.begin(), [](double s) { return -s; });
    const ScoreVector flipped(std::move(neg));
    return {-conformal_q(flipped, 1.0 - alpha1), -conformal_r(flipped, alpha2)};
}

/// Exact coverage probability of [V_(lo_rank), V_(hi_rank)] for a new
/// exchangeable score with continuous law, from the uniform rank of the
/// new score among n + 1.
inline double rank_window_coverage(std::size_t n, long long lo_rank, long long hi_rank) {
    long long covered = 0;
    for (long long r = 1; r <= static_cast<long long>(n) + 1; ++r) {
        // r - 1 calibration scores lie below the new one.
        const bool above_lo = lo_rank < 1 || r - 1 >= lo_rank;
        const bool below_hi = hi_rank > static_cast<long long>(n) || r <= hi_rank;
        if (above_lo && below_hi) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(n + 1);
}

// ---------------------------------------------------------------------------
// KDE-HPD
// ---------------------------------------------------------------------------

struct KdeHpdConfig {
    MeanConfig mean;
    ScaleConfig scale;  // constant_one means homoscedastic mode
    std::size_t grid_size = kDefaultGridSize;
};

/// Score-space band [eta, gamma] for one HPD component.
struct ScoreBand {
    double eta = 0.0;
    double gamma = 0.0;
};

class KdeHpdPipeline {
public:
    KdeHpdPipeline(MeanEstimator mean, ScaleEstimator scale, ScoreVector scores, double bandwidth,
                   HpdResult hpd, std::vector<ScoreBand> bands, std::size_t dropped)
        : mean_(std::move(mean)),
          scale_(std::move(scale)),
          scores_(std::move(scores)),
          bandwidth_(bandwidth),
          hpd_(std::move(hpd)),
          bands_(std::move(bands)),
          dropped_(dropped) {}

    const MeanEstimator& mean() const { return mean_; }
    const ScaleEstimator& scale() const { return scale_; }
    const ScoreVector& scores() const { return scores_; }
    double bandwidth() const { return bandwidth_; }
    const HpdResult& hpd() const { return hpd_; }
    const std::vector<ScoreBand>& bands() const { return bands_; }
    double alpha() const { return hpd_.alpha; }
    /// Components whose conformal indices crossed (eta > gamma).
    std::size_t dropped() const { return dropped_; }

    PredictionRegion predict(std::span<const double> x) const {
        const double g = mean_.predict(x);
        const double s = scale_.predict(x);
        std::vector<Interval> iv;
        iv.reserve(bands_.size());
        for (const auto& b : bands_) iv.push_back({g + b.eta * s, g + b.gamma * s});
        return coalesce(PredictionRegion(std::move(iv)));
    }

private:
    MeanEstimator mean_;
    ScaleEstimator scale_;
    ScoreVector scores_;
    double bandwidth_;
    HpdResult hpd_;
    std::vector<ScoreBand> bands_;
    std::size_t dropped_;
};

/// Calibration half of KDE-HPD for already-trained mean and scale models.
inline KdeHpdPipeline calibrate_kde_hpd(MeanEstimator mean, ScaleEstimator scale, const Dataset& cal,
                                        double alpha, std::size_t grid_size = kDefaultGridSize) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0,1)");
    if (cal.size() < 2) throw Error("calibration fold needs at least two rows");
    if (static_cast<double>(cal.size()) < std::ceil(1.0 / alpha - 1e-9)) {
        throw Error("calibration fold too small for the requested alpha");
    }
    std::vector<double> v(cal.size());
    for (std::size_t i = 0; i < cal.size(); ++i) {
        v[i] = (cal.y(i) - mean.predict(cal.row(i))) / scale.predict(cal.row(i));
    }
    ScoreVector scores(v);
    const double h = bandwidth(v);
    const KdeModel kde(std::move(v), h, grid_size);
    HpdResult hpd = fit_hpd(kde, alpha);

    std::vector<ScoreBand> bands;
    std::size_t dropped = 0;
    for (const auto& qp : hpd.quantile_pairs) {
        const double eta = conformal_r(scores, qp.lower);
        const double gamma = conformal_q(scores, 1.0 - qp.upper);
        if (eta > gamma) {
            ++dropped;
            continue;
        }
        bands.push_back({eta, gamma});
    }
    return KdeHpdPipeline(std::move(mean), std::move(scale), std::move(scores), h, std::move(hpd),
                          std::move(bands), dropped);
}

/// Trains the mean model on `train1`, the scale model on `train2` (unit scale
/// when the config says constant_one), then calibrates on `cal`.
inline KdeHpdPipeline fit_kde_hpd(const Dataset& data, const SplitPlan& plan, double alpha,
                                  const KdeHpdConfig& cfg = {}) {
    plan.validate(data.size());
    if (plan.train1.empty() || plan.cal.empty()) throw Error("training and calibration folds must be nonempty");
    const Dataset train1 = data.subset(plan.train1);
    MeanEstimator mean = fit_mean(train1, cfg.mean);
    ScaleEstimator scale = ScaleEstimator::unit(data.dim());
    if (cfg.scale.kind != ScaleKind::constant_one) {
        if (plan.train2.empty()) throw Error("scale model needs a nonempty second training fold");
        scale = fit_scale(data.subset(plan.train2), mean, cfg.scale);
    }
    return calibrate_kde_hpd(std::move(mean), std::move(scale), data.subset(plan.cal), alpha, cfg.grid_size);
}

inline PredictionRegion predict_region(const KdeHpdPipeline& p, std::span<const double> x) {
    return p.predict(x);
}

// ---------------------------------------------------------------------------
// SECPR
// ---------------------------------------------------------------------------

class SecprModel {
public:
    SecprModel(MeanEstimator mean, ScoreVector scores, double alpha1, double alpha2)
        : mean_(std::move(mean)),
          scores_(std::move(scores)),
          alpha1_(alpha1),
          alpha2_(alpha2),
          offsets_(secpr_offsets(scores_, alpha1, alpha2)) {}

    const ScoreVector& scores() const { return scores_; }
    const Interval& offsets() const { return offsets_; }
    double alpha1() const { return alpha1_; }
    double alpha2() const { return alpha2_; }

    PredictionRegion predict(std::span<const double> x) const {
        const double g = mean_.predict(x);
        return PredictionRegion({{g + offsets_.lo, g + offsets_.hi}});
    }

private:
    MeanEstimator mean_;
    ScoreVector scores_;
    double alpha1_;
    double alpha2_;
    Interval offsets_;
};

inline SecprModel calibrate_secpr(MeanEstimator mean, const Dataset& cal, double alpha1, double alpha2) {
    if (alpha1 < 0.0 || alpha2 < 0.0 || alpha1 + alpha2 >= 1.0) throw Error("invalid tail budgets");
    std::vector<double> v(cal.size());
    for (std::size_t i = 0; i < cal.size(); ++i) v[i] = cal.y(i) - mean.predict(cal.row(i));
    return SecprModel(std::move(mean), ScoreVector(std::move(v)), alpha1, alpha2);
}

inline SecprModel fit_secpr(const Dataset& data, const SplitPlan& plan, double alpha1, double alpha2,
                            const MeanConfig& mean_cfg = {}) {
    plan.validate(data.size());
    if (plan.train1.empty() || plan.cal.empty()) throw Error("training and calibration folds must be nonempty");
    return calibrate_secpr(fit_mean(data.subset(plan.train1), mean_cfg), data.subset(plan.cal), alpha1, alpha2);
}

// ---------------------------------------------------------------------------
// CQR
// ---------------------------------------------------------------------------

using PointFunction = std::function<double(std::span<const double>)>;

class CqrModel {
public:
    CqrModel(PointFunction low, PointFunction high, double correction)
        : low_(std::move(low)), high_(std::move(high)), correction_(correction) {}

    double correction() const { return correction_; }

    PredictionRegion predict(std::span<const double> x) const {
        double lo = low_(x) - correction_;
        double hi = high_(x) + correction_;
        // A negative correction can cross thin bands; an empty set is the
        // faithful result there.
        if (lo > hi) return PredictionRegion();
        return PredictionRegion({{lo, hi}});
    }

private:
    PointFunction low_;
    PointFunction high_;
    double correction_;
};

inline CqrModel calibrate_cqr(PointFunction low, PointFunction high, const Dataset& cal, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0,1)");
    std::vector<double> v(cal.size());
    for (std::size_t i = 0; i < cal.size(); ++i) {
        v[i] = std::max(low(cal.row(i)) - cal.y(i), cal.y(i) - high(cal.row(i)));
    }
    const double q = conformal_q(ScoreVector(std::move(v)), 1.0 - alpha);
    return CqrModel(std::move(low), std::move(high), q);
}

struct CqrConfig {
    QuantileConfig quantile;
    /// Quantile levels of the band; NaN means (alpha/2, 1 - alpha/2).
    double low_level = std::numeric_limits<double>::quiet_NaN();
    double high_level = std::numeric_limits<double>::quiet_NaN();
};

inline CqrModel fit_cqr(const Dataset& data, const SplitPlan& plan, double alpha, const CqrConfig& cfg = {}) {
    plan.validate(data.size());
    if (plan.train1.empty() || plan.cal.empty()) throw Error("training and calibration folds must be nonempty");
    const double lo = std::isnan(cfg.low_level) ? alpha / 2.0 : cfg.low_level;
    const double hi = std::isnan(cfg.high_level) ? 1.0 - alpha / 2.0 : cfg.high_level;
    auto q = std::make_shared<QuantileEstimator>(fit_quantiles(data.subset(plan.train1), {lo, hi}, cfg.quantile));
    PointFunction low = [q](std::span<const double> x) { return q->predict_all(x)[0]; };
    PointFunction high = [q](std::span<const double> x) { return q->predict_all(x)[1]; };
    return calibrate_cqr(std::move(low), std::move(high), data.subset(plan.cal), alpha);
}

// ---------------------------------------------------------------------------
// DCP
// ---------------------------------------------------------------------------

/// Piecewise-linear conditional CDF through a monotonized quantile ladder,
/// extended by one average ladder step on each side to reach 0 and 1.
class LadderCdf {
public:
    LadderCdf(std::span<const double> levels, std::span<const double> quantiles) {
        if (levels.size() != quantiles.size() || levels.size() < 2) throw Error("quantile ladder needs >= 2 levels");
        std::vector<double> q(quantiles.begin(), quantiles.end());
        for (std::size_t i = 1; i < q.size(); ++i) q[i] = std::max(q[i], q[i - 1]);
        const double step = (q.back() - q.front()) / static_cast<double>(q.size() - 1);
        const double lo_span = q[1] > q[0] ? q[1] - q[0] : step;
        const double hi_span = q[q.size() - 1] > q[q.size() - 2] ? q[q.size() - 1] - q[q.size() - 2] : step;
        xs_.push_back(q.front() - lo_span);
        ts_.push_back(0.0);
        for (std::size_t i = 0; i < q.size(); ++i) {
            xs_.push_back(q[i]);
            ts_.push_back(levels[i]);
        }
        xs_.push_back(q.back() + hi_span);
        ts_.push_back(1.0);
    }

    double cdf(double y) const {
        if (y < xs_.front()) return 0.0;
        if (y >= xs_.back()) return 1.0;
        const auto it = std::upper_bound(xs_.begin(), xs_.end(), y);
        const auto j = static_cast<std::size_t>(std::distance(xs_.begin(), it)) - 1;
        return ts_[j] + (ts_[j + 1] - ts_[j]) * (y - xs_[j]) / (xs_[j + 1] - xs_[j]);
    }

    /// inf { y : F(y) >= tau }.
    double quantile(double tau) const {
        if (tau <= 0.0) return -kInf;
        if (tau > 1.0) return kInf;
        const auto it = std::lower_bound(ts_.begin(), ts_.end(), tau);
        const auto j = static_cast<std::size_t>(std::distance(ts_.begin(), it));
        return lerp_at(j, tau);
    }

    /// sup { y : F(y) <= u }.
    double upper_inverse(double u) const {
        if (u >= 1.0) return kInf;
        if (u < 0.0) return -kInf;
        const auto it = std::upper_bound(ts_.begin(), ts_.end(), u);
        const auto j = static_cast<std::size_t>(std::distance(ts_.begin(), it));
        return lerp_at(j, u);
    }

    /// Support of F: the anchored ends of the ladder.
    double support_lo() const { return xs_.front(); }
    double support_hi() const { return xs_.back(); }

private:
    // Point on segment (j-1, j) at level t.
    double lerp_at(std::size_t j, double t) const {
        if (j == 0) return xs_.front();
        return xs_[j - 1] + (t - ts_[j - 1]) / (ts_[j] - ts_[j - 1]) * (xs_[j] - xs_[j - 1]);
    }

    std::vector<double> xs_;
    std::vector<double> ts_;
};

/// argmin over z in {0, step, ..., alpha} of Q(z + 1 - alpha) - Q(z); the
/// first minimizer wins ties.
inline double dcp_optimal_lower(const std::function<double(double)>& quantile, double alpha, double step = 0.005) {
    const auto count = static_cast<long long>(std::floor(alpha / step + 1e-9));
    double best_z = 0.0;
    double best_len = kInf;
    for (long long i = 0; i <= count; ++i) {
        const double z = static_cast<double>(i) * step;
        const double len = quantile(z + 1.0 - alpha) - quantile(z);
        if (len < best_len) {
            best_len = len;
            best_z = z;
        }
    }
    return best_z;
}

/// Default DCP ladder levels 0.01, 0.02, ..., 0.99.
inline std::vector<double> dcp_ladder_levels() {
    std::vector<double> v;
    for (int i = 1; i <= 99; ++i) v.push_back(static_cast<double>(i) / 100.0);
    return v;
}

using LadderFunction = std::function<std::vector<double>(std::span<const double>)>;

class DcpModel {
public:
    DcpModel(std::vector<double> levels, LadderFunction ladder, double alpha, double threshold, double grid_step)
        : levels_(std::move(levels)), ladder_(std::move(ladder)), alpha_(alpha), threshold_(threshold), step_(grid_step) {}

    double threshold() const { return threshold_; }

    LadderCdf conditional_cdf(std::span<const double> x) const { return LadderCdf(levels_, ladder_(x)); }

    double optimal_lower(const LadderCdf& f) const {
        return dcp_optimal_lower([&](double t) { return f.quantile(t); }, alpha_, step_);
    }

    /// Conformity score |F(y|x) - b(x) - (1 - alpha)/2|.
    double score(std::span<const double> x, double y) const {
        const LadderCdf f = conditional_cdf(x);
        return std::abs(f.cdf(y) - optimal_lower(f) - 0.5 * (1.0 - alpha_));
    }

    PredictionRegion predict(std::span<const double> x) const {
        if (threshold_ == kInf) return PredictionRegion({{-kInf, kInf}});
        const LadderCdf f = conditional_cdf(x);
        const double centre = optimal_lower(f) + 0.5 * (1.0 - alpha_);
        // Implied levels outside [0, 1] are cut back to the support of F
        // rather than opening the interval to infinity.
        const double lo = centre - threshold_ <= 0.0 ? f.support_lo() : f.quantile(centre - threshold_);
        const double hi = centre + threshold_ >= 1.0 ? f.support_hi() : f.upper_inverse(centre + threshold_);
        if (lo > hi) return PredictionRegion();
        return PredictionRegion({{lo, hi}});
    }

private:
    std::vector<double> levels_;
    LadderFunction ladder_;
    double alpha_;
    double threshold_;
    double step_;
};

inline DcpModel calibrate_dcp(std::vector<double> levels, LadderFunction ladder, const Dataset& cal, double alpha,
                              double grid_step = 0.005) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0,1)");
    DcpModel probe(levels, ladder, alpha, 0.0, grid_step);
    std::vector<double> v(cal.size());
    for (std::size_t i = 0; i < cal.size(); ++i) v[i] = probe.score(cal.row(i), cal.y(i));
    const double t = conformal_q(ScoreVector(std::move(v)), 1.0 - alpha);
    return DcpModel(std::move(levels), std::move(ladder), alpha, t, grid_step);
}

struct DcpConfig {
    QuantileConfig quantile{QuantileKind::linear_quantile};  // features default to [x, x^2]
    double grid_step = 0.005;
};

inline DcpModel fit_dcp(const Dataset& data, const SplitPlan& plan, double alpha, const DcpConfig& cfg = {}) {
    plan.validate(data.size());
    if (plan.train1.empty() || plan.cal.empty()) throw Error("training and calibration folds must be nonempty");
    auto levels = dcp_ladder_levels();
    auto q = std::make_shared<QuantileEstimator>(fit_quantiles(data.subset(plan.train1), levels, cfg.quantile));
    LadderFunction ladder = [q](std::span<const double> x) { return q->predict_all(x); };
    return calibrate_dcp(std::move(levels), std::move(ladder), data.subset(plan.cal), alpha, cfg.grid_step);
}

// ---------------------------------------------------------------------------
// Normal parametric prediction interval
// ---------------------------------------------------------------------------

class ParametricNormalModel {
public:
    ParametricNormalModel(LinearFit fit, double alpha)
        : fit_(std::move(fit)),
          z_(boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2.0)) {}

    double residual_sd() const { return std::sqrt(fit_.residual_variance); }
    double z() const { return z_; }

    PredictionRegion predict(std::span<const double> x) const {
        const double g = fit_.predict(x);
        const double half = z_ * residual_sd() * std::sqrt(1.0 + fit_.leverage(x));
        return PredictionRegion({{g - half, g + half}});
    }

private:
    LinearFit fit_;
    double z_;
};

inline ParametricNormalModel fit_parametric_normal(const Dataset& data, double alpha,
                                                   const FeatureMap& features = FeatureMap::linear()) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0,1)");
    return ParametricNormalModel(fit_ols(data, data.y_data(), features), alpha);
}

}  // namespace kdehpd

#endif  // KDEHPD_CONFORMAL_HPP
