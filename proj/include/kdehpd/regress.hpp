#ifndef KDEHPD_REGRESS_HPP
#define KDEHPD_REGRESS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kdehpd/core.hpp"

namespace kdehpd {

// ---------------------------------------------------------------------------
// Feature maps
// ---------------------------------------------------------------------------

enum class Transform { raw, square };

/// Ordered list of per-column transforms; an intercept column is always
/// prepended by the linear fitters.
struct FeatureMap {
    std::vector<Transform> transforms{Transform::raw};

    static FeatureMap linear() { return {}; }
    static FeatureMap quadratic() { return {{Transform::raw, Transform::square}}; }

    std::size_t width(std::size_t dim) const { return 1 + transforms.size() * dim; }

    void apply(std::span<const double> x, double* out) const {
        *out++ = 1.0;
        for (Transform t : transforms) {
            for (double v : x) *out++ = (t == Transform::raw) ? v : v * v;
        }
    }
};

namespace detail {

inline void check_dim(std::span<const double> x, std::size_t dim) {
    if (x.size() != dim) throw Error("covariate dimension mismatch");
}

inline Eigen::MatrixXd design(const Dataset& d, const FeatureMap& fm) {
    const std::size_t p = fm.width(d.dim());
    Eigen::MatrixXd a(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(p));
    std::vector<double> buf(p);
    for (std::size_t i = 0; i < d.size(); ++i) {
        fm.apply(d.row(i), buf.data());
        for (std::size_t j = 0; j < p; ++j) {
            a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = buf[j];
        }
    }
    return a;
}

}  // namespace detail

/// Ordinary least squares over a feature map, with the pieces needed for
/// prediction-interval leverage.
struct LinearFit {
    FeatureMap features;
    std::size_t dim = 0;
    std::vector<double> coef;
    Eigen::MatrixXd gram_inverse;  // (A^T A)^{-1}
    double residual_variance = 0.0;
    std::size_t n = 0;

    double predict(std::span<const double> x) const {
        detail::check_dim(x, dim);
        std::vector<double> buf(coef.size());
        features.apply(x, buf.data());
        return std::inner_product(buf.begin(), buf.end(), coef.begin(), 0.0);
    }

    /// x0^T (A^T A)^{-1} x0 for the feature vector of x.
    double leverage(std::span<const double> x) const {
        detail::check_dim(x, dim);
        Eigen::VectorXd f(static_cast<Eigen::Index>(coef.size()));
        features.apply(x, f.data());
        return f.dot(gram_inverse * f);
    }
};

inline LinearFit fit_ols(const Dataset& d, std::span<const double> target, const FeatureMap& fm) {
    const std::size_t p = fm.width(d.dim());
    if (d.size() < 2 || d.size() < p) throw Error("too few rows for least squares");
    const Eigen::MatrixXd a = detail::design(d, fm);
    const Eigen::Map<const Eigen::VectorXd> b(target.data(), static_cast<Eigen::Index>(target.size()));
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-10);
    if (qr.rank() < static_cast<Eigen::Index>(p)) throw Error("singular design matrix");
    const Eigen::VectorXd beta = qr.solve(b);

    LinearFit fit;
    fit.features = fm;
    fit.dim = d.dim();
    fit.coef.assign(beta.data(), beta.data() + beta.size());
    fit.gram_inverse = (a.transpose() * a).ldlt().solve(
        Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)));
    const Eigen::VectorXd r = b - a * beta;
    fit.n = d.size();
    fit.residual_variance = d.size() > p ? r.squaredNorm() / static_cast<double>(d.size() - p) : 0.0;
    return fit;
}

/// Brute-force k-nearest-neighbour lookup (Euclidean, ties broken by row
/// index so results are deterministic).
class NeighborIndex {
public:
    NeighborIndex() = default;
    explicit NeighborIndex(Dataset data) : data_(std::move(data)) {}

    const Dataset& data() const { return data_; }

    std::vector<std::size_t> nearest(std::span<const double> x, std::size_t k) const {
        detail::check_dim(x, data_.dim());
        k = std::min(k, data_.size());
        std::vector<std::pair<double, std::size_t>> dist(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) {
            auto r = data_.row(i);
            double s = 0.0;
            for (std::size_t j = 0; j < r.size(); ++j) s += (r[j] - x[j]) * (r[j] - x[j]);
            dist[i] = {s, i};
        }
        std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
        std::vector<std::size_t> out(k);
        for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Responses of the k nearest neighbours, sorted ascending.
    std::vector<double> neighbor_responses(std::span<const double> x, std::size_t k) const {
        std::vector<double> v;
        for (std::size_t i : nearest(x, k)) v.push_back(data_.y(i));
        std::sort(v.begin(), v.end());
        return v;
    }

private:
    Dataset data_;
};

// ---------------------------------------------------------------------------
// Conditional mean
// ---------------------------------------------------------------------------

enum class MeanKind { ols_linear, ols_features, knn_mean, constant };

struct MeanConfig {
    MeanKind kind = MeanKind::ols_linear;
    FeatureMap features;     // used by ols_features
    std::size_t k = 50;      // used by knn_mean
};

class MeanEstimator {
public:
    MeanKind kind() const { return kind_; }
    std::size_t dim() const { return dim_; }
    const LinearFit& linear() const { return linear_; }

    double predict(std::span<const double> x) const {
        switch (kind_) {
            case MeanKind::ols_linear:
            case MeanKind::ols_features:
                return linear_.predict(x);
            case MeanKind::knn_mean: {
                const auto v = knn_.neighbor_responses(x, k_);
                return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            }
            case MeanKind::constant:
                detail::check_dim(x, dim_);
                return constant_;
        }
        return constant_;
    }

    /// A fixed function, used to force identity estimators in tests and in
    /// homoscedastic CSV workflows with a known offset.
    static MeanEstimator constant_value(double c, std::size_t dim) {
        MeanEstimator m;
        m.kind_ = MeanKind::constant;
        m.dim_ = dim;
        m.constant_ = c;
        return m;
    }

    friend MeanEstimator fit_mean(const Dataset& train, const MeanConfig& cfg);

private:
    MeanKind kind_ = MeanKind::constant;
    std::size_t dim_ = 1;
    LinearFit linear_;
    NeighborIndex knn_;
    std::size_t k_ = 1;
    double constant_ = 0.0;
};

inline MeanEstimator fit_mean(const Dataset& train, const MeanConfig& cfg) {
    if (train.size() < 2) throw Error("too few rows to fit the mean model");
    MeanEstimator m;
    m.kind_ = cfg.kind;
    m.dim_ = train.dim();
    switch (cfg.kind) {
        case MeanKind::ols_linear:
            m.linear_ = fit_ols(train, train.y_data(), FeatureMap::linear());
            break;
        case MeanKind::ols_features:
            m.linear_ = fit_ols(train, train.y_data(), cfg.features);
            break;
        case MeanKind::knn_mean:
            if (cfg.k == 0) throw Error("knn needs k >= 1");
            m.knn_ = NeighborIndex(train);
            m.k_ = cfg.k;
            break;
        case MeanKind::constant: {
            const auto& y = train.y_data();
            m.constant_ = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
            break;
        }
    }
    return m;
}

inline double predict_mean(const MeanEstimator& g, std::span<const double> x) { return g.predict(x); }

// ---------------------------------------------------------------------------
// Conditional scale
// ---------------------------------------------------------------------------

enum class ScaleKind { constant_one, ols_absres, knn_quantile_absres, binned_quantile_absres };

struct ScaleConfig {
    ScaleKind kind = ScaleKind::constant_one;
    double floor = 1e-6;
    double level = 0.9;       // quantile kinds
    std::size_t k = 50;       // knn kind
    std::size_t bins = 10;    // binned kind
    std::size_t column = 0;   // binned kind: covariate used for binning
    FeatureMap features;      // ols kind
};

class ScaleEstimator {
public:
    ScaleKind kind() const { return kind_; }
    double floor() const { return floor_; }

    /// Unclamped model output.
    double raw(std::span<const double> x) const {
        detail::check_dim(x, dim_);
        switch (kind_) {
            case ScaleKind::constant_one:
                return 1.0;
            case ScaleKind::ols_absres:
                return linear_.predict(x);
            case ScaleKind::knn_quantile_absres:
                return detail::sorted_quantile(knn_.neighbor_responses(x, k_), level_);
            case ScaleKind::binned_quantile_absres: {
                // Values beyond the outer edges fall into the first/last bin.
                const double v = x[column_];
                const auto it = std::upper_bound(edges_.begin(), edges_.end(), v);
                const auto b = static_cast<std::size_t>(std::distance(edges_.begin(), it));
                return bin_values_[std::min(b, bin_values_.size() - 1)];
            }
        }
        return 1.0;
    }

    double predict(std::span<const double> x) const { return std::max(floor_, raw(x)); }

    static ScaleEstimator unit(std::size_t dim) {
        ScaleEstimator s;
        s.dim_ = dim;
        return s;
    }

    friend ScaleEstimator fit_scale(const Dataset&, const MeanEstimator&, const ScaleConfig&);

private:
    ScaleKind kind_ = ScaleKind::constant_one;
    std::size_t dim_ = 1;
    double floor_ = 1e-6;
    double level_ = 0.9;
    LinearFit linear_;
    NeighborIndex knn_;
    std::size_t k_ = 1;
    std::size_t column_ = 0;
    std::vector<double> edges_;       // interior bin edges, ascending
    std::vector<double> bin_values_;  // edges_.size() + 1 values
};

/// Regresses |Y - g(X)| on X over the second training fold.
inline ScaleEstimator fit_scale(const Dataset& train2, const MeanEstimator& g, const ScaleConfig& cfg) {
    if (!(cfg.floor > 0.0)) throw Error("scale floor must be positive");
    ScaleEstimator s;
    s.kind_ = cfg.kind;
    s.dim_ = g.dim();
    s.floor_ = cfg.floor;
    s.level_ = cfg.level;
    if (cfg.kind == ScaleKind::constant_one) return s;

    if (train2.size() < 2) throw Error("too few rows to fit the scale model");
    if (train2.dim() != g.dim()) throw Error("covariate dimension mismatch");
    std::vector<double> absres(train2.size());
    for (std::size_t i = 0; i < train2.size(); ++i) {
        absres[i] = std::abs(train2.y(i) - g.predict(train2.row(i)));
    }
    const Dataset target = train2.with_response(absres);

    switch (cfg.kind) {
        case ScaleKind::constant_one:
            break;
        case ScaleKind::ols_absres:
            s.linear_ = fit_ols(target, absres, cfg.features);
            break;
        case ScaleKind::knn_quantile_absres:
            if (cfg.k == 0) throw Error("knn needs k >= 1");
            s.knn_ = NeighborIndex(target);
            s.k_ = cfg.k;
            break;
        case ScaleKind::binned_quantile_absres: {
            if (cfg.column >= target.dim()) throw Error("binning column out of range");
            if (cfg.bins == 0) throw Error("need at least one bin");
            std::vector<std::size_t> order(target.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return target.row(a)[cfg.column] < target.row(b)[cfg.column];
            });
            const std::size_t nb = std::min(cfg.bins, target.size());
            for (std::size_t b = 0; b < nb; ++b) {
                const std::size_t lo = b * target.size() / nb;
                const std::size_t hi = (b + 1) * target.size() / nb;
                std::vector<double> v;
                for (std::size_t i = lo; i < hi; ++i) v.push_back(absres[order[i]]);
                std::sort(v.begin(), v.end());
                s.bin_values_.push_back(detail::sorted_quantile(v, cfg.level));
                if (b + 1 < nb) {
                    const double left = target.row(order[hi - 1])[cfg.column];
                    const double right = target.row(order[hi])[cfg.column];
                    s.edges_.push_back(0.5 * (left + right));
                }
            }
            s.column_ = cfg.column;
            break;
        }
    }
    return s;
}

inline double predict_scale(const ScaleEstimator& s, std::span<const double> x) { return s.predict(x); }

// ---------------------------------------------------------------------------
// Conditional quantiles
// ---------------------------------------------------------------------------

enum class QuantileKind { knn_quantile, linear_quantile };

struct QuantileConfig {
    QuantileKind kind = QuantileKind::knn_quantile;
    std::size_t k = 50;                           // knn
    FeatureMap features = FeatureMap::quadratic();  // linear
    std::size_t iterations = 1000;                // linear: subgradient steps
    double step_scale = 0.1;                      // linear: c in c / sqrt(t), in units of residual scale
};

namespace detail {

inline double pinball(double r, double p) { return r >= 0 ? p * r : (p - 1.0) * r; }

/// Linear quantile regression by normalized subgradient descent on the
/// pinball loss, in standardized feature coordinates. Starts from OLS with
/// the intercept moved to the p-quantile of the OLS residuals and returns
/// the best iterate seen.
inline std::vector<double> fit_pinball(const Eigen::MatrixXd& a, std::span<const double> y,
                                       const std::vector<double>& ols_coef, double p,
                                       std::size_t iterations, double step_scale) {
    const Eigen::Index n = a.rows();
    const Eigen::Index w = a.cols();
    // Standardize non-intercept columns.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(w);
    Eigen::VectorXd sd = Eigen::VectorXd::Ones(w);
    for (Eigen::Index j = 1; j < w; ++j) {
        mean(j) = a.col(j).mean();
        const double var = (a.col(j).array() - mean(j)).square().mean();
        sd(j) = var > 0 ? std::sqrt(var) : 1.0;
    }
    Eigen::MatrixXd z(n, w);
    z.col(0).setOnes();
    for (Eigen::Index j = 1; j < w; ++j) z.col(j) = (a.col(j).array() - mean(j)) / sd(j);

    // OLS coefficients in standardized coordinates.
    Eigen::VectorXd theta(w);
    theta(0) = ols_coef[0];
    for (Eigen::Index j = 1; j < w; ++j) {
        theta(j) = ols_coef[static_cast<std::size_t>(j)] * sd(j);
        theta(0) += ols_coef[static_cast<std::size_t>(j)] * mean(j);
    }
    const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
    Eigen::VectorXd r = yv - z * theta;
    {
        std::vector<double> rs(r.data(), r.data() + n);
        std::sort(rs.begin(), rs.end());
        const double shift = sorted_quantile(rs, p);
        theta(0) += shift;
        r.array() -= shift;
    }
    const double scale = std::max(r.cwiseAbs().mean(), 1e-12);

    Eigen::ArrayXd neg(n);
    Eigen::VectorXd g(w);
    // Loss at theta; leaves the subgradient in g.
    auto evaluate = [&](const Eigen::VectorXd& th) {
        r.noalias() = yv - z * th;
        neg = (r.array() < 0.0).cast<double>();
        g.noalias() = z.transpose() * (neg - p).matrix();
        return (r.array() * (p - neg)).sum() / static_cast<double>(n);
    };
    Eigen::VectorXd best = theta;
    double best_loss = evaluate(theta);
    for (std::size_t t = 1; t <= iterations; ++t) {
        const double gn = g.norm();
        if (gn == 0.0) break;
        theta -= (step_scale * scale / std::sqrt(static_cast<double>(t)) / gn) * g;
        const double l = evaluate(theta);
        if (l < best_loss) {
            best_loss = l;
            best = theta;
        }
    }
    // Back to raw coordinates.
    std::vector<double> coef(static_cast<std::size_t>(w));
    coef[0] = best(0);
    for (Eigen::Index j = 1; j < w; ++j) {
        coef[static_cast<std::size_t>(j)] = best(j) / sd(j);
        coef[0] -= best(j) * mean(j) / sd(j);
    }
    return coef;
}

}  // namespace detail

/// Estimator of one or more conditional quantile levels. Multi-level
/// (ladder) predictions are monotonized by a running maximum.
class QuantileEstimator {
public:
    const std::vector<double>& levels() const { return levels_; }
    std::size_t dim() const { return dim_; }

    std::vector<double> predict_all(std::span<const double> x) const {
        detail::check_dim(x, dim_);
        std::vector<double> out(levels_.size());
        if (kind_ == QuantileKind::knn_quantile) {
            const auto v = knn_.neighbor_responses(x, k_);
            for (std::size_t i = 0; i < levels_.size(); ++i) out[i] = detail::sorted_quantile(v, levels_[i]);
        } else {
            std::vector<double> f(features_.width(dim_));
            features_.apply(x, f.data());
            for (std::size_t i = 0; i < levels_.size(); ++i) {
                out[i] = std::inner_product(f.begin(), f.end(), coefs_[i].begin(), 0.0);
            }
        }
        for (std::size_t i = 1; i < out.size(); ++i) out[i] = std::max(out[i], out[i - 1]);
        return out;
    }

    /// Single-level estimators only.
    double predict(std::span<const double> x) const {
        if (levels_.size() != 1) throw Error("predict() requires a single-level quantile estimator");
        return predict_all(x).front();
    }

    friend QuantileEstimator fit_quantiles(const Dataset&, std::vector<double>, const QuantileConfig&);

private:
    QuantileKind kind_ = QuantileKind::knn_quantile;
    std::size_t dim_ = 1;
    std::vector<double> levels_;
    NeighborIndex knn_;
    std::size_t k_ = 1;
    FeatureMap features_;
    std::vector<std::vector<double>> coefs_;
};

/// Fits conditional quantiles at every level in `levels` (ascending).
inline QuantileEstimator fit_quantiles(const Dataset& train, std::vector<double> levels,
                                       const QuantileConfig& cfg) {
    if (levels.empty()) throw Error("no quantile levels requested");
    for (double p : levels) {
        if (!(p > 0.0 && p < 1.0)) throw Error("quantile level must lie in (0,1)");
    }
    if (!std::is_sorted(levels.begin(), levels.end())) throw Error("quantile levels must be ascending");
    QuantileEstimator q;
    q.kind_ = cfg.kind;
    q.dim_ = train.dim();
    q.levels_ = std::move(levels);
    if (cfg.kind == QuantileKind::knn_quantile) {
        if (cfg.k == 0) throw Error("knn needs k >= 1");
        if (train.size() < std::max<std::size_t>(cfg.k, 10)) throw Error("too few rows for knn quantile");
        q.knn_ = NeighborIndex(train);
        q.k_ = cfg.k;
        return q;
    }
    const LinearFit ols = fit_ols(train, train.y_data(), cfg.features);
    const Eigen::MatrixXd a = detail::design(train, cfg.features);
    q.features_ = cfg.features;
    for (double p : q.levels_) {
        q.coefs_.push_back(detail::fit_pinball(a, train.y_data(), ols.coef, p, cfg.iterations, cfg.step_scale));
    }
    return q;
}

inline QuantileEstimator fit_quantile(const Dataset& train, double level, const QuantileConfig& cfg) {
    return fit_quantiles(train, {level}, cfg);
}

}  // namespace kdehpd

#endif  // KDEHPD_REGRESS_HPP
