#ifndef KDEHPD_SIM_HPP
#define KDEHPD_SIM_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>

#include "kdehpd/conformal.hpp"
#include "kdehpd/core.hpp"
#include "kdehpd/rng.hpp"

namespace kdehpd {

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

enum class ScenarioTag { unimodal_symmetric, unimodal_skewed, bimodal, heteroscedastic, bowtie };

inline constexpr ScenarioTag kAllScenarios[] = {ScenarioTag::unimodal_symmetric, ScenarioTag::unimodal_skewed,
                                                 ScenarioTag::bimodal, ScenarioTag::heteroscedastic,
                                                 ScenarioTag::bowtie};

inline std::string_view to_string(ScenarioTag t) {
    switch (t) {
        case ScenarioTag::unimodal_symmetric: return "unimodal-symmetric";
        case ScenarioTag::unimodal_skewed: return "unimodal-skewed";
        case ScenarioTag::bimodal: return "bimodal";
        case ScenarioTag::heteroscedastic: return "heteroscedastic";
        case ScenarioTag::bowtie: return "bowtie";
    }
    return "";
}

inline std::optional<ScenarioTag> parse_scenario(std::string_view s) {
    for (ScenarioTag t : kAllScenarios) {
        if (to_string(t) == s) return t;
    }
    return std::nullopt;
}

inline std::string scenario_tag_list() {
    std::string out;
    for (ScenarioTag t : kAllScenarios) {
        if (!out.empty()) out += ", ";
        out += to_string(t);
    }
    return out;
}

/// One simulation setting. `n_train` rows feed model training (split in
/// half between the mean and scale folds when a scale model is used),
/// `n_cal` rows calibrate, and `n_test` fresh rows are scored.
struct Scenario {
    ScenarioTag tag = ScenarioTag::unimodal_symmetric;
    std::size_t n_train = 500;
    std::size_t n_cal = 500;
    std::size_t n_test = 50;
    double alpha = 0.1;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_train < 1 || n_cal < 1 || n_test < 1) throw Error("scenario counts must be at least 1");
        if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0,1)");
    }

    /// The bowtie setting is the one where the noise scale varies with x.
    bool uses_scale_model() const { return tag == ScenarioTag::bowtie; }
};

inline constexpr double kCovariateLo = -5.0;
inline constexpr double kCovariateHi = 5.0;

inline double true_mean(double x) { return 5.0 + 2.0 * x; }

/// Draws the additive noise term for covariate value x.
inline double draw_noise(ScenarioTag tag, double x, CounterRng& rng) {
    switch (tag) {
        case ScenarioTag::unimodal_symmetric:
            return rng.normal();
        case ScenarioTag::unimodal_skewed:
            return rng.gamma(7.5, 1.0);
        case ScenarioTag::bimodal: {
            const double centre = rng.bernoulli(0.5) ? -6.0 : 6.0;
            return rng.normal(centre, 1.0);
        }
        case ScenarioTag::heteroscedastic: {
            const double a = 1.0 + 2.0 * std::abs(x);
            return rng.gamma(a, a);
        }
        case ScenarioTag::bowtie:
            return std::abs(x) * rng.normal();
    }
    return 0.0;
}

/// `count` rows of the scenario from one RNG stream.
inline Dataset draw_rows(ScenarioTag tag, std::size_t count, CounterRng& rng) {
    std::vector<double> x(count);
    std::vector<double> y(count);
    for (std::size_t i = 0; i < count; ++i) {
        x[i] = rng.uniform(kCovariateLo, kCovariateHi);
        y[i] = true_mean(x[i]) + draw_noise(tag, x[i], rng);
    }
    return Dataset(std::move(x), 1, std::move(y));
}

struct SimulatedData {
    Dataset observed;  // n_train + n_cal rows, training rows first
    Dataset test;
};

/// Deterministic given (scenario, seed).
inline SimulatedData generate(const Scenario& scn) {
    scn.validate();
    CounterRng observed_rng(scn.seed, 0);
    CounterRng test_rng(scn.seed, 1);
    return {draw_rows(scn.tag, scn.n_train + scn.n_cal, observed_rng), draw_rows(scn.tag, scn.n_test, test_rng)};
}

// ---------------------------------------------------------------------------
// Analytic oracle
// ---------------------------------------------------------------------------

/// Law of the additive noise at a fixed covariate value.
struct NoiseLaw {
    std::function<double(double)> pdf;
    std::function<double(double)> cdf;
    std::vector<double> modes;      // ascending
    std::vector<double> antimodes;  // density minima between consecutive modes
    double support_lo = -kInf;
    double support_hi = kInf;
    std::optional<double> point_mass;  // degenerate law
};

inline NoiseLaw noise_law(ScenarioTag tag, double x) {
    using boost::math::gamma_distribution;
    using boost::math::normal_distribution;
    NoiseLaw law;
    auto normal_law = [&law](double sd) {
        normal_distribution<double> d(0.0, sd);
        law.pdf = [d](double z) { return boost::math::pdf(d, z); };
        law.cdf = [d](double z) { return boost::math::cdf(d, z); };
        law.modes = {0.0};
    };
    auto gamma_law = [&law](double shape, double rate) {
        gamma_distribution<double> d(shape, 1.0 / rate);
        law.pdf = [d, shape, rate](double z) {
            if (z < 0.0) return 0.0;
            // Boost reports 0 at the support edge; the exponential case has density `rate` there.
            if (z == 0.0) return shape == 1.0 ? rate : (shape < 1.0 ? kInf : 0.0);
            return boost::math::pdf(d, z);
        };
        law.cdf = [d](double z) { return z <= 0.0 ? 0.0 : boost::math::cdf(d, z); };
        law.modes = {(shape - 1.0) / rate};
        law.support_lo = 0.0;
    };
    switch (tag) {
        case ScenarioTag::unimodal_symmetric:
            normal_law(1.0);
            break;
        case ScenarioTag::unimodal_skewed:
            gamma_law(7.5, 1.0);
            break;
        case ScenarioTag::bimodal: {
            normal_distribution<double> d(0.0, 1.0);
            law.pdf = [d](double z) { return 0.5 * (boost::math::pdf(d, z + 6.0) + boost::math::pdf(d, z - 6.0)); };
            law.cdf = [d](double z) { return 0.5 * (boost::math::cdf(d, z + 6.0) + boost::math::cdf(d, z - 6.0)); };
            law.modes = {-6.0, 6.0};
            law.antimodes = {0.0};
            break;
        }
        case ScenarioTag::heteroscedastic: {
            const double a = 1.0 + 2.0 * std::abs(x);
            gamma_law(a, a);
            break;
        }
        case ScenarioTag::bowtie:
            if (x == 0.0) law.point_mass = 0.0;
            else normal_law(std::abs(x));
            break;
    }
    return law;
}

namespace detail {

// Boundary of {pdf > lambda} between `inside` (pdf > lambda) and `outside`.
inline double level_crossing(const NoiseLaw& law, double inside, double outside, double lambda) {
    for (int it = 0; it < 200 && std::abs(outside - inside) > 1e-13 * std::max(1.0, std::abs(inside)); ++it) {
        const double mid = 0.5 * (inside + outside);
        if (law.pdf(mid) > lambda) inside = mid;
        else outside = mid;
    }
    return 0.5 * (inside + outside);
}

inline std::vector<Interval> superlevel_set(const NoiseLaw& law, double lambda) {
    std::vector<Interval> out;
    for (std::size_t i = 0; i < law.modes.size(); ++i) {
        const double m = law.modes[i];
        if (!(law.pdf(m) > lambda)) continue;
        const double a = i == 0 ? law.support_lo : law.antimodes[i - 1];
        const double b = i + 1 == law.modes.size() ? law.support_hi : law.antimodes[i];
        auto edge = [&](double bound, double dir) {
            if (std::isfinite(bound)) {
                if (bound == m || law.pdf(bound) > lambda) return bound;
                return level_crossing(law, m, bound, lambda);
            }
            double d = 1.0;
            while (law.pdf(m + dir * d) > lambda) d *= 2.0;
            return level_crossing(law, m, m + dir * d, lambda);
        };
        out.push_back({edge(a, -1.0), edge(b, 1.0)});
    }
    return coalesce(PredictionRegion(std::move(out))).intervals();
}

}  // namespace detail

/// Exact smallest (1 - alpha) set of a noise law: bisection on the density
/// cutoff with masses from the analytic CDF.
inline std::vector<Interval> law_hpd(const NoiseLaw& law, double alpha) {
    if (law.point_mass) return {{*law.point_mass, *law.point_mass}};
    double lo = 0.0;
    double hi = 0.0;
    for (double m : law.modes) hi = std::max(hi, law.pdf(m));
    auto mass = [&](double lambda) {
        double s = 0.0;
        for (const auto& iv : detail::superlevel_set(law, lambda)) s += law.cdf(iv.hi) - law.cdf(iv.lo);
        return s;
    };
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mass(mid) > 1.0 - alpha) lo = mid;
        else hi = mid;
    }
    return detail::superlevel_set(law, 0.5 * (lo + hi));
}

/// g(x) + HPD set of the noise at x.
inline PredictionRegion oracle_hpd(ScenarioTag tag, double alpha, double x) {
    std::vector<Interval> iv = law_hpd(noise_law(tag, x), alpha);
    for (auto& i : iv) {
        i.lo += true_mean(x);
        i.hi += true_mean(x);
    }
    return PredictionRegion(std::move(iv));
}

inline PredictionRegion oracle_hpd(const Scenario& scn, std::span<const double> x) {
    if (x.size() != 1) throw Error("scenario covariates are one-dimensional");
    return oracle_hpd(scn.tag, scn.alpha, x[0]);
}

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

enum class Method { kde_hpd, secpr, cqr, dcp, parametric, oracle };

inline constexpr Method kAllMethods[] = {Method::kde_hpd, Method::secpr, Method::cqr,
                                         Method::dcp,     Method::parametric, Method::oracle};

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::kde_hpd: return "kde-hpd";
        case Method::secpr: return "secpr";
        case Method::cqr: return "cqr";
        case Method::dcp: return "dcp";
        case Method::parametric: return "parametric";
        case Method::oracle: return "oracle";
    }
    return "";
}

inline std::optional<Method> parse_method(std::string_view s) {
    for (Method m : kAllMethods) {
        if (to_string(m) == s) return m;
    }
    return std::nullopt;
}

inline std::string method_tag_list() {
    std::string out;
    for (Method m : kAllMethods) {
        if (!out.empty()) out += ", ";
        out += to_string(m);
    }
    return out;
}

/// Estimator settings shared by the simulation engine and the CLI.
struct MethodOptions {
    std::size_t knn_k = 50;  // CQR band
    /// Neighbours of the scale model; 0 means round(sqrt(rows in its fold)).
    std::size_t scale_k = 0;
    double scale_level = 0.9;
    /// Unset: a scale model is used exactly when the scenario calls for it.
    std::optional<bool> scale_model;
    ScaleKind scale_kind = ScaleKind::knn_quantile_absres;
};

struct FittedMethod {
    std::function<PredictionRegion(std::span<const double>)> predict;
    std::size_t components = 1;  // score-space bands (KDE-HPD) or 1
    std::size_t warnings = 0;    // dropped KDE-HPD bands
};

/// Fits one method on `observed`, whose first n_train rows are training
/// rows and the remaining rows are the calibration fold.
inline FittedMethod fit_method(Method method, const Dataset& observed, std::size_t n_train, double alpha,
                               bool scale_model, const MethodOptions& opt,
                               std::optional<ScenarioTag> oracle_tag = std::nullopt) {
    if (n_train >= observed.size()) throw Error("no calibration rows");
    const std::size_t n_cal = observed.size() - n_train;
    const SplitPlan half = SplitPlan::from_counts(n_train, 0, n_cal);
    FittedMethod out;
    switch (method) {
        case Method::kde_hpd: {
            KdeHpdConfig cfg;
            SplitPlan plan = half;
            if (scale_model) {
                plan = SplitPlan::from_counts(n_train / 2, n_train - n_train / 2, n_cal);
                cfg.scale.kind = opt.scale_kind;
                const std::size_t fold = n_train - n_train / 2;
                cfg.scale.k = opt.scale_k ? opt.scale_k
                                          : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                                                         std::sqrt(static_cast<double>(fold)))));
                cfg.scale.level = opt.scale_level;
            }
            auto p = std::make_shared<KdeHpdPipeline>(fit_kde_hpd(observed, plan, alpha, cfg));
            out.predict = [p](std::span<const double> x) { return p->predict(x); };
            out.components = p->bands().size();
            out.warnings = p->dropped();
            break;
        }
        case Method::secpr: {
            auto m = std::make_shared<SecprModel>(fit_secpr(observed, half, alpha / 2.0, alpha / 2.0));
            out.predict = [m](std::span<const double> x) { return m->predict(x); };
            break;
        }
        case Method::cqr: {
            CqrConfig cfg;
            cfg.quantile.k = opt.knn_k;
            auto m = std::make_shared<CqrModel>(fit_cqr(observed, half, alpha, cfg));
            out.predict = [m](std::span<const double> x) { return m->predict(x); };
            break;
        }
        case Method::dcp: {
            auto m = std::make_shared<DcpModel>(fit_dcp(observed, half, alpha));
            out.predict = [m](std::span<const double> x) { return m->predict(x); };
            break;
        }
        case Method::parametric: {
            // Uses every observed row; no calibration fold is needed.
            auto m = std::make_shared<ParametricNormalModel>(fit_parametric_normal(observed, alpha));
            out.predict = [m](std::span<const double> x) { return m->predict(x); };
            break;
        }
        case Method::oracle: {
            if (!oracle_tag) throw Error("oracle method needs a simulation scenario");
            const ScenarioTag tag = *oracle_tag;
            out.predict = [tag, alpha](std::span<const double> x) {
                if (x.size() != 1) throw Error("scenario covariates are one-dimensional");
                return oracle_hpd(tag, alpha, x[0]);
            };
            out.components = tag == ScenarioTag::bimodal ? 2 : 1;
            break;
        }
    }
    return out;
}

inline FittedMethod fit_method(Method method, const Scenario& scn, const Dataset& observed,
                               const MethodOptions& opt = {}) {
    const bool scale = opt.scale_model.value_or(scn.uses_scale_model());
    return fit_method(method, observed, scn.n_train, scn.alpha, scale, opt, scn.tag);
}

// ---------------------------------------------------------------------------
// Replications
// ---------------------------------------------------------------------------

struct RepReport {
    Method method = Method::kde_hpd;
    std::size_t rep = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double coverage = 0.0;
    double mean_size = 0.0;
    std::vector<double> sizes;             // per test point
    std::vector<std::uint8_t> covered;     // per test point
    std::vector<std::size_t> intervals;    // per test point, region piece count
    std::size_t components = 0;
    std::size_t warnings = 0;
    double wall_seconds = 0.0;
    std::shared_ptr<const Dataset> test;
};

struct MethodSummary {
    Method method = Method::kde_hpd;
    std::size_t reps = 0;
    std::size_t failures = 0;
    double coverage = 0.0;
    double coverage_se = 0.0;
    double mean_size = 0.0;
    double size_se = 0.0;
    double mean_runtime_s = 0.0;
    std::size_t warnings = 0;
};

struct SimulationResult {
    Scenario scenario;
    std::vector<Method> methods;
    std::size_t reps = 0;
    std::vector<RepReport> reports;  // rep-major, then method order
    std::vector<MethodSummary> summaries;
};

namespace detail {

inline double mean_of(std::span<const double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Standard error of the mean.
inline double se_of(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    if (!std::isfinite(m)) return std::numeric_limits<double>::quiet_NaN();
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

inline void evaluate_on_test(RepReport& r, const FittedMethod& fm, const Dataset& test) {
    r.sizes.resize(test.size());
    r.covered.resize(test.size());
    r.intervals.resize(test.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const PredictionRegion region = fm.predict(test.row(i));
        r.sizes[i] = region_length(region);
        r.covered[i] = region_contains(region, test.y(i)) ? 1 : 0;
        r.intervals[i] = region.size();
        hits += r.covered[i];
    }
    r.coverage = static_cast<double>(hits) / static_cast<double>(test.size());
    r.mean_size = mean_of(r.sizes);
}

/// Runs `body(i)` for i in [0, count) on `threads` workers.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

/// One replication: generate, fit every method, score the test rows.
inline std::vector<RepReport> run_replication(const Scenario& scn, const std::vector<Method>& methods,
                                              std::size_t rep, const MethodOptions& opt = {}) {
    Scenario s = scn;
    s.seed = scn.seed + rep;
    const SimulatedData data = generate(s);
    auto test = std::make_shared<const Dataset>(data.test);
    std::vector<RepReport> out;
    for (Method m : methods) {
        RepReport r;
        r.method = m;
        r.rep = rep;
        r.seed = s.seed;
        r.test = test;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const FittedMethod fm = fit_method(m, s, data.observed, opt);
            detail::evaluate_on_test(r, fm, data.test);
            r.components = fm.components;
            r.warnings = fm.warnings;
            r.ok = true;
        } catch (const std::exception& e) {
            r.ok = false;
            r.error = e.what();
        }
        r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<MethodSummary> summarize(const std::vector<RepReport>& reports, const std::vector<Method>& methods) {
    std::vector<MethodSummary> out;
    for (Method m : methods) {
        MethodSummary s;
        s.method = m;
        std::vector<double> cov, size, time;
        for (const auto& r : reports) {
            if (r.method != m) continue;
            if (!r.ok) {
                ++s.failures;
                continue;
            }
            cov.push_back(r.coverage);
            size.push_back(r.mean_size);
            time.push_back(r.wall_seconds);
            s.warnings += r.warnings;
        }
        s.reps = cov.size();
        s.coverage = detail::mean_of(cov);
        s.coverage_se = detail::se_of(cov);
        s.mean_size = detail::mean_of(size);
        s.size_se = detail::se_of(size);
        s.mean_runtime_s = detail::mean_of(time);
        out.push_back(s);
    }
    return out;
}

/// R replications with seeds scn.seed + rep. Aggregates are independent
/// of `threads` apart from wall-clock fields.
inline SimulationResult run_replications(const Scenario& scn, const std::vector<Method>& methods, std::size_t reps,
                                         std::size_t threads = 1, const MethodOptions& opt = {}) {
    scn.validate();
    if (reps < 1) throw Error("need at least one replication");
    if (methods.empty()) throw Error("no methods requested");
    std::vector<std::vector<RepReport>> per_rep(reps);
    detail::parallel_for(reps, threads, [&](std::size_t r) { per_rep[r] = run_replication(scn, methods, r, opt); });
    SimulationResult res;
    res.scenario = scn;
    res.methods = methods;
    res.reps = reps;
    for (auto& v : per_rep) {
        for (auto& r : v) res.reports.push_back(std::move(r));
    }
    res.summaries = summarize(res.reports, methods);
    return res;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct GroupCoverage {
    std::string label;
    std::size_t n = 0;
    double coverage = 0.0;
    double se = 0.0;
};

using Slicer = std::function<std::string(std::span<const double> x, double y)>;

/// Coverage per group over every test point of the successful reports of
/// `method`. Groups with no points are absent.
inline std::vector<GroupCoverage> conditional_coverage(const std::vector<RepReport>& reports, Method method,
                                                       const Slicer& slicer) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
    for (const auto& r : reports) {
        if (r.method != method || !r.ok || !r.test) continue;
        for (std::size_t i = 0; i < r.test->size(); ++i) {
            auto& t = tally[slicer(r.test->row(i), r.test->y(i))];
            ++t.first;
            t.second += r.covered[i];
        }
    }
    std::vector<GroupCoverage> out;
    for (const auto& [label, t] : tally) {
        GroupCoverage g;
        g.label = label;
        g.n = t.first;
        g.coverage = static_cast<double>(t.second) / static_cast<double>(t.first);
        g.se = std::sqrt(g.coverage * (1.0 - g.coverage) / static_cast<double>(t.first));
        out.push_back(g);
    }
    return out;
}

struct HausdorffRow {
    std::size_t n = 0;
    double median = 0.0;
    std::size_t reps = 0;
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Median over replications and an x grid of the Hausdorff distance
/// between a method's region and the oracle region. Each n in the ladder
/// is the observed sample size, split between training and calibration
/// like the default scenario.
inline std::vector<HausdorffRow> hausdorff_diagnostic(const Scenario& scn, Method method,
                                                      const std::vector<std::size_t>& n_ladder, std::size_t reps,
                                                      std::size_t grid_points = 21, std::size_t threads = 1,
                                                      const MethodOptions& opt = {}) {
    std::vector<double> grid(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i) {
        grid[i] = grid_points == 1 ? 0.0
                                   : kCovariateLo + (kCovariateHi - kCovariateLo) * static_cast<double>(i) /
                                                        static_cast<double>(grid_points - 1);
    }
    std::vector<HausdorffRow> out;
    for (std::size_t n : n_ladder) {
        Scenario s = scn;
        s.n_train = n / 2;
        s.n_cal = n - n / 2;
        std::vector<std::vector<double>> dist(reps);
        detail::parallel_for(reps, threads, [&](std::size_t r) {
            Scenario sr = s;
            sr.seed = s.seed + r;
            const SimulatedData data = generate(sr);
            const FittedMethod fm = fit_method(method, sr, data.observed, opt);
            for (double x : grid) {
                const double xv[1] = {x};
                const PredictionRegion pred = fm.predict(xv);
                dist[r].push_back(pred.empty() ? kInf : hausdorff(pred, oracle_hpd(sr.tag, sr.alpha, x)));
            }
        });
        std::vector<double> all;
        for (const auto& d : dist) all.insert(all.end(), d.begin(), d.end());
        out.push_back({n, median_of(std::move(all)), reps});
    }
    return out;
}

}  // namespace kdehpd

#endif  // KDEHPD_SIM_HPP
