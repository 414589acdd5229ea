#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>

#include "kdehpd/conformal.hpp"
#include "kdehpd/sim.hpp"
#include "support.hpp"

using namespace kdehpd;
using testing_support::normal_draws;

namespace {

constexpr double kZ95 = 1.6448536269514722;

Dataset scores_as_data(std::vector<double> v) {
    std::vector<double> x(v.size(), 0.0);
    return Dataset(x, 1, std::move(v));
}

std::vector<double> one_to(int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), 1.0);
    return v;
}

// Scale model that returns c everywhere: binned |residual| quantile on
// residuals of constant magnitude.
ScaleEstimator constant_scale(double c) {
    std::vector<double> x, y;
    for (int i = 0; i < 20; ++i) {
        x.push_back(i);
        y.push_back(i % 2 ? c : -c);
    }
    ScaleConfig cfg;
    cfg.kind = ScaleKind::binned_quantile_absres;
    return fit_scale(Dataset(x, 1, y), MeanEstimator::constant_value(0.0, 1), cfg);
}

KdeHpdPipeline fixed_bands(double g, ScaleEstimator s, std::vector<ScoreBand> bands) {
    return KdeHpdPipeline(MeanEstimator::constant_value(g, 1), std::move(s), ScoreVector(std::vector<double>{0.0}), 1.0,
                          HpdResult{}, std::move(bands), 0);
}

// Coverage of [V_(lo), V_(hi)] by direct enumeration of the rank of the
// new score among n + 1 exchangeable continuous scores. Rank k in 1..n+1
// means k - 1 calibration scores lie below it; V_(0) = -inf, V_(n+1) = +inf.
double enumerate_rank_coverage(int n, long long lo, long long hi) {
    int hits = 0;
    for (int k = 1; k <= n + 1; ++k) {
        const int below = k - 1;
        const bool ok_lo = lo <= 0 || below >= lo;
        const bool ok_hi = hi >= n + 1 || below < hi;
        hits += ok_lo && ok_hi;
    }
    return hits / static_cast<double>(n + 1);
}

// Rank of an offset produced from scores 1..n (the value is the rank).
long long rank_of(double v, int n) {
    if (v == -kInf) return 0;
    if (v == kInf) return n + 1;
    return static_cast<long long>(v);
}

Scenario symmetric(std::uint64_t seed) {
    Scenario s;
    s.tag = ScenarioTag::unimodal_symmetric;
    s.seed = seed;
    return s;
}

}  // namespace

TEST(PredictRegion, AffineMapOfBands) {
    const auto p = fixed_bands(9.0, ScaleEstimator::unit(1), {{-1.65, 1.65}});
    const double x[] = {0.3};
    const auto r = predict_region(p, x);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_NEAR(r.intervals()[0].lo, 7.35, 1e-12);
    EXPECT_NEAR(r.intervals()[0].hi, 10.65, 1e-12);
}

TEST(PredictRegion, ScaleTwoDoublesLength) {
    const std::vector<ScoreBand> bands{{-3.0, -1.0}, {0.5, 2.25}};
    const auto one = fixed_bands(1.0, ScaleEstimator::unit(1), bands);
    const auto two = fixed_bands(1.0, constant_scale(2.0), bands);
    const double x[] = {4.0};
    EXPECT_DOUBLE_EQ(region_length(two.predict(x)), 2.0 * region_length(one.predict(x)));
    EXPECT_EQ(two.predict(x), PredictionRegion({{-5.0, -1.0}, {2.0, 5.5}}));
}

TEST(PredictRegion, OverlappingBandsCoalesce) {
    const auto p = fixed_bands(0.0, ScaleEstimator::unit(1), {{-2.0, 0.5}, {0.0, 2.0}});
    const double x[] = {0.0};
    EXPECT_EQ(p.predict(x), PredictionRegion({{-2.0, 2.0}}));
}

TEST(FitKdeHpd, IdentityEstimatorsGiveRawHpdConformalSet) {
    CounterRng rng(3, 0);
    std::vector<double> y(400);
    for (auto& v : y) v = (rng.uniform() < 0.5 ? -3.0 : 3.0) + rng.normal();
    const auto p = calibrate_kde_hpd(MeanEstimator::constant_value(0.0, 1), ScaleEstimator::unit(1), scores_as_data(y),
                                     0.1);
    const KdeModel kde(y);
    const auto h = fit_hpd(kde, 0.1);
    const ScoreVector sv(y);
    std::vector<Interval> expect;
    for (const auto& q : h.quantile_pairs) {
        const double lo = conformal_r(sv, q.lower);
        const double hi = conformal_q(sv, 1.0 - q.upper);
        if (lo <= hi) expect.push_back({lo, hi});
    }
    const double x[] = {17.0};
    EXPECT_EQ(p.predict(x), coalesce(PredictionRegion(expect)));
}

TEST(FitKdeHpd, SymmetricScenarioRecoversNormalHpd) {
    int good = 0;
    const int seeds = 200;
    for (int s = 1; s <= seeds; ++s) {
        const auto data = generate(symmetric(static_cast<std::uint64_t>(s)));
        const auto p = fit_kde_hpd(data.observed, SplitPlan::from_counts(500, 0, 500), 0.1);
        if (p.bands().size() == 1 && std::abs(p.bands()[0].eta + kZ95) <= 0.2 &&
            std::abs(p.bands()[0].gamma - kZ95) <= 0.2) {
            ++good;
        }
    }
    // "Most seeds": a strict majority.
    EXPECT_GT(good, seeds / 2) << good << " of " << seeds;
}

TEST(FitKdeHpd, InvariantsOfBands) {
    for (std::uint64_t s = 1; s <= 5; ++s) {
        Scenario scn = symmetric(s);
        scn.tag = ScenarioTag::bimodal;
        const auto data = generate(scn);
        const auto p = fit_kde_hpd(data.observed, SplitPlan::from_counts(500, 0, 500), 0.1);
        ASSERT_EQ(p.bands().size() + p.dropped(), p.hpd().quantile_pairs.size());
        std::size_t j = 0;
        for (const auto& q : p.hpd().quantile_pairs) {
            const double eta = conformal_r(p.scores(), q.lower);
            const double gamma = conformal_q(p.scores(), 1.0 - q.upper);
            if (eta > gamma) continue;
            EXPECT_EQ(p.bands()[j].eta, eta);
            EXPECT_EQ(p.bands()[j].gamma, gamma);
            ++j;
        }
    }
}

TEST(FitKdeHpd, Errors) {
    const auto data = generate(symmetric(1));
    EXPECT_THROW(fit_kde_hpd(data.observed, SplitPlan::from_counts(995, 0, 5), 0.1), Error);
    EXPECT_THROW(fit_kde_hpd(data.observed, SplitPlan::from_counts(500, 0, 500), 1.0), Error);
    KdeHpdConfig cfg;
    cfg.scale.kind = ScaleKind::ols_absres;
    EXPECT_THROW(fit_kde_hpd(data.observed, SplitPlan::from_counts(500, 0, 500), 0.1, cfg), Error);
}

TEST(Secpr, IndexExamples) {
    const auto cal = scores_as_data(one_to(99));
    const double x[] = {0.0};
    const auto zero = MeanEstimator::constant_value(0.0, 1);
    EXPECT_EQ(calibrate_secpr(zero, cal, 0.05, 0.05).predict(x), PredictionRegion({{4.0, 95.0}}));
    EXPECT_EQ(calibrate_secpr(zero, cal, 0.0, 0.1).predict(x), PredictionRegion({{-kInf, 90.0}}));
    EXPECT_THROW(calibrate_secpr(zero, cal, 0.6, 0.5), Error);
}

TEST(Secpr, ExactCoverageByRankEnumeration) {
    const auto off = secpr_offsets(ScoreVector(one_to(19)), 0.05, 0.05);
    EXPECT_DOUBLE_EQ(enumerate_rank_coverage(19, rank_of(off.lo, 19), rank_of(off.hi, 19)), 19.0 / 20.0);
    EXPECT_DOUBLE_EQ(rank_window_coverage(19, rank_of(off.lo, 19), rank_of(off.hi, 19)), 19.0 / 20.0);

    // Monte-Carlo: a fixed model, 19 calibration rows and one test row.
    const auto zero = MeanEstimator::constant_value(0.0, 1);
    const int reps = 20000;
    int hits = 0;
    for (int r = 0; r < reps; ++r) {
        auto v = normal_draws(20, 100 + static_cast<std::uint64_t>(r));
        const double test = v.back();
        v.pop_back();
        const double x[] = {0.0};
        hits += region_contains(calibrate_secpr(zero, scores_as_data(v), 0.05, 0.05).predict(x), test);
    }
    const double se = std::sqrt(0.95 * 0.05 / reps);
    EXPECT_NEAR(hits / static_cast<double>(reps), 0.95, 3.0 * se);
}

TEST(Secpr, RankCoverageHelperMatchesEnumeration) {
    for (int n = 1; n < 40; ++n) {
        for (long long lo = 0; lo <= n + 1; ++lo) {
            for (long long hi = lo; hi <= n + 1; ++hi) {
                ASSERT_DOUBLE_EQ(rank_window_coverage(static_cast<std::size_t>(n), lo, hi),
                                 enumerate_rank_coverage(n, lo, hi));
            }
        }
    }
}

TEST(Secpr, FlippedFormKeepsTheGuarantee) {
    for (int n = 9; n <= 120; ++n) {
        const ScoreVector v(one_to(n));
        for (double a1 : {0.0, 0.02, 0.05, 0.07}) {
            for (double a2 : {0.0, 0.03, 0.05}) {
                if (a1 + a2 == 0.0) continue;
                const auto main = secpr_offsets(v, a1, a2);
                const auto flip = secpr_offsets_flipped(v, a1, a2);
                const double c_main = enumerate_rank_coverage(n, rank_of(main.lo, n), rank_of(main.hi, n));
                const double c_flip = enumerate_rank_coverage(n, rank_of(flip.lo, n), rank_of(flip.hi, n));
                EXPECT_GE(c_main, 1.0 - a1 - a2 - 1e-12) << n << " " << a1 << " " << a2;
                EXPECT_GE(c_flip, 1.0 - a1 - a2 - 1e-12) << n << " " << a1 << " " << a2;
                auto positive_integer = [](double k) { return k > 0.5 && std::abs(k - std::round(k)) < 1e-9; };
                const bool lat1 = positive_integer(a1 * (n + 1));
                const bool lat2 = positive_integer(a2 * (n + 1));
                if (!lat1 && !lat2) {
                    EXPECT_EQ(main, flip) << n << " " << a1 << " " << a2;
                }
                // Both ends move up one rank: same width, same coverage.
                if (lat1 && lat2) {
                    EXPECT_DOUBLE_EQ(c_main, c_flip) << n << " " << a1 << " " << a2;
                }
            }
        }
    }
}

TEST(Cqr, ExactQuantilesNeedNoCorrection) {
    const auto noise = normal_draws(20000, 5);
    std::vector<double> x(noise.size()), y(noise.size());
    CounterRng rng(6, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.uniform(-5.0, 5.0);
        y[i] = 5.0 + 2.0 * x[i] + noise[i];
    }
    PointFunction low = [](std::span<const double> v) { return 5.0 + 2.0 * v[0] - kZ95; };
    PointFunction high = [](std::span<const double> v) { return 5.0 + 2.0 * v[0] + kZ95; };
    const auto m = calibrate_cqr(low, high, Dataset(x, 1, y), 0.1);
    EXPECT_NEAR(m.correction(), 0.0, 0.05);
}

TEST(Cqr, ShiftEquivariance) {
    const auto data = generate(symmetric(8));
    const double c = 3.25;
    std::vector<double> ys(data.observed.y_data().begin(), data.observed.y_data().end());
    for (auto& v : ys) v += c;
    const Dataset shifted(data.observed.x_data(), 1, ys);
    PointFunction low = [](std::span<const double> v) { return 4.0 + 2.0 * v[0]; };
    PointFunction high = [](std::span<const double> v) { return 6.0 + 2.0 * v[0]; };
    PointFunction low_c = [&](std::span<const double> v) { return low(v) + c; };
    PointFunction high_c = [&](std::span<const double> v) { return high(v) + c; };
    const auto a = calibrate_cqr(low, high, data.observed, 0.1);
    const auto b = calibrate_cqr(low_c, high_c, shifted, 0.1);
    for (double xv : {-4.0, 0.0, 2.5}) {
        const double x[] = {xv};
        EXPECT_NEAR(b.predict(x).intervals()[0].lo, a.predict(x).intervals()[0].lo + c, 1e-12);
        EXPECT_NEAR(b.predict(x).intervals()[0].hi, a.predict(x).intervals()[0].hi + c, 1e-12);
    }
}

TEST(Cqr, SymmetricScenarioCoverage) {
    const auto res = run_replications(symmetric(1), {Method::cqr}, 200, 4);
    ASSERT_EQ(res.summaries[0].failures, 0u);
    EXPECT_GE(res.summaries[0].coverage, 0.88);
    EXPECT_LE(res.summaries[0].coverage, 0.92);
}

TEST(Dcp, OptimalLowerForNormalIsSymmetric) {
    const boost::math::normal_distribution<double> n01;
    auto q = [&](double t) {
        if (t <= 0.0) return -kInf;
        if (t >= 1.0) return kInf;
        return boost::math::quantile(n01, t);
    };
    EXPECT_NEAR(dcp_optimal_lower(q, 0.1), 0.05, 1e-12);
}

TEST(Dcp, OptimalLowerForSkewedGammaMatchesGridOracle) {
    const boost::math::gamma_distribution<double> g(7.5, 1.0);
    auto q = [&](double t) {
        if (t <= 0.0) return 0.0;
        if (t >= 1.0) return kInf;
        return boost::math::quantile(g, t);
    };
    double best = kInf, arg = -1.0;
    for (int i = 0; i <= 20; ++i) {
        const double z = 0.005 * i;
        const double len = q(z + 0.9) - q(z);
        if (len < best) {
            best = len;
            arg = z;
        }
    }
    const double b = dcp_optimal_lower(q, 0.1);
    EXPECT_EQ(b, arg);
    EXPECT_LT(b, 0.05);
    // The continuous shortest interval has equal density at both ends.
    const double gap = boost::math::pdf(g, q(b)) - boost::math::pdf(g, q(b + 0.9));
    EXPECT_LT(std::abs(gap), 0.01);
}

TEST(Dcp, ExactLadderLimitIsShortestQuantileInterval) {
    const boost::math::gamma_distribution<double> law(7.5, 1.0);
    const auto levels = dcp_ladder_levels();
    LadderFunction ladder = [&](std::span<const double>) {
        std::vector<double> q;
        for (double t : levels) q.push_back(boost::math::quantile(law, t));
        return q;
    };
    CounterRng rng(9, 0);
    std::vector<double> y(20000);
    for (auto& v : y) v = rng.gamma(7.5, 1.0);
    const auto m = calibrate_dcp(levels, ladder, scores_as_data(y), 0.1);
    const double x[] = {0.0};
    const auto f = m.conditional_cdf(x);
    const double b = m.optimal_lower(f);
    const auto r = m.predict(x);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_NEAR(r.intervals()[0].lo, boost::math::quantile(law, b), 0.1);
    EXPECT_NEAR(r.intervals()[0].hi, boost::math::quantile(law, b + 0.9), 0.1);
    EXPECT_NEAR(m.threshold(), 0.45, 0.01);
}

TEST(Dcp, NonMonotoneLadderIsMonotonized) {
    const std::vector<double> levels{0.25, 0.5, 0.75};
    const std::vector<double> q{1.0, 0.0, 2.0};
    const LadderCdf f(levels, q);
    double prev = 0.0;
    for (double y = -3.0; y <= 5.0; y += 0.01) {
        const double c = f.cdf(y);
        EXPECT_GE(c, prev);
        EXPECT_GE(c, 0.0);
        EXPECT_LE(c, 1.0);
        prev = c;
    }
    EXPECT_EQ(f.quantile(0.5), 1.0);
    EXPECT_LE(f.quantile(0.3), f.quantile(0.6));
    EXPECT_THROW(LadderCdf(std::vector<double>{0.5}, std::vector<double>{0.0}), Error);
}

TEST(Parametric, ExactLineIsDegenerate) {
    const auto d = testing_support::line_data({-2, -1, 0, 1, 2, 3}, [](double x) { return 5.0 + 2.0 * x; });
    const auto m = fit_parametric_normal(d, 0.1);
    const double x[] = {1.5};
    const auto r = m.predict(x);
    EXPECT_LT(region_length(r), 1e-9);
    EXPECT_NEAR(r.intervals()[0].lo, 8.0, 1e-9);
}

TEST(Parametric, HalfWidthTendsToNormalQuantile) {
    const auto data = generate([] {
        Scenario s = symmetric(11);
        s.n_train = 10000;
        s.n_cal = 10000;
        return s;
    }());
    const auto m = fit_parametric_normal(data.observed, 0.1);
    const double x[] = {0.0};
    const auto r = m.predict(x);
    EXPECT_NEAR(0.5 * region_length(r), kZ95 * m.residual_sd(), 1e-4);
    EXPECT_NEAR(m.residual_sd(), 1.0, 0.02);
}

TEST(Parametric, SymmetricScenarioCoverage) {
    const auto res = run_replications(symmetric(1), {Method::parametric}, 200, 4);
    EXPECT_NEAR(res.summaries[0].coverage, 0.90, 0.02);
}

TEST(FitKdeHpd, SingleBandReducesToSecprExactly) {
    int checked = 0;
    for (std::uint64_t s = 1; s <= 10; ++s) {
        const auto data = generate(symmetric(s));
        const auto p = fit_kde_hpd(data.observed, SplitPlan::from_counts(500, 0, 500), 0.1);
        if (p.bands().size() != 1 || p.hpd().quantile_pairs.size() != 1) continue;
        const auto& q = p.hpd().quantile_pairs[0];
        std::vector<std::size_t> cal(500);
        std::iota(cal.begin(), cal.end(), std::size_t{500});
        const auto secpr = calibrate_secpr(p.mean(), data.observed.subset(cal), q.lower, q.upper);
        for (std::size_t i = 0; i < data.test.size(); ++i) {
            EXPECT_EQ(p.predict(data.test.row(i)), secpr.predict(data.test.row(i)));
        }
        ++checked;
    }
    EXPECT_GE(checked, 5);
}

TEST(Equivariance, TranslationShiftsEveryMethod) {
    Scenario scn = symmetric(12);
    scn.tag = ScenarioTag::unimodal_skewed;
    const auto data = generate(scn);
    const double c = 7.3;
    std::vector<double> ys(data.observed.y_data().begin(), data.observed.y_data().end());
    for (auto& v : ys) v += c;
    const Dataset shifted(data.observed.x_data(), 1, ys);
    for (Method m : {Method::kde_hpd, Method::secpr, Method::cqr, Method::dcp, Method::parametric}) {
        const auto a = fit_method(m, data.observed, scn.n_train, 0.1, false, {});
        const auto b = fit_method(m, shifted, scn.n_train, 0.1, false, {});
        for (double xv : {-4.5, -1.0, 0.0, 3.0}) {
            const double x[] = {xv};
            const auto ra = a.predict(x);
            const auto rb = b.predict(x);
            ASSERT_EQ(ra.size(), rb.size()) << to_string(m);
            for (std::size_t j = 0; j < ra.size(); ++j) {
                EXPECT_NEAR(rb.intervals()[j].lo, ra.intervals()[j].lo + c, 1e-9) << to_string(m);
                EXPECT_NEAR(rb.intervals()[j].hi, ra.intervals()[j].hi + c, 1e-9) << to_string(m);
            }
        }
    }
}

TEST(Equivariance, KdeHpdScalesWithResponse) {
    Scenario scn = symmetric(13);
    scn.tag = ScenarioTag::bimodal;
    const auto data = generate(scn);
    const double c = 2.0;
    std::vector<double> ys(data.observed.y_data().begin(), data.observed.y_data().end());
    for (auto& v : ys) v *= c;
    const Dataset scaled(data.observed.x_data(), 1, ys);
    const auto plan = SplitPlan::from_counts(500, 0, 500);
    const auto a = fit_kde_hpd(data.observed, plan, 0.1);
    const auto b = fit_kde_hpd(scaled, plan, 0.1);
    EXPECT_DOUBLE_EQ(b.bandwidth(), c * a.bandwidth());
    for (double xv : {-3.0, 0.5, 4.0}) {
        const double x[] = {xv};
        const auto ra = a.predict(x);
        const auto rb = b.predict(x);
        ASSERT_EQ(ra.size(), rb.size());
        for (std::size_t j = 0; j < ra.size(); ++j) {
            EXPECT_NEAR(rb.intervals()[j].lo, c * ra.intervals()[j].lo, 1e-9);
            EXPECT_NEAR(rb.intervals()[j].hi, c * ra.intervals()[j].hi, 1e-9);
        }
    }
}
