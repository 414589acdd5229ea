#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "kdehpd/kde.hpp"
#include "kdehpd/rng.hpp"
#include "support.hpp"

using namespace kdehpd;
using testing_support::normal_draws;

namespace {

double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

// Composite Simpson on [a, b] with 2k panels.
template <class F>
double simpson(F f, double a, double b, int k) {
    const int m = 2 * k;
    const double h = (b - a) / m;
    double s = f(a) + f(b);
    for (int i = 1; i < m; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

}  // namespace

TEST(Bandwidth, RuleExamples) {
    EXPECT_NEAR(bandwidth_rule(1.0, 1.34 * 1.2, 1000), 0.09, 1e-12);
    EXPECT_NEAR(bandwidth_rule(2.0, 1.34 * 1.5, 8), 0.675, 1e-12);
    EXPECT_EQ(bandwidth_rule(0.0, 0.0, 50), 1e-3);
    EXPECT_NEAR(bandwidth_rule(1.0, 0.0, 8), 0.45, 1e-12);
}

TEST(Bandwidth, FromPoints) {
    // 500 copies each of +-a: sd is exactly 1 when a = sqrt(999/1000), IQR = 2a.
    const double a = std::sqrt(999.0 / 1000.0);
    std::vector<double> p;
    for (int i = 0; i < 500; ++i) {
        p.push_back(a);
        p.push_back(-a);
    }
    EXPECT_NEAR(bandwidth(p), 0.09, 1e-9);
    EXPECT_EQ(bandwidth(std::vector<double>(10, 3.5)), 1e-3);
    // Middle half identical: IQR = 0 so the rule falls back to sd.
    std::vector<double> q{-10, 0, 0, 0, 0, 0, 0, 10};
    const double sd = std::sqrt(200.0 / 7.0);
    EXPECT_NEAR(bandwidth(q), 0.9 * sd * 0.5, 1e-12);
}

TEST(KdeEval, Examples) {
    const KdeModel one({0.0}, 1.0);
    EXPECT_NEAR(kde_eval(one, 0.0), 0.3989422804014327, 1e-12);
    const KdeModel two({-1.0, 1.0}, 1.0);
    EXPECT_NEAR(kde_eval(two, 0.0), 0.24197072451914337, 1e-12);
    EXPECT_EQ(kde_cdf(one, 0.0), 0.5);
    EXPECT_EQ(kde_cdf(two, kInf), 1.0);
    EXPECT_NEAR(kde_cdf(two, 40.0), 1.0, 1e-15);
    EXPECT_EQ(kde_cdf(two, -kInf), 0.0);
}

TEST(KdeModel, GridNormalization) {
    for (std::uint64_t seed : {1, 2, 3}) {
        for (std::size_t n : {5, 100, 3000}) {
            const KdeModel m(normal_draws(n, seed, 0.0, 1.0 + seed));
            EXPECT_GE(m.grid_mass(), 0.995);
            EXPECT_LE(m.grid_mass(), 1.0 + 1e-9);
            EXPECT_EQ(m.grid_size(), 2048u);
            EXPECT_NEAR(m.grid_lo(), m.points().front() - 4.0 * m.bandwidth(), 1e-12);
            EXPECT_NEAR(m.grid_hi(), m.points().back() + 4.0 * m.bandwidth(), 1e-9);
        }
    }
}

TEST(KdeCdf, MatchesIntegratedDensity) {
    const auto pts = normal_draws(200, 4, 1.0, 2.0);
    const KdeModel m(pts);
    const double a = m.grid_lo() - 20.0 * m.bandwidth();
    CounterRng rng(5, 0);
    for (int i = 0; i < 20; ++i) {
        const double z = rng.uniform(m.grid_lo(), m.grid_hi());
        const double integral = simpson([&](double t) { return m.eval(t); }, a, z, 4000);
        EXPECT_NEAR(m.cdf(z), integral, 1e-4) << "z=" << z;
    }
}

TEST(KdeCdf, MonotoneAndDensityNonNegative) {
    const KdeModel m(normal_draws(300, 6));
    CounterRng rng(7, 0);
    std::vector<double> z(2000);
    for (auto& v : z) v = rng.uniform(-8.0, 8.0);
    std::sort(z.begin(), z.end());
    double prev = 0.0;
    for (double v : z) {
        const double c = m.cdf(v);
        EXPECT_GE(c, prev);
        EXPECT_GE(m.eval(v), 0.0);
        prev = c;
    }
}

TEST(KdeCdf, DerivativeIsDensity) {
    const KdeModel m({-1.2, 0.1, 0.4, 2.0}, 0.6);
    const double hfd = 1e-4;
    for (double z = -2.5; z <= 3.5; z += 0.25) {
        const double fd = (m.cdf(z + hfd) - m.cdf(z - hfd)) / (2.0 * hfd);
        EXPECT_NEAR(fd, m.eval(z), 1e-6 * m.eval(z)) << "z=" << z;
    }
}

TEST(KdeEval, ConvergesToNormalDensity) {
    const KdeModel m(normal_draws(5000, 8));
    double worst = 0.0;
    for (std::size_t i = 0; i < m.grid_size(); ++i) {
        worst = std::max(worst, std::abs(m.grid_density()[i] - phi(m.grid_x(i))));
    }
    EXPECT_LT(worst, 0.03);
}

TEST(KdeModel, ConstructorErrors) {
    EXPECT_THROW(KdeModel(std::vector<double>{}, 1.0), Error);
    EXPECT_THROW(KdeModel({0.0}, 0.0), Error);
    EXPECT_THROW(KdeModel({0.0}, -1.0), Error);
    EXPECT_THROW(KdeModel({0.0}, 1.0, 1), Error);
    EXPECT_THROW(bandwidth(std::vector<double>{1.0}), Error);
}
