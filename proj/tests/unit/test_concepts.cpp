#include "helpers.hpp"

#include "strata/concepts.hpp"
#include "strata/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace strata;
using namespace strata::concepts;

namespace {

std::vector<Vec> cluster(Rng& rng, const Vec& centre, double sigma, int n) {
    std::vector<Vec> out;
    for (int i = 0; i < n; ++i) {
        Vec v = centre;
        for (auto& x : v) x += sigma * rng.normal();
        out.push_back(v);
    }
    return out;
}

double norm(const Vec& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

std::vector<Vec> scaled(std::vector<Vec> vs, double f) {
    for (auto& v : vs)
        for (auto& x : v) x *= f;
    return vs;
}

ConceptVector fitted_pair(std::vector<Vec>* pos_out = nullptr, std::vector<Vec>* neg_out = nullptr) {
    Rng rng(12);
    Vec a(8, 0.0), b(8, 0.0);
    b[2] = 1.0;
    auto pos = cluster(rng, b, 0.05, 40);
    auto neg = cluster(rng, a, 0.05, 40);
    if (pos_out) *pos_out = pos;
    if (neg_out) *neg_out = neg;
    return fit_concept("toy", pos, neg);
}

}  // namespace

TEST(Probe, SeparatedClustersAreClassifiedPerfectly) {
    std::vector<Vec> pos, neg;
    const auto c = fitted_pair(&pos, &neg);
    EXPECT_NEAR(norm(c.direction), 1.0, 1e-12);
    EXPECT_EQ(c.metrics.at("train").accuracy, 1.0);
    const auto m = evaluate_probe(c, pos, neg);
    EXPECT_EQ(m.accuracy, 1.0);
    EXPECT_EQ(m.n_pos, 40);
    EXPECT_EQ(m.true_neg, 40);
    EXPECT_GT(c.direction[2], 0.9);  // points from negative to positive

    // Spread: population std of the projections, two-pass.
    std::vector<double> proj;
    for (const auto* set : {&pos, &neg})
        for (const auto& w : *set) {
            double d = 0;
            for (std::size_t j = 0; j < w.size(); ++j) d += c.direction[j] * w[j];
            proj.push_back(d);
        }
    double mean = 0, var = 0;
    for (double d : proj) mean += d / static_cast<double>(proj.size());
    for (double d : proj) var += (d - mean) * (d - mean) / static_cast<double>(proj.size());
    EXPECT_NEAR(c.spread, std::sqrt(var), 1e-12);
    EXPECT_NEAR(c.spread, 0.5, 0.05);  // two clusters one unit apart
}

TEST(Probe, ScalingInputsKeepsPredictedLabels) {
    Rng rng(99);
    Vec a(6, 0.0), b(6, 0.0);
    b[0] = 0.3;
    b[4] = -0.2;
    const auto pos = cluster(rng, b, 0.2, 60), neg = cluster(rng, a, 0.2, 60);
    const auto c1 = fit_concept("x", pos, neg);
    // Doubling the inputs is the same problem with the penalty weighted four times less.
    FitOptions quarter;
    quarter.C = FitOptions{}.C / 4.0;
    const auto c2 = fit_concept("x", scaled(pos, 2.0), scaled(neg, 2.0), quarter);
    EXPECT_NEAR(norm(c2.direction), 1.0, 1e-12);
    for (std::size_t j = 0; j < c1.dim(); ++j) EXPECT_NEAR(c2.direction[j], c1.direction[j], 1e-6);
    int agree = 0, total = 0;
    for (const auto* set : {&pos, &neg})
        for (const auto& w : *set) {
            Vec w2 = w;
            for (auto& x : w2) x *= 2.0;
            EXPECT_NEAR(c2.score(w2), 2.0 * c1.score(w), 1e-6);
            agree += (c1.score(w) > 0) == (c2.score(w2) > 0);
            ++total;
        }
    EXPECT_EQ(agree, total);
}

TEST(Probe, DegenerateClassesRejected) {
    const std::vector<Vec> some{{1.0, 0.0}, {0.9, 0.1}};
    EXPECT_THROW(fit_concept("x", {}, some), std::invalid_argument);
    EXPECT_THROW(fit_concept("x", some, {}), std::invalid_argument);
    const std::vector<Vec> same{{0.5, 0.5}, {0.5, 0.5}};
    EXPECT_THROW(fit_concept("x", same, same), std::invalid_argument);
}

TEST(Probe, MetricsFromCounts) {
    const auto m = ProbeMetrics::from_counts(10, 30, 8, 27);
    EXPECT_DOUBLE_EQ(m.accuracy, 35.0 / 40.0);
    EXPECT_DOUBLE_EQ(m.sensitivity, 0.8);
    EXPECT_DOUBLE_EQ(m.specificity, 0.9);
}

TEST(Traverse, ZeroReflectionAndMonotoneScore) {
    const auto c = fitted_pair();
    const Vec w{0.1, -0.3, 0.2, 0.0, 0.5, 0.7, -0.2, 0.4};
    const auto out = traverse(w, c, {-3, -2, -1, 0, 1, 2, 3});
    ASSERT_EQ(out.size(), 7u);
    EXPECT_EQ(out[3], w);
    for (int i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < w.size(); ++j) EXPECT_NEAR(out[static_cast<std::size_t>(i)][j] + out[6 - static_cast<std::size_t>(i)][j], 2 * w[j], 1e-12);
    for (std::size_t i = 1; i < out.size(); ++i) EXPECT_GT(c.score(out[i]), c.score(out[i - 1]));
}

TEST(Interpolate, EndpointsMidpointAndConstantVelocity) {
    const Vec a{0.1, 0.2, -0.7}, b{1.3, -0.4, 0.25};
    const auto path = interpolate(a, b, 9);
    ASSERT_EQ(path.size(), 9u);
    EXPECT_EQ(path.front(), a);
    EXPECT_EQ(path.back(), b);
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(path[4][j], 0.5 * (a[j] + b[j]), 1e-15);
    for (std::size_t i = 1; i < path.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(path[i][j] - path[i - 1][j], (b[j] - a[j]) / 8.0, 1e-12);
    EXPECT_THROW(interpolate(a, b, 1), std::invalid_argument);
    EXPECT_THROW(interpolate(a, Vec{1.0}, 3), std::invalid_argument);
}

TEST(Projection, PlanarDataKeepsPairwiseDistances) {
    Rng rng(3);
    // Orthonormal pair in R^6.
    const Vec u{0.6, 0.0, 0.8, 0.0, 0.0, 0.0};
    const Vec v{0.0, 1.0 / std::sqrt(2.0), 0.0, 0.0, 1.0 / std::sqrt(2.0), 0.0};
    std::vector<Vec> pts;
    for (int i = 0; i < 30; ++i) {
        const double s = rng.uniform(-2, 2), t = rng.uniform(-1, 1);
        Vec p(6, 0.5);
        for (std::size_t j = 0; j < 6; ++j) p[j] += s * u[j] + t * v[j];
        pts.push_back(p);
    }
    pts.push_back(pts[4]);
    const auto proj = project_2d(pts);
    ASSERT_EQ(proj.size(), pts.size());
    EXPECT_EQ(proj.back().x, proj[4].x);
    EXPECT_EQ(proj.back().y, proj[4].y);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            double d = 0;
            for (std::size_t k = 0; k < 6; ++k) d += (pts[i][k] - pts[j][k]) * (pts[i][k] - pts[j][k]);
            d = std::sqrt(d);
            const double e = std::hypot(proj[i].x - proj[j].x, proj[i].y - proj[j].y);
            if (d > 0) EXPECT_NEAR(e / d, 1.0, 1e-6);
        }
    EXPECT_THROW(project_2d({Vec{1, 2}, Vec{3, 4}}), std::invalid_argument);
}

TEST(ConceptFile, RoundTrip) {
    test::TempDir dir("concept");
    const auto c = fitted_pair();
    save_concept(c, dir / "toy.concept");
    const auto back = load_concept(dir / "toy.concept");
    EXPECT_EQ(back.name, c.name);
    EXPECT_EQ(back.direction, c.direction);
    EXPECT_EQ(back.bias, c.bias);
    EXPECT_EQ(back.spread, c.spread);
    EXPECT_EQ(back.metrics.at("train").accuracy, c.metrics.at("train").accuracy);
    EXPECT_THROW(load_concept(dir / "missing.concept"), std::runtime_error);
}

TEST(Spearman, HandCasesAndTies) {
    EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
    EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
    EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {1, 3, 2}), 0.5);
    // Ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4): Pearson on ranks = 0.9486832980505138.
    EXPECT_NEAR(spearman({1, 2, 3, 4}, {5, 7, 7, 9}), 0.9486832980505138, 1e-12);
    EXPECT_EQ(spearman({1, 2, 3}, {4, 4, 4}), 0.0);
}
