#include <gtest/gtest.h>

#include <cmath>

#include "blockmerge/forest.hpp"
#include "blockmerge/rng.hpp"

using namespace blockmerge;

namespace {

std::vector<std::vector<double>> random_inputs(int n, int d, SplitMix64& rng) {
    std::vector<std::vector<double>> x(n, std::vector<double>(d));
    for (auto& row : x)
        for (auto& v : row) v = rng.next_unit();
    return x;
}

}  // namespace

TEST(Forest, ConstantTargetsPredictConstantWithFloorSigma) {
    SplitMix64 rng(1);
    const auto x = random_inputs(40, 3, rng);
    const std::vector<double> y(40, 2.5);
    const SurrogateForest f = forest_fit(x, y, {});
    for (int i = 0; i < 10; ++i) {
        const Posterior p = f.predict({rng.next_unit(), rng.next_unit(), rng.next_unit()});
        EXPECT_NEAR(p.mean, 2.5, 1e-9);
        EXPECT_DOUBLE_EQ(p.sigma, kSigmaFloor);
    }
}

TEST(Forest, SinglePointPredictsItsTarget) {
    const std::vector<std::vector<double>> x = {{0.3, 0.6}};
    const std::vector<double> y = {7.25};
    const SurrogateForest f = forest_fit(x, y, {});
    EXPECT_DOUBLE_EQ(f.predict({0.0, 0.0}).mean, 7.25);
    EXPECT_DOUBLE_EQ(f.predict({0.9, 0.9}).mean, 7.25);
}

TEST(Forest, FitsLinearFeatureAtTrainingPoints) {
    SplitMix64 rng(2);
    const int n = 200;
    const auto x = random_inputs(n, 3, rng);
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) y[i] = x[i][0];
    ForestConfig cfg;
    cfg.feature_frac = 1.0;  // full depth, all features
    cfg.min_leaf = 1;
    const SurrogateForest f = forest_fit(x, y, cfg);
    for (int i = 0; i < n; ++i) EXPECT_NEAR(f.predict(x[i]).mean, y[i], 0.05) << "point " << i;
}

TEST(Forest, DeterministicGivenSeed) {
    SplitMix64 rng(3);
    const auto x = random_inputs(60, 4, rng);
    std::vector<double> y(60);
    for (int i = 0; i < 60; ++i) y[i] = std::sin(6.0 * x[i][1]) + x[i][2];
    ForestConfig cfg;
    cfg.seed = 77;
    const SurrogateForest f1 = forest_fit(x, y, cfg);
    const SurrogateForest f2 = forest_fit(x, y, cfg);
    SplitMix64 qrng(4);
    for (int i = 0; i < 20; ++i) {
        const std::vector<double> q = {qrng.next_unit(), qrng.next_unit(), qrng.next_unit(),
                                       qrng.next_unit()};
        const Posterior p1 = f1.predict(q);
        const Posterior p2 = f2.predict(q);
        EXPECT_DOUBLE_EQ(p1.mean, p2.mean);
        EXPECT_DOUBLE_EQ(p1.sigma, p2.sigma);
    }
}

TEST(Forest, SigmaNeverBelowFloor) {
    SplitMix64 rng(5);
    const auto x = random_inputs(50, 2, rng);
    std::vector<double> y(50);
    for (int i = 0; i < 50; ++i) y[i] = rng.next_unit();
    const SurrogateForest f = forest_fit(x, y, {});
    for (int i = 0; i < 50; ++i) {
        const Posterior p = f.predict({rng.next_unit(), rng.next_unit()});
        EXPECT_GE(p.sigma, kSigmaFloor);
    }
}

TEST(Forest, ErrorPaths) {
    EXPECT_THROW(forest_fit({}, {}, {}), EmptyTrainingSet);
    EXPECT_THROW(forest_fit({{0.1}}, {1.0, 2.0}, {}), EmptyTrainingSet);
    SurrogateForest unfitted;
    EXPECT_THROW(unfitted.predict({0.5}), NotFitted);
}
