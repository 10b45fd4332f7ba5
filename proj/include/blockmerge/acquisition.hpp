#pragma once

#include <cmath>
#include <cstdint>

#include "blockmerge/forest.hpp"
#include "blockmerge/rng.hpp"
#include "blockmerge/search_space.hpp"

namespace blockmerge {

// LEI never returns less than this; corresponds to an EI on the order of
// the smallest positive doubles.
inline constexpr double kLeiFloor = -690.0;
inline constexpr double kDefaultXi = 0.01;

namespace detail {

inline double norm_pdf(double z) { return std::exp(-0.5 * z * z) * 0.3989422804014327; }

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z * 0.7071067811865476); }

}  // namespace detail

// log of the classic Expected Improvement under a maximization framing:
//   z = (mean - f_best - xi) / sigma,  EI = sigma * (z * Phi(z) + phi(z)).
// For z below -6 the direct product underflows long before the log, so the
// tail is evaluated through the asymptotic expansion of the Mills ratio:
//   z*Phi(z) + phi(z) = phi(z) * (1/z^2 - 3/z^4 + 15/z^6 - 105/z^8 + ...).
inline double log_expected_improvement(const Posterior& p, double f_best, double xi = kDefaultXi) {
    const double sigma = p.sigma;
    const double z = (p.mean - f_best - xi) / sigma;
    double lei;
    if (z < -6.0) {
        const double inv_z2 = 1.0 / (z * z);
        const double series = inv_z2 * (1.0 + inv_z2 * (-3.0 + inv_z2 * (15.0 + inv_z2 * -105.0)));
        // log(sigma * phi(z) * series)
        lei = std::log(sigma) - 0.5 * z * z - 0.9189385332046727 + std::log(series);
    } else {
        const double ei = sigma * (z * detail::norm_cdf(z) + detail::norm_pdf(z));
        lei = ei > 0.0 ? std::log(ei) : kLeiFloor;
    }
    return std::max(lei, kLeiFloor);
}

// Scores a pool of uniform-random candidates under the surrogate and
// returns the LEI maximizer; ties keep the earliest draw.
inline MergeConfigSample select_next(const SurrogateForest& forest, const SearchSpace& space,
                                     double f_best, int pool, std::uint64_t seed,
                                     double xi = kDefaultXi) {
    if (!forest.fitted()) throw NotFitted("select_next requires a fitted forest");
    SplitMix64 rng(seed);
    MergeConfigSample best_sample;
    double best_score = 0.0;
    for (int i = 0; i < pool; ++i) {
        MergeConfigSample candidate = draw_random_sample(space, rng);
        const Posterior post = forest.predict(encode_sample(candidate, space));
        const double score = log_expected_improvement(post, f_best, xi);
        if (i == 0 || score > best_score) {
            best_score = score;
            best_sample = std::move(candidate);
        }
    }
    return best_sample;
}

}  // namespace blockmerge
