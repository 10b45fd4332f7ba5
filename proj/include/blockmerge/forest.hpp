#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "blockmerge/errors.hpp"
#include "blockmerge/rng.hpp"

namespace blockmerge {

struct ForestConfig {
    int trees = 100;
    int min_leaf = 1;
    double feature_frac = 1.0 / 3.0;
    std::uint64_t seed = 0;
};

inline constexpr double kSigmaFloor = 1e-6;

struct Posterior {
    double mean = 0.0;
    double sigma = kSigmaFloor;
};

namespace detail {

// Flat binary regression tree. Internal nodes: feature/threshold/children;
// leaves: left < 0 and value = mean of their targets.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

class RegressionTree {
public:
    void fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
             const std::vector<std::uint32_t>& sample_idx, int min_leaf, int features_per_split,
             SplitMix64& rng) {
        nodes_.clear();
        build(x, y, sample_idx, min_leaf, features_per_split, rng);
    }

    double predict(const std::vector<double>& s) const {
        int node = 0;
        while (nodes_[node].left >= 0)
            node = s[nodes_[node].feature] <= nodes_[node].threshold ? nodes_[node].left
                                                                     : nodes_[node].right;
        return nodes_[node].value;
    }

private:
    int build(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
              const std::vector<std::uint32_t>& idx, int min_leaf, int features_per_split,
              SplitMix64& rng) {
        const int node_id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();

        double sum = 0.0, sum_sq = 0.0;
        for (auto i : idx) {
            sum += y[i];
            sum_sq += y[i] * y[i];
        }
        const double n = static_cast<double>(idx.size());
        const double mean = sum / n;
        const double sse = sum_sq - sum * sum / n;
        nodes_[node_id].value = mean;
        if (idx.size() <= static_cast<std::size_t>(min_leaf) ||
            sse <= 1e-12 * std::max(1.0, sum_sq))
            return node_id;

        const int d = static_cast<int>(x[idx[0]].size());
        std::vector<int> features(d);
        std::iota(features.begin(), features.end(), 0);
        // partial Fisher-Yates: the first features_per_split entries are the candidates
        const int f_count = std::min(features_per_split, d);
        for (int i = 0; i < f_count; ++i) {
            const int j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(d - i)));
            std::swap(features[i], features[j]);
        }

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_score = -1.0;  // weighted SSE reduction; must be > 0 to split
        std::vector<std::pair<double, std::uint32_t>> ordered(idx.size());
        for (int fi = 0; fi < f_count; ++fi) {
            const int f = features[fi];
            for (std::size_t k = 0; k < idx.size(); ++k)
                ordered[k] = {x[idx[k]][f], idx[k]};
            std::sort(ordered.begin(), ordered.end());
            double left_sum = 0.0, left_sq = 0.0;
            for (std::size_t k = 0; k + 1 < ordered.size(); ++k) {
                const double yi = y[ordered[k].second];
                left_sum += yi;
                left_sq += yi * yi;
                if (ordered[k].first == ordered[k + 1].first) continue;  // no boundary here
                const double nl = static_cast<double>(k + 1);
                const double nr = n - nl;
                const double right_sum = sum - left_sum;
                const double right_sq = sum_sq - left_sq;
                const double sse_l = left_sq - left_sum * left_sum / nl;
                const double sse_r = right_sq - right_sum * right_sum / nr;
                const double score = sse - sse_l - sse_r;
                if (score > best_score) {
                    best_score = score;
                    best_feature = f;
                    best_threshold = 0.5 * (ordered[k].first + ordered[k + 1].first);
                }
            }
        }
        if (best_feature < 0 || best_score <= 0.0) return node_id;  // nothing separable

        std::vector<std::uint32_t> left_idx, right_idx;
        for (auto i : idx)
            (x[i][best_feature] <= best_threshold ? left_idx : right_idx).push_back(i);
        if (left_idx.empty() || right_idx.empty()) return node_id;

        nodes_[node_id].feature = best_feature;
        nodes_[node_id].threshold = best_threshold;
        const int l = build(x, y, left_idx, min_leaf, features_per_split, rng);
        nodes_[node_id].left = l;
        const int r = build(x, y, right_idx, min_leaf, features_per_split, rng);
        nodes_[node_id].right = r;
        return node_id;
    }

    std::vector<TreeNode> nodes_;
};

}  // namespace detail

// Random-forest regression surrogate. Each tree sees a bootstrap resample
// and a fresh random feature subset per split; the ensemble spread supplies
// the uncertainty estimate. Deterministic given (training set, seed).
class SurrogateForest {
public:
    SurrogateForest() = default;

    void fit(const std::vector<std::vector<double>>& train_x, const std::vector<double>& train_y,
             const ForestConfig& config = {}) {
        if (train_x.empty() || train_x.size() != train_y.size())
            throw EmptyTrainingSet("forest requires a non-empty aligned training set");
        config_ = config;
        const int d = static_cast<int>(train_x[0].size());
        const int features_per_split =
            std::max(1, static_cast<int>(std::ceil(config.feature_frac * d)));
        trees_.assign(config.trees, {});
        const std::uint32_t n = static_cast<std::uint32_t>(train_x.size());
        for (int t = 0; t < config.trees; ++t) {
            SplitMix64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(t)));
            std::vector<std::uint32_t> boot(n);
            for (auto& i : boot) i = static_cast<std::uint32_t>(rng.next_below(n));
            std::sort(boot.begin(), boot.end());
            trees_[t].fit(train_x, train_y, boot, config.min_leaf, features_per_split, rng);
        }
        fitted_ = true;
    }

    Posterior predict(const std::vector<double>& s) const {
        if (!fitted_) throw NotFitted("forest_predict called before forest_fit");
        double sum = 0.0;
        std::vector<double> preds(trees_.size());
        for (std::size_t t = 0; t < trees_.size(); ++t) {
            preds[t] = trees_[t].predict(s);
            sum += preds[t];
        }
        const double mean = sum / static_cast<double>(trees_.size());
        double var = 0.0;
        if (trees_.size() > 1) {
            for (double p : preds) var += (p - mean) * (p - mean);
            var /= static_cast<double>(trees_.size() - 1);
        }
        return Posterior{mean, std::max(std::sqrt(var), kSigmaFloor)};
    }

    bool fitted() const { return fitted_; }

private:
    std::vector<detail::RegressionTree> trees_;
    ForestConfig config_;
    bool fitted_ = false;
};

inline SurrogateForest forest_fit(const std::vector<std::vector<double>>& train_x,
                                  const std::vector<double>& train_y,
                                  const ForestConfig& config = {}) {
    SurrogateForest f;
    f.fit(train_x, train_y, config);
    return f;
}

inline Posterior forest_predict(const SurrogateForest& f, const std::vector<double>& s) {
    return f.predict(s);
}

}  // namespace blockmerge
