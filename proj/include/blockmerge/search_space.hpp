#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blockmerge/merge.hpp"
#include "blockmerge/rng.hpp"
#include "blockmerge/segment.hpp"
#include "json.hpp"

namespace blockmerge {

// Per-block (technique, weight, density) over K blocks: the joint space the
// search explores. Encoded form per block: T one-hot technique indicators,
// then weight, then density.
struct SearchSpace {
    std::size_t block_count = 1;
    std::vector<Technique> techniques{Technique::Linear, Technique::TaskArithmetic, Technique::Ties,
                                      Technique::DareLinear, Technique::DareTies};

    std::size_t dim() const { return block_count * (techniques.size() + 2); }
};

struct BlockChoice {
    Technique technique = Technique::Linear;
    double weight = 0.5;
    double density = 1.0;
};

struct MergeConfigSample {
    std::vector<BlockChoice> blocks;
    std::uint64_t seed = 0;
};

using EncodedSample = std::vector<double>;

inline EncodedSample encode_sample(const MergeConfigSample& s, const SearchSpace& space) {
    const std::size_t t_count = space.techniques.size();
    EncodedSample x;
    x.reserve(space.dim());
    for (const auto& b : s.blocks) {
        std::size_t ti = 0;
        for (; ti < t_count; ++ti)
            if (space.techniques[ti] == b.technique) break;
        for (std::size_t j = 0; j < t_count; ++j) x.push_back(j == ti ? 1.0 : 0.0);
        x.push_back(b.weight);
        x.push_back(b.density);
    }
    return x;
}

// Keeps unit-cube densities away from 0: u maps to eps + (1-eps)*u.
inline constexpr double kDensityEpsilon = 0.05;

// Maps one point of the unit hypercube onto a configuration sample: per
// block, the largest of the first T coordinates picks the technique (ties:
// lowest index), then weight, then density rescaled away from zero.
inline MergeConfigSample sample_from_unit_point(const std::vector<double>& u,
                                                const SearchSpace& space) {
    const std::size_t t_count = space.techniques.size();
    MergeConfigSample s;
    s.blocks.resize(space.block_count);
    std::size_t at = 0;
    for (auto& b : s.blocks) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < t_count; ++j)
            if (u[at + j] > u[at + best]) best = j;
        b.technique = space.techniques[best];
        at += t_count;
        b.weight = u[at++];
        b.density = kDensityEpsilon + (1.0 - kDensityEpsilon) * u[at++];
    }
    return s;
}

// Uniform-random valid sample: technique uniform over the registered set,
// weight ~ U[0,1], density ~ U(0,1].
inline MergeConfigSample draw_random_sample(const SearchSpace& space, SplitMix64& rng) {
    MergeConfigSample s;
    s.blocks.resize(space.block_count);
    for (auto& b : s.blocks) {
        b.technique = space.techniques[rng.next_below(space.techniques.size())];
        b.weight = rng.next_unit();
        b.density = rng.next_unit_open_low();
    }
    return s;
}

inline nlohmann::json sample_to_json(const MergeConfigSample& s) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : s.blocks)
        blocks.push_back({{"technique", technique_name(b.technique)},
                          {"weight", b.weight},
                          {"density", b.density}});
    return {{"blocks", blocks}, {"seed", s.seed}};
}

inline MergeConfigSample sample_from_json(const nlohmann::json& j) {
    MergeConfigSample s;
    for (const auto& b : j.at("blocks")) {
        BlockChoice c;
        c.technique = technique_from_name(b.at("technique").get<std::string>());
        c.weight = b.at("weight").get<double>();
        c.density = b.at("density").get<double>();
        s.blocks.push_back(c);
    }
    s.seed = j.value("seed", std::uint64_t{0});
    return s;
}

}  // namespace blockmerge
