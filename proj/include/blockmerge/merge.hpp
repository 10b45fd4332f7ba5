#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "blockmerge/rng.hpp"
#include "blockmerge/tensor.hpp"

namespace blockmerge {

enum class Technique : std::uint8_t { Linear, TaskArithmetic, Ties, DareLinear, DareTies };

inline constexpr int kTechniqueCount = 5;

inline const char* technique_name(Technique t) {
    switch (t) {
        case Technique::Linear: return "linear";
        case Technique::TaskArithmetic: return "task-arithmetic";
        case Technique::Ties: return "ties";
        case Technique::DareLinear: return "dare-linear";
        case Technique::DareTies: return "dare-ties";
    }
    return "?";
}

inline Technique technique_from_name(std::string s) {
    std::replace(s.begin(), s.end(), '_', '-');
    if (s == "linear") return Technique::Linear;
    if (s == "task-arithmetic" || s == "ta") return Technique::TaskArithmetic;
    if (s == "ties") return Technique::Ties;
    if (s == "dare-linear") return Technique::DareLinear;
    if (s == "dare-ties") return Technique::DareTies;
    throw UsageError("unknown merging technique: " + s);
}

inline bool technique_uses_density(Technique t) {
    return t == Technique::Ties || t == Technique::DareLinear || t == Technique::DareTies;
}

inline bool technique_needs_base(Technique t) { return t != Technique::Linear; }

// Elementwise difference against a shared base model.
struct TaskVector {
    TensorMap deltas;
};

struct MergeParams {
    Technique technique = Technique::Linear;
    double weight = 0.5;     // [0,1]; applies to model A, 1-weight to model B
    double density = 0.65;   // (0,1]; ignored by Linear and Task Arithmetic
    std::uint64_t seed = 0;  // drives DARE dropping
};

// All element arithmetic below is single-precision so that results are
// reproducible bit-for-bit against scalar reference loops.

inline TensorMap merge_linear(const TensorMap& a, const TensorMap& b, double weight) {
    require_same_signature(a, b, "merge_linear");
    const float w = static_cast<float>(weight);
    TensorMap out;
    for (const auto& [name, ta] : a) {
        const Tensor& tb = b.at(name);
        Tensor t;
        t.dtype = ta.dtype;
        t.shape = ta.shape;
        t.data.resize(ta.data.size());
        for (std::size_t i = 0; i < ta.data.size(); ++i)
            t.data[i] = w * ta.data[i] + (1.0f - w) * tb.data[i];
        out.add(name, std::move(t));
    }
    return out;
}

inline TaskVector compute_task_vector(const TensorMap& model, const TensorMap& base) {
    require_same_signature(model, base, "compute_task_vector");
    TaskVector tv;
    for (const auto& [name, tm] : model) {
        const Tensor& tb = base.at(name);
        Tensor t;
        t.dtype = tm.dtype;
        t.shape = tm.shape;
        t.data.resize(tm.data.size());
        for (std::size_t i = 0; i < tm.data.size(); ++i) t.data[i] = tm.data[i] - tb.data[i];
        tv.deltas.add(name, std::move(t));
    }
    return tv;
}

inline TensorMap merge_task_arithmetic(const TensorMap& a, const TensorMap& b,
                                       const TensorMap& base, double weight) {
    require_same_signature(a, base, "merge_task_arithmetic");
    require_same_signature(b, base, "merge_task_arithmetic");
    const float w = static_cast<float>(weight);
    TensorMap out;
    for (const auto& [name, tbase] : base) {
        const Tensor& ta = a.at(name);
        const Tensor& tb = b.at(name);
        Tensor t;
        t.dtype = tbase.dtype;
        t.shape = tbase.shape;
        t.data.resize(tbase.data.size());
        for (std::size_t i = 0; i < tbase.data.size(); ++i) {
            const float da = ta.data[i] - tbase.data[i];
            const float db = tb.data[i] - tbase.data[i];
            t.data[i] = tbase.data[i] + w * da + (1.0f - w) * db;
        }
        out.add(name, std::move(t));
    }
    return out;
}

// Number of elements kept by a trim at the given density.
inline std::size_t trim_keep_count(double density, std::size_t len) {
    if (len == 0) return 0;
    auto k = static_cast<std::size_t>(std::ceil(density * static_cast<double>(len)));
    return std::min(k, len);
}

// Keeps the ceil(density*len) largest-magnitude elements per tensor, zeroing
// the rest. Ties at the threshold keep the lower flat index.
inline TaskVector ties_trim(const TaskVector& tv, double density) {
    TaskVector out;
    for (const auto& [name, t] : tv.deltas) {
        const std::size_t n = t.data.size();
        const std::size_t keep = trim_keep_count(density, n);
        Tensor r;
        r.dtype = t.dtype;
        r.shape = t.shape;
        r.data.assign(n, 0.0f);
        std::vector<std::uint32_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0u);
        std::sort(idx.begin(), idx.end(), [&](std::uint32_t x, std::uint32_t y) {
            const float ax = std::fabs(t.data[x]);
            const float ay = std::fabs(t.data[y]);
            if (ax != ay) return ax > ay;
            return x < y;
        });
        for (std::size_t j = 0; j < keep; ++j) r.data[idx[j]] = t.data[idx[j]];
        out.deltas.add(name, std::move(r));
    }
    return out;
}

// Trim, elect a per-element sign from the unweighted sum of the trimmed
// deltas, average the values agreeing with it, and scale by weight.
inline TensorMap ties_merge(const TaskVector& tv_a, const TaskVector& tv_b, const TensorMap& base,
                            double weight, double density) {
    require_same_signature(tv_a.deltas, base, "ties_merge");
    require_same_signature(tv_b.deltas, base, "ties_merge");
    const TaskVector ta = ties_trim(tv_a, density);
    const TaskVector tb = ties_trim(tv_b, density);
    const float w = static_cast<float>(weight);
    TensorMap out;
    for (const auto& [name, tbase] : base) {
        const Tensor& da = ta.deltas.at(name);
        const Tensor& db = tb.deltas.at(name);
        Tensor t;
        t.dtype = tbase.dtype;
        t.shape = tbase.shape;
        t.data.resize(tbase.data.size());
        for (std::size_t i = 0; i < tbase.data.size(); ++i) {
            const float va = da.data[i];
            const float vb = db.data[i];
            const float sum = va + vb;
            float delta = 0.0f;
            if (sum != 0.0f) {
                const bool positive = sum > 0.0f;
                const bool a_agrees = positive ? va > 0.0f : va < 0.0f;
                const bool b_agrees = positive ? vb > 0.0f : vb < 0.0f;
                if (a_agrees && b_agrees) delta = (va + vb) / 2.0f;
                else if (a_agrees) delta = va;
                else if (b_agrees) delta = vb;
            }
            t.data[i] = tbase.data[i] + w * delta;
        }
        out.add(name, std::move(t));
    }
    return out;
}

// Drop each element with probability 1-density (counter RNG keyed by
// seed/name/index) and rescale survivors by 1/density.
inline TaskVector dare_preprocess(const TaskVector& tv, double density, std::uint64_t seed) {
    const float inv = 1.0f / static_cast<float>(density);
    TaskVector out;
    for (const auto& [name, t] : tv.deltas) {
        Tensor r;
        r.dtype = t.dtype;
        r.shape = t.shape;
        r.data.resize(t.data.size());
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const bool keep = counter_uniform(seed, name, i) < density;
            r.data[i] = keep ? t.data[i] * inv : 0.0f;
        }
        out.deltas.add(name, std::move(r));
    }
    return out;
}

inline TensorMap merge_dare_linear(const TensorMap& a, const TensorMap& b, const TensorMap& base,
                                   double weight, double density, std::uint64_t seed) {
    const TaskVector da = dare_preprocess(compute_task_vector(a, base), density, seed ^ 1);
    const TaskVector db = dare_preprocess(compute_task_vector(b, base), density, seed ^ 2);
    const float w = static_cast<float>(weight);
    TensorMap out;
    for (const auto& [name, tbase] : base) {
        const Tensor& ta = da.deltas.at(name);
        const Tensor& tb = db.deltas.at(name);
        Tensor t;
        t.dtype = tbase.dtype;
        t.shape = tbase.shape;
        t.data.resize(tbase.data.size());
        for (std::size_t i = 0; i < tbase.data.size(); ++i)
            t.data[i] = tbase.data[i] + w * ta.data[i] + (1.0f - w) * tb.data[i];
        out.add(name, std::move(t));
    }
    return out;
}

// DARE already sparsified, so the TIES trim stage runs at density 1.
inline TensorMap merge_dare_ties(const TensorMap& a, const TensorMap& b, const TensorMap& base,
                                 double weight, double density, std::uint64_t seed) {
    const TaskVector da = dare_preprocess(compute_task_vector(a, base), density, seed ^ 1);
    const TaskVector db = dare_preprocess(compute_task_vector(b, base), density, seed ^ 2);
    return ties_merge(da, db, base, weight, 1.0);
}

// Dispatch over the technique. Linear ignores base and density.
inline TensorMap merge_block(const TensorMap& a, const TensorMap& b, const TensorMap* base,
                             const MergeParams& params) {
    if (technique_needs_base(params.technique) && base == nullptr)
        throw MissingBase(std::string("technique ") + technique_name(params.technique) +
                          " requires a base model");
    switch (params.technique) {
        case Technique::Linear:
            return merge_linear(a, b, params.weight);
        case Technique::TaskArithmetic:
            return merge_task_arithmetic(a, b, *base, params.weight);
        case Technique::Ties:
            return ties_merge(compute_task_vector(a, *base), compute_task_vector(b, *base), *base,
                              params.weight, params.density);
        case Technique::DareLinear:
            return merge_dare_linear(a, b, *base, params.weight, params.density, params.seed);
        case Technique::DareTies:
            return merge_dare_ties(a, b, *base, params.weight, params.density, params.seed);
    }
    throw UsageError("unknown technique");
}

}  // namespace blockmerge
