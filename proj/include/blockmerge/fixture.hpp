#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "blockmerge/rng.hpp"
#include "blockmerge/segment.hpp"
#include "blockmerge/tensor_file.hpp"
#include "blockmerge/toy_model.hpp"

namespace blockmerge {

struct FixtureOptions {
    double delta_scale = 1.0;   // 0 collapses both fine-tuned variants onto the base
    std::size_t samples = 256;  // validation-set size per task
};

// Desk-scale stand-in for a pair of task-specific source models: a shared
// base network, two variants with deltas concentrated on overlapping but
// differently weighted parameter subsets, and one labeled validation set
// per variant.
struct TaskPairFixture {
    ToyModelSpec spec;
    TensorMap base;
    TensorMap model_a;
    TensorMap model_b;
    Dataset data_a;
    Dataset data_b;
    ShapeTrace trace;
};

namespace detail {

inline Tensor gaussian_tensor(std::vector<std::uint64_t> shape, float scale, SplitMix64& rng) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.resize(t.numel());
    for (auto& v : t.data) v = scale * static_cast<float>(rng.next_gaussian());
    return t;
}

inline TensorMap add_delta(const TensorMap& base, const TensorMap& delta) {
    TensorMap out;
    for (const auto& [name, t] : base) {
        Tensor r = t;
        const Tensor& d = delta.at(name);
        for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] += d.data[i];
        out.add(name, std::move(r));
    }
    return out;
}

inline Dataset make_labeled_dataset(const ToyModelSpec& spec, const TensorMap& model,
                                    std::size_t samples, SplitMix64& rng) {
    std::uint64_t sample_size = 1;
    for (auto e : spec.input_shape) sample_size *= e;
    Dataset d;
    d.inputs.shape = {samples};
    for (auto e : spec.input_shape) d.inputs.shape.push_back(e);
    d.inputs.data.resize(samples * sample_size);
    for (auto& v : d.inputs.data) v = static_cast<float>(rng.next_gaussian());

    d.targets.shape = {samples};
    d.targets.data.resize(samples);
    std::vector<float> sample(sample_size);
    for (std::size_t i = 0; i < samples; ++i) {
        std::copy(d.inputs.data.begin() + i * sample_size,
                  d.inputs.data.begin() + (i + 1) * sample_size, sample.begin());
        const std::vector<float> logits = forward_sample(spec, model, sample);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.size(); ++c)
            if (logits[c] > logits[best]) best = c;
        d.targets.data[i] = static_cast<float>(best);
    }
    return d;
}

}  // namespace detail

// conv(3->12,k3) -> relu -> conv(12->16,k3) -> relu -> flatten -> linear(576->10),
// cross-entropy over 10 classes, inputs [3,10,10]. ~7.9k parameters.
inline ToyModelSpec fixture_model_spec() {
    ToyModelSpec spec;
    spec.layers = {
        {LayerKind::Conv2dValid, "conv1.weight", "conv1.bias"},
        {LayerKind::Relu, "", ""},
        {LayerKind::Conv2dValid, "conv2.weight", "conv2.bias"},
        {LayerKind::Relu, "", ""},
        {LayerKind::Flatten, "", ""},
        {LayerKind::Linear, "fc.weight", "fc.bias"},
    };
    spec.loss = LossKind::CrossEntropy;
    spec.input_shape = {3, 10, 10};
    return spec;
}

inline TaskPairFixture generate_task_pair(std::uint64_t seed, const FixtureOptions& opt = {}) {
    const ToyModelSpec spec = fixture_model_spec();

    for (std::uint64_t attempt = 0;; ++attempt) {
        const std::uint64_t s = mix_seed(seed, attempt);
        TaskPairFixture fx;
        fx.spec = spec;

        SplitMix64 rng(mix_seed(s, "base"));
        fx.base.add("conv1.weight", detail::gaussian_tensor({12, 3, 3, 3}, 0.27f, rng));
        fx.base.add("conv1.bias", detail::gaussian_tensor({12}, 0.05f, rng));
        fx.base.add("conv2.weight", detail::gaussian_tensor({16, 12, 3, 3}, 0.14f, rng));
        fx.base.add("conv2.bias", detail::gaussian_tensor({16}, 0.05f, rng));
        fx.base.add("fc.weight", detail::gaussian_tensor({10, 576}, 0.06f, rng));
        fx.base.add("fc.bias", detail::gaussian_tensor({10}, 0.05f, rng));

        // Task deltas: A leans on the first conv stage, B on the second;
        // both touch the classifier head.
        const float ds = static_cast<float>(opt.delta_scale);
        auto make_variant = [&](const char* tag, float conv1_f, float conv2_f, float fc_f) {
            SplitMix64 drng(mix_seed(s, tag));
            TensorMap delta;
            delta.add("conv1.weight",
                      detail::gaussian_tensor({12, 3, 3, 3}, ds * conv1_f * 0.27f, drng));
            delta.add("conv1.bias", detail::gaussian_tensor({12}, ds * conv1_f * 0.05f, drng));
            delta.add("conv2.weight",
                      detail::gaussian_tensor({16, 12, 3, 3}, ds * conv2_f * 0.14f, drng));
            delta.add("conv2.bias", detail::gaussian_tensor({16}, ds * conv2_f * 0.05f, drng));
            delta.add("fc.weight", detail::gaussian_tensor({10, 576}, ds * fc_f * 0.06f, drng));
            delta.add("fc.bias", detail::gaussian_tensor({10}, ds * fc_f * 0.05f, drng));
            return detail::add_delta(fx.base, delta);
        };
        fx.model_a = make_variant("delta-a", 0.8f, 0.1f, 0.5f);
        fx.model_b = make_variant("delta-b", 0.1f, 0.8f, 0.5f);

        SplitMix64 da_rng(mix_seed(s, "data-a"));
        SplitMix64 db_rng(mix_seed(s, "data-b"));
        fx.data_a = detail::make_labeled_dataset(spec, fx.model_a, opt.samples, da_rng);
        fx.data_b = detail::make_labeled_dataset(spec, fx.model_b, opt.samples, db_rng);

        fx.trace.steps = {
            {"conv1", {"conv1.weight", "conv1.bias"}, {8, 12, 8, 8}},
            {"conv2", {"conv2.weight", "conv2.bias"}, {8, 16, 6, 6}},
            {"flatten", {}, {8, 576}},
            {"fc", {"fc.weight", "fc.bias"}, {8, 10}},
        };

        if (opt.delta_scale == 0.0) return fx;  // degenerate: equal models, equal losses

        // Each variant must hold the edge on its own validation set.
        const double a_on_a = forward_loss(spec, fx.model_a, fx.data_a);
        const double b_on_a = forward_loss(spec, fx.model_b, fx.data_a);
        const double b_on_b = forward_loss(spec, fx.model_b, fx.data_b);
        const double a_on_b = forward_loss(spec, fx.model_a, fx.data_b);
        if (a_on_a < b_on_a && b_on_b < a_on_b) return fx;
        if (attempt > 16) throw DataError("fixture generation could not satisfy its postcondition");
    }
}

inline void write_fixture(const TaskPairFixture& fx, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path p(dir);
    write_checkpoint(fx.base, (p / "base.bt").string());
    write_checkpoint(fx.model_a, (p / "a.bt").string());
    write_checkpoint(fx.model_b, (p / "b.bt").string());
    write_dataset(fx.data_a, (p / "va.bt").string());
    write_dataset(fx.data_b, (p / "vb.bt").string());
    std::ofstream trace(p / "trace.json");
    trace << trace_to_json(fx.trace).dump(2) << "\n";
    std::ofstream toy(p / "toy.json");
    toy << toy_spec_to_json(fx.spec).dump(2) << "\n";
}

}  // namespace blockmerge
