#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "blockmerge/acquisition.hpp"
#include "blockmerge/evaluation.hpp"
#include "blockmerge/forest.hpp"
#include "blockmerge/merge.hpp"
#include "blockmerge/search_space.hpp"
#include "blockmerge/segment.hpp"
#include "blockmerge/sobol.hpp"
#include "blockmerge/tensor_file.hpp"

namespace blockmerge {

struct SearchBudget {
    int init = 20;
    int iters = 200;
    int pool = 512;
};

// Legacy of the 19/1 initialization split: fit the first forest on all but
// the last initial sample and reuse that sample to seed the loop, or fit on
// everything and acquire the first loop sample instead.
enum class InitSplit { HoldOutLast, FitAll };

struct TrialRecord {
    MergeConfigSample sample;
    double ap_a = 0.0;
    double ap_b = 0.0;
    double f = 0.0;
    int iteration = 0;  // 1-based across init + loop
    double wall_time_s = 0.0;
};

struct SearchResult {
    TrialRecord best;
    std::vector<TrialRecord> history;
    std::string merged_model_path;
};

inline std::uint64_t content_hash(const TensorMap& m) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix_bytes = [&h](const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& [name, t] : m) {
        mix_bytes(name.data(), name.size());
        const auto dt = static_cast<std::uint8_t>(t.dtype);
        mix_bytes(&dt, 1);
        mix_bytes(t.shape.data(), t.shape.size() * sizeof(std::uint64_t));
        mix_bytes(t.data.data(), t.data.size() * sizeof(float));
    }
    return h;
}

// Merges every block independently with its per-block parameters and
// reassembles the result in source parameter order.
inline TensorMap apply_config(const MergeConfigSample& sample, const TensorMap& a,
                              const TensorMap& b, const TensorMap* base,
                              const BlockPartition& partition) {
    if (sample.blocks.size() != partition.blocks.size())
        throw UsageError("merge configuration has " + std::to_string(sample.blocks.size()) +
                         " block entries but the partition has " +
                         std::to_string(partition.blocks.size()));
    std::unordered_map<std::string, Tensor> merged;
    for (std::size_t k = 0; k < partition.blocks.size(); ++k) {
        const auto& names = partition.blocks[k].param_names;
        const BlockChoice& choice = sample.blocks[k];
        MergeParams params{choice.technique, choice.weight, choice.density,
                           mix_seed(sample.seed, k)};
        TensorMap slice_a = slice(a, names);
        TensorMap slice_b = slice(b, names);
        std::optional<TensorMap> slice_base;
        if (base != nullptr) slice_base = slice(*base, names);
        TensorMap out =
            merge_block(slice_a, slice_b, slice_base ? &*slice_base : nullptr, params);
        for (auto& [name, t] : out) merged[name] = std::move(t);
    }
    TensorMap result;
    for (const auto& [name, t] : a) {
        auto it = merged.find(name);
        if (it == merged.end())
            throw DataError("partition does not cover parameter: " + name);
        result.add(name, std::move(it->second));
    }
    result.metadata() = a.metadata();
    return result;
}

struct EvalOutcome {
    double ap_a = 0.0;
    double ap_b = 0.0;
    double f = 0.0;
};

// Evaluates merged candidates against both task evaluators, with a content
// hash cache so configurations that produce identical bytes (e.g. samples
// differing only in an ignored density) reuse their losses.
class TrialRunner {
public:
    TrialRunner(Evaluator eval_a, Evaluator eval_b, double loss_source_a, double loss_source_b,
                std::string scratch_path)
        : eval_a_(std::move(eval_a)),
          eval_b_(std::move(eval_b)),
          loss_source_a_(loss_source_a),
          loss_source_b_(loss_source_b),
          scratch_path_(std::move(scratch_path)) {
        if (eval_a_.kind == Evaluator::Kind::Builtin) data_a_ = read_dataset(eval_a_.dataset_path);
        if (eval_b_.kind == Evaluator::Kind::Builtin) data_b_ = read_dataset(eval_b_.dataset_path);
    }

    ~TrialRunner() {
        std::error_code ec;
        std::filesystem::remove(scratch_path_, ec);
    }

    EvalOutcome evaluate(const TensorMap& merged) {
        const std::uint64_t h = content_hash(merged);
        if (auto it = cache_.find(h); it != cache_.end()) return it->second;

        bool scratch_written = false;
        auto loss_for = [&](const Evaluator& e, const Dataset& d) {
            if (e.kind == Evaluator::Kind::Builtin) return evaluate_loss_in_memory(e, merged, d);
            if (!scratch_written) {
                write_checkpoint(merged, scratch_path_);
                scratch_written = true;
            }
            return evaluate_loss(e, scratch_path_, e.dataset_path);
        };
        EvalOutcome out;
        const double loss_a = loss_for(eval_a_, data_a_);
        const double loss_b = loss_for(eval_b_, data_b_);
        out.ap_a = approximated_preservation(loss_source_a_, loss_a);
        out.ap_b = approximated_preservation(loss_source_b_, loss_b);
        out.f = objective_f(out.ap_a, out.ap_b);
        cache_.emplace(h, out);
        return out;
    }

    double loss_source_a() const { return loss_source_a_; }
    double loss_source_b() const { return loss_source_b_; }

private:
    Evaluator eval_a_;
    Evaluator eval_b_;
    Dataset data_a_;
    Dataset data_b_;
    double loss_source_a_;
    double loss_source_b_;
    std::string scratch_path_;
    std::unordered_map<std::uint64_t, EvalOutcome> cache_;
};

// Shortest round-trip decimal form; pinned so that history files are
// byte-stable across runs.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline void write_history_csv(const std::vector<TrialRecord>& history, std::size_t block_count,
                              const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoFailure("cannot open for writing: " + path);
    f << "iteration,ap_a,ap_b,f";
    for (std::size_t k = 0; k < block_count; ++k)
        f << ",technique_" << k << ",weight_" << k << ",density_" << k;
    f << "\n";
    for (const auto& r : history) {
        f << r.iteration << ',' << format_double(r.ap_a) << ',' << format_double(r.ap_b) << ','
          << format_double(r.f);
        for (const auto& b : r.sample.blocks)
            f << ',' << technique_name(b.technique) << ',' << format_double(b.weight) << ','
              << format_double(b.density);
        f << "\n";
    }
}

inline nlohmann::json trial_to_json(const TrialRecord& r) {
    return {{"iteration", r.iteration}, {"sample", sample_to_json(r.sample)},
            {"ap_a", r.ap_a},           {"ap_b", r.ap_b},
            {"f", r.f},                 {"wall_time_s", r.wall_time_s}};
}

struct SearchOutputs {
    std::string out_dir;
    bool keep_trials = false;
};

namespace detail {

inline void persist_history(const std::vector<TrialRecord>& history, std::size_t block_count,
                            const TrialRecord* best, const SearchOutputs& outputs,
                            double loss_source_a, double loss_source_b) {
    namespace fs = std::filesystem;
    fs::create_directories(outputs.out_dir);
    const fs::path dir(outputs.out_dir);
    write_history_csv(history, block_count, (dir / "history.csv").string());
    nlohmann::json report;
    report["source_losses"] = {{"a", loss_source_a}, {"b", loss_source_b}};
    report["trials"] = nlohmann::json::array();
    for (const auto& r : history) report["trials"].push_back(trial_to_json(r));
    if (best != nullptr) report["best"] = trial_to_json(*best);
    std::ofstream f(dir / "report.json");
    f << report.dump(2) << "\n";
    if (best != nullptr) {
        std::ofstream recipe(dir / "recipe.json");
        recipe << sample_to_json(best->sample).dump(2) << "\n";
    }
}

}  // namespace detail

// The full loop: Sobol initialization, forest fit, LEI-driven selection,
// refit after every evaluation. Returns the complete trial history and the
// best configuration found within the budget.
inline SearchResult run_search(const TensorMap& model_a, const TensorMap& model_b,
                               const TensorMap* base, const BlockPartition& partition,
                               TrialRunner& runner, const SearchBudget& budget, std::uint64_t seed,
                               InitSplit split = InitSplit::HoldOutLast,
                               const SearchOutputs* outputs = nullptr,
                               const SearchSpace* space_override = nullptr) {
    if (budget.init < 2) throw UsageError("search needs at least two initialization samples");
    SearchSpace space;
    if (space_override != nullptr) space = *space_override;
    space.block_count = partition.blocks.size();
    if (base == nullptr) space.techniques = {Technique::Linear};

    SearchResult result;
    std::vector<EncodedSample> train_x;
    std::vector<double> train_y;

    auto run_trial = [&](const MergeConfigSample& sample, int iteration) {
        const auto t0 = std::chrono::steady_clock::now();
        const TensorMap merged = apply_config(sample, model_a, model_b, base, partition);
        const EvalOutcome out = runner.evaluate(merged);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        TrialRecord rec{sample, out.ap_a, out.ap_b, out.f, iteration, secs};
        if (outputs != nullptr && outputs->keep_trials) {
            namespace fs = std::filesystem;
            fs::create_directories(outputs->out_dir);
            write_checkpoint(merged, (fs::path(outputs->out_dir) /
                                      ("trial_" + std::to_string(iteration) + ".bt"))
                                         .string());
        }
        result.history.push_back(rec);
        train_x.push_back(encode_sample(sample, space));
        train_y.push_back(out.f);
        if (result.history.size() == 1 || rec.f > result.best.f) result.best = rec;
        return rec;
    };

    ForestConfig forest_config;
    forest_config.seed = mix_seed(seed, "forest");
    SurrogateForest forest;

    try {
        // Initialization: quasi-random coverage of the joint block space.
        SobolSequence sobol(static_cast<int>(space.dim()));
        std::vector<MergeConfigSample> init_samples;
        std::vector<double> point;
        for (int i = 0; i < budget.init; ++i) {
            sobol.next(point);
            MergeConfigSample s = sample_from_unit_point(point, space);
            s.seed = mix_seed(seed, static_cast<std::uint64_t>(i + 1));
            init_samples.push_back(std::move(s));
        }
        for (int i = 0; i < budget.init; ++i) run_trial(init_samples[i], i + 1);

        // First surrogate: hold the last initial sample out of the training
        // set and reuse it as s_1, or fit on everything and acquire s_1.
        MergeConfigSample next;
        if (split == InitSplit::HoldOutLast) {
            std::vector<EncodedSample> x(train_x.begin(), train_x.end() - 1);
            std::vector<double> y(train_y.begin(), train_y.end() - 1);
            forest.fit(x, y, forest_config);
            next = init_samples.back();
        } else {
            forest.fit(train_x, train_y, forest_config);
            next = select_next(forest, space, result.best.f, budget.pool, mix_seed(seed, "select-0"));
            next.seed = mix_seed(seed, static_cast<std::uint64_t>(budget.init + 1));
        }

        for (int t = 1; t <= budget.iters; ++t) {
            run_trial(next, budget.init + t);
            forest.fit(train_x, train_y, forest_config);
            next = select_next(forest, space, result.best.f, budget.pool,
                               mix_seed(seed, "select-" + std::to_string(t)));
            next.seed = mix_seed(seed, static_cast<std::uint64_t>(budget.init + t + 1));
        }
    } catch (const EvaluatorError&) {
        if (outputs != nullptr)
            detail::persist_history(result.history, space.block_count,
                                    result.history.empty() ? nullptr : &result.best, *outputs,
                                    runner.loss_source_a(), runner.loss_source_b());
        throw;
    }

    if (outputs != nullptr) {
        namespace fs = std::filesystem;
        fs::create_directories(outputs->out_dir);
        const TensorMap merged =
            apply_config(result.best.sample, model_a, model_b, base, partition);
        result.merged_model_path = (fs::path(outputs->out_dir) / "merged.bt").string();
        write_checkpoint(merged, result.merged_model_path);
        detail::persist_history(result.history, space.block_count, &result.best, *outputs,
                                runner.loss_source_a(), runner.loss_source_b());
    }
    return result;
}

// Whole-model search without segmentation (the ablation arm).
inline SearchResult run_ablation_whole_model(const TensorMap& model_a, const TensorMap& model_b,
                                             const TensorMap* base, TrialRunner& runner,
                                             const SearchBudget& budget, std::uint64_t seed,
                                             InitSplit split = InitSplit::HoldOutLast,
                                             const SearchOutputs* outputs = nullptr) {
    const BlockPartition whole = whole_model_partition(model_a);
    return run_search(model_a, model_b, base, whole, runner, budget, seed, split, outputs);
}

// One whole-model merge at fixed hyperparameters; evaluation is optional.
inline TensorMap run_fixed(const MergeParams& params, const TensorMap& model_a,
                           const TensorMap& model_b, const TensorMap* base,
                           TrialRunner* runner = nullptr, EvalOutcome* outcome = nullptr) {
    TensorMap merged = merge_block(model_a, model_b, base, params);
    if (runner != nullptr && outcome != nullptr) *outcome = runner->evaluate(merged);
    return merged;
}

// Exhaustive hyperparameter sweep at the whole-model level: weight 0..1
// step 0.1 for the weight-only techniques, a 6x6 weight/density grid for
// the density techniques.
inline std::vector<TrialRecord> run_grid(Technique technique, const TensorMap& model_a,
                                         const TensorMap& model_b, const TensorMap* base,
                                         TrialRunner& runner, std::uint64_t seed) {
    std::vector<double> weights;
    std::vector<double> densities;
    if (technique_uses_density(technique)) {
        for (int i = 0; i <= 5; ++i) weights.push_back(static_cast<double>(i) / 5.0);
        for (int i = 5; i <= 10; ++i) densities.push_back(static_cast<double>(i) / 10.0);
    } else {
        for (int i = 0; i <= 10; ++i) weights.push_back(static_cast<double>(i) / 10.0);
        densities.push_back(1.0);
    }
    std::vector<TrialRecord> records;
    const BlockPartition whole = whole_model_partition(model_a);
    int iteration = 0;
    for (double w : weights)
        for (double d : densities) {
            ++iteration;
            MergeConfigSample sample;
            sample.blocks = {BlockChoice{technique, w, d}};
            sample.seed = mix_seed(seed, static_cast<std::uint64_t>(iteration));
            const TensorMap merged = apply_config(sample, model_a, model_b, base, whole);
            const EvalOutcome out = runner.evaluate(merged);
            records.push_back(TrialRecord{sample, out.ap_a, out.ap_b, out.f, iteration, 0.0});
        }
    return records;
}

}  // namespace blockmerge
