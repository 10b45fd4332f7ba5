#pragma once

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "blockmerge/tensor_file.hpp"
#include "blockmerge/toy_model.hpp"
#include "json.hpp"

namespace blockmerge {

inline constexpr double kLossEpsilon = 1e-9;
inline constexpr double kApCap = 1e3;

// Loss ratio of Eq-style approximated preservation: source over merged,
// guarded against vanishing merged losses.
inline double approximated_preservation(double loss_source, double loss_merged) {
    if (!std::isfinite(loss_source) || !std::isfinite(loss_merged))
        throw NonFiniteLoss("approximated_preservation requires finite losses");
    const double ap = loss_source / std::max(loss_merged, kLossEpsilon);
    return std::min(std::max(ap, 0.0), kApCap);
}

// Harmonic mean of the two per-task preservations.
inline double objective_f(double ap_a, double ap_b) {
    if (ap_a < 0.0 || ap_b < 0.0) throw DataError("objective_f requires non-negative inputs");
    if (ap_a + ap_b == 0.0) return 0.0;
    return 2.0 * ap_a * ap_b / (ap_a + ap_b);
}

// Mean per-metric ratio of merged over source scores.
inline double preservation_rate(const std::vector<double>& merged,
                                const std::vector<double>& source) {
    if (merged.size() != source.size() || merged.empty())
        throw LengthMismatch("preservation_rate needs equal, non-empty metric lists");
    double sum = 0.0;
    for (std::size_t i = 0; i < merged.size(); ++i) {
        if (source[i] <= 0.0) throw NonPositiveSource("source metric must be positive");
        sum += merged[i] / source[i];
    }
    return sum / static_cast<double>(merged.size());
}

inline double preservation_discrepancy(double pr_a, double pr_b) { return std::fabs(pr_a - pr_b); }

// Loss oracle: either the builtin toy runtime or an external command
// invoked as `<command> <model_path> <dataset_path>` printing {"loss": x}.
struct Evaluator {
    enum class Kind { Builtin, External } kind = Kind::Builtin;
    ToyModelSpec spec;      // Builtin
    std::string command;    // External
    std::string dataset_path;
};

namespace detail {

struct CommandResult {
    int exit_code = -1;
    std::string output;
};

inline CommandResult run_command(const std::string& cmdline) {
    CommandResult r;
    FILE* pipe = popen(cmdline.c_str(), "r");
    if (!pipe) throw EvaluatorFailure("failed to launch evaluator: " + cmdline);
    char buf[4096];
    std::size_t got;
    while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) r.output.append(buf, got);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    out += "'";
    return out;
}

}  // namespace detail

inline double evaluate_loss(const Evaluator& e, const std::string& model_path,
                            const std::string& dataset_path) {
    double loss;
    if (e.kind == Evaluator::Kind::Builtin) {
        const TensorMap m = read_checkpoint(model_path);
        const Dataset d = read_dataset(dataset_path);
        loss = forward_loss(e.spec, m, d);
    } else {
        const std::string cmdline = e.command + " " + detail::shell_quote(model_path) + " " +
                                    detail::shell_quote(dataset_path);
        const detail::CommandResult r = detail::run_command(cmdline);
        if (r.exit_code != 0)
            throw EvaluatorFailure("evaluator exited with status " + std::to_string(r.exit_code) +
                                   ": " + cmdline);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(r.output);
        } catch (const nlohmann::json::exception&) {
            throw EvaluatorFailure("evaluator output is not a JSON object: " + cmdline);
        }
        if (!j.is_object() || !j.contains("loss") || !j["loss"].is_number())
            throw EvaluatorFailure("evaluator output must be {\"loss\": <number>}: " + cmdline);
        loss = j["loss"].get<double>();
    }
    if (!std::isfinite(loss)) throw NonFiniteLoss("evaluator returned a non-finite loss");
    return loss;
}

// In-memory fast path for the builtin evaluator; the search loop uses this
// to avoid serializing 200+ candidate models to disk.
inline double evaluate_loss_in_memory(const Evaluator& e, const TensorMap& model,
                                      const Dataset& dataset) {
    const double loss = forward_loss(e.spec, model, dataset);
    if (!std::isfinite(loss)) throw NonFiniteLoss("builtin evaluator produced a non-finite loss");
    return loss;
}

}  // namespace blockmerge
