// blockmerge: merge task-specific checkpoints, segment models into blocks,
// and search per-block merge configurations.
//
// Machine-readable results (JSON/CSV) go to stdout; diagnostics to stderr.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 evaluator error.

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "blockmerge/blockmerge.hpp"

namespace bm = blockmerge;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SearchConfig {
    std::string model_a;
    std::string model_b;
    std::string base;  // empty -> no base model
    std::string trace;
    bm::Evaluator eval_a;
    bm::Evaluator eval_b;
    bm::SearchBudget budget;
    std::uint64_t seed = 0;
    std::string segment = "trace";
};

bm::Evaluator parse_evaluator(const json& j) {
    bm::Evaluator e;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "builtin") {
        e.kind = bm::Evaluator::Kind::Builtin;
        e.spec = bm::read_toy_spec(j.at("spec").get<std::string>());
    } else if (kind == "external") {
        e.kind = bm::Evaluator::Kind::External;
        e.command = j.at("command").get<std::string>();
    } else {
        throw bm::UsageError("evaluator kind must be 'builtin' or 'external', got: " + kind);
    }
    e.dataset_path = j.at("dataset").get<std::string>();
    return e;
}

SearchConfig load_search_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw bm::IoFailure("cannot open config: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw bm::UsageError("config is not valid JSON: " + std::string(e.what()));
    }
    SearchConfig c;
    c.model_a = j.at("models").at("a").get<std::string>();
    c.model_b = j.at("models").at("b").get<std::string>();
    if (j.at("models").contains("base") && !j["models"]["base"].is_null())
        c.base = j["models"]["base"].get<std::string>();
    if (j.contains("trace") && !j["trace"].is_null()) c.trace = j["trace"].get<std::string>();
    c.eval_a = parse_evaluator(j.at("evaluators").at("a"));
    c.eval_b = parse_evaluator(j.at("evaluators").at("b"));
    if (j.contains("budget")) {
        c.budget.init = j["budget"].value("init", 20);
        c.budget.iters = j["budget"].value("iters", 200);
        c.budget.pool = j["budget"].value("pool", 512);
    }
    c.seed = j.value("seed", std::uint64_t{0});
    c.segment = j.value("segment", std::string("trace"));
    return c;
}

bm::BlockPartition make_partition(const SearchConfig& c, const bm::TensorMap& model) {
    if (c.segment == "none") return bm::whole_model_partition(model);
    if (c.segment == "heuristic") return bm::heuristic_segment(model);
    if (c.segment == "trace") {
        if (c.trace.empty())
            throw bm::UsageError("segment mode 'trace' requires a trace path in the config");
        return bm::segment_from_trace(bm::read_trace(c.trace), model);
    }
    throw bm::UsageError("segment must be one of trace|heuristic|none, got: " + c.segment);
}

struct LoadedModels {
    bm::TensorMap a;
    bm::TensorMap b;
    std::optional<bm::TensorMap> base;
};

LoadedModels load_models(const SearchConfig& c) {
    LoadedModels m;
    m.a = bm::read_checkpoint(c.model_a);
    m.b = bm::read_checkpoint(c.model_b);
    if (!c.base.empty()) m.base = bm::read_checkpoint(c.base);
    return m;
}

bm::TrialRunner make_runner(const SearchConfig& c, const std::string& scratch_dir) {
    const double src_a = bm::evaluate_loss(c.eval_a, c.model_a, c.eval_a.dataset_path);
    const double src_b = bm::evaluate_loss(c.eval_b, c.model_b, c.eval_b.dataset_path);
    fs::create_directories(scratch_dir);
    return bm::TrialRunner(c.eval_a, c.eval_b, src_a, src_b,
                           (fs::path(scratch_dir) / "candidate.bt").string());
}

// ---- subcommands ----

int cmd_merge(const std::string& technique_name, double weight, double density, std::uint64_t seed,
              const std::string& a_path, const std::string& b_path, const std::string& base_path,
              const std::string& out_path, const std::string& spec_path,
              const std::string& data_a_path, const std::string& data_b_path) {
    const bm::Technique technique = bm::technique_from_name(technique_name);
    if (bm::technique_needs_base(technique) && base_path.empty())
        throw bm::MissingBase("technique " + technique_name + " requires --base");
    if (weight < 0.0 || weight > 1.0) throw bm::UsageError("--weight must be in [0,1]");
    if (density <= 0.0 || density > 1.0) throw bm::UsageError("--density must be in (0,1]");

    const bm::TensorMap a = bm::read_checkpoint(a_path);
    const bm::TensorMap b = bm::read_checkpoint(b_path);
    std::optional<bm::TensorMap> base;
    if (!base_path.empty()) base = bm::read_checkpoint(base_path);

    const bm::MergeParams params{technique, weight, density, seed};
    const bm::TensorMap merged = bm::merge_block(a, b, base ? &*base : nullptr, params);
    bm::write_checkpoint(merged, out_path);

    json summary = {{"out", out_path},
                    {"tensors", merged.size()},
                    {"technique", bm::technique_name(technique)},
                    {"weight", weight},
                    {"density", density},
                    {"seed", seed}};
    if (!spec_path.empty() && !data_a_path.empty() && !data_b_path.empty()) {
        const bm::ToyModelSpec spec = bm::read_toy_spec(spec_path);
        const bm::Dataset da = bm::read_dataset(data_a_path);
        const bm::Dataset db = bm::read_dataset(data_b_path);
        const double loss_sa = bm::forward_loss(spec, a, da);
        const double loss_sb = bm::forward_loss(spec, b, db);
        const double ap_a = bm::approximated_preservation(loss_sa, bm::forward_loss(spec, merged, da));
        const double ap_b = bm::approximated_preservation(loss_sb, bm::forward_loss(spec, merged, db));
        summary["ap_a"] = ap_a;
        summary["ap_b"] = ap_b;
        summary["f"] = bm::objective_f(ap_a, ap_b);
        summary["pd_ap"] = bm::preservation_discrepancy(ap_a, ap_b);
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_segment(const std::string& model_path, const std::string& trace_path, bool heuristic,
                const std::string& out_path) {
    if (!heuristic && trace_path.empty())
        throw bm::UsageError("segment requires --trace or --heuristic");
    const bm::TensorMap model = bm::read_checkpoint(model_path);
    const bm::BlockPartition p = heuristic
                                     ? bm::heuristic_segment(model)
                                     : bm::segment_from_trace(bm::read_trace(trace_path), model);
    if (out_path.empty()) {
        std::cout << bm::partition_to_json(p).dump() << "\n";
    } else {
        std::ofstream f(out_path);
        if (!f) throw bm::IoFailure("cannot open for writing: " + out_path);
        f << bm::partition_to_json(p).dump(2) << "\n";
    }
    return 0;
}

int cmd_search(const std::string& config_path, const std::string& out_dir,
               const std::string& init_split, bool keep_trials, bool whole_model) {
    const SearchConfig c = load_search_config(config_path);
    LoadedModels models = load_models(c);
    const bm::BlockPartition partition =
        whole_model ? bm::whole_model_partition(models.a) : make_partition(c, models.a);
    bm::TrialRunner runner = make_runner(c, out_dir);
    const bm::InitSplit split =
        init_split == "all" ? bm::InitSplit::FitAll : bm::InitSplit::HoldOutLast;
    bm::SearchOutputs outputs{out_dir, keep_trials};
    const bm::SearchResult result =
        bm::run_search(models.a, models.b, models.base ? &*models.base : nullptr, partition,
                       runner, c.budget, c.seed, split, &outputs);
    json summary = {{"out_dir", out_dir},
                    {"trials", result.history.size()},
                    {"best_f", result.best.f},
                    {"best_iteration", result.best.iteration},
                    {"merged", result.merged_model_path}};
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_grid(const std::string& config_path, const std::string& technique_name,
             const std::string& out_path) {
    const bm::Technique technique = bm::technique_from_name(technique_name);
    const SearchConfig c = load_search_config(config_path);
    if (bm::technique_needs_base(technique) && c.base.empty())
        throw bm::MissingBase("technique " + technique_name + " requires a base model in the config");
    LoadedModels models = load_models(c);
    const std::string scratch =
        (fs::temp_directory_path() / ("blockmerge-" + std::to_string(::getpid()))).string();
    bm::TrialRunner runner = make_runner(c, scratch);
    const auto records = bm::run_grid(technique, models.a, models.b,
                                      models.base ? &*models.base : nullptr, runner, c.seed);
    std::string csv = "weight,density,ap_a,ap_b,f\n";
    for (const auto& r : records) {
        const auto& blk = r.sample.blocks[0];
        csv += bm::format_double(blk.weight) + "," + bm::format_double(blk.density) + "," +
               bm::format_double(r.ap_a) + "," + bm::format_double(r.ap_b) + "," +
               bm::format_double(r.f) + "\n";
    }
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        std::ofstream f(out_path);
        if (!f) throw bm::IoFailure("cannot open for writing: " + out_path);
        f << csv;
    }
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& spec_path,
             const std::string& data_path) {
    bm::Evaluator e;
    e.kind = bm::Evaluator::Kind::Builtin;
    e.spec = bm::read_toy_spec(spec_path);
    const double loss = bm::evaluate_loss(e, model_path, data_path);
    std::cout << json{{"loss", loss}}.dump() << "\n";
    return 0;
}

int cmd_fixture(std::uint64_t seed, const std::string& out_dir, std::size_t samples,
                double delta_scale) {
    bm::FixtureOptions opt;
    opt.samples = samples;
    opt.delta_scale = delta_scale;
    const bm::TaskPairFixture fx = bm::generate_task_pair(seed, opt);
    bm::write_fixture(fx, out_dir);
    json summary = {{"out_dir", out_dir},
                    {"seed", seed},
                    {"samples", samples},
                    {"parameters", [&] {
                         std::uint64_t n = 0;
                         for (const auto& [name, t] : fx.base) n += t.numel();
                         return n;
                     }()}};
    std::cout << summary.dump() << "\n";
    return 0;
}

struct HistoryRow {
    int iteration = 0;
    double ap_a = 0.0;
    double ap_b = 0.0;
    double f = 0.0;
};

std::vector<HistoryRow> read_history_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw bm::IoFailure("cannot open history: " + path);
    std::vector<HistoryRow> rows;
    std::string line;
    if (!std::getline(f, line)) throw bm::DataError("empty history file: " + path);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        HistoryRow r;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &r.iteration, &r.ap_a, &r.ap_b, &r.f) != 4)
            throw bm::DataError("bad history row: " + line);
        rows.push_back(r);
    }
    if (rows.empty()) throw bm::DataError("history has no trials: " + path);
    return rows;
}

int cmd_report(const std::string& history_path, bool curve) {
    const auto rows = read_history_csv(history_path);
    if (curve) {
        std::cout << "iteration,best_f,ap_a,ap_b,pd_ap\n";
        const HistoryRow* best = &rows[0];
        for (const auto& r : rows) {
            if (r.f > best->f) best = &r;
            std::cout << r.iteration << ',' << bm::format_double(best->f) << ','
                      << bm::format_double(best->ap_a) << ',' << bm::format_double(best->ap_b)
                      << ',' << bm::format_double(bm::preservation_discrepancy(best->ap_a, best->ap_b))
                      << "\n";
        }
        return 0;
    }
    const HistoryRow* best = &rows[0];
    for (const auto& r : rows)
        if (r.f > best->f) best = &r;
    json summary = {{"trials", rows.size()},
                    {"best_iteration", best->iteration},
                    {"best_f", best->f},
                    {"ap_a", best->ap_a},
                    {"ap_b", best->ap_b},
                    {"pd_ap", bm::preservation_discrepancy(best->ap_a, best->ap_b)}};
    std::cout << summary.dump() << "\n";
    return 0;
}

void check_thread_cap() {
    // 0 means auto; the library currently runs single-threaded either way,
    // which trivially respects any cap.
    const char* v = std::getenv("BLOCKMERGE_THREADS");
    if (v == nullptr) return;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 0)
        throw bm::UsageError("BLOCKMERGE_THREADS must be a non-negative integer");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"block-wise model merging toolkit"};
    app.require_subcommand(1);

    std::string technique = "linear", a_path, b_path, base_path, out_path, spec_path;
    std::string data_a_path, data_b_path;
    double weight = 0.5, density = 0.65;
    std::uint64_t seed = 0;

    auto* merge = app.add_subcommand("merge", "merge two checkpoints with one technique");
    merge->add_option("--technique", technique, "linear|task-arithmetic|ties|dare-linear|dare-ties")
        ->required();
    merge->add_option("--weight", weight, "interpolation weight for model A in [0,1]");
    merge->add_option("--density", density, "keep fraction in (0,1] (ties/dare only)");
    merge->add_option("--seed", seed, "seed for DARE dropping");
    merge->add_option("--a", a_path, "model A checkpoint")->required();
    merge->add_option("--b", b_path, "model B checkpoint")->required();
    merge->add_option("--base", base_path, "base checkpoint (task-vector techniques)");
    merge->add_option("--out", out_path, "output checkpoint")->required();
    merge->add_option("--spec", spec_path, "toy model spec for an optional AP report");
    merge->add_option("--data-a", data_a_path, "task A dataset for the report");
    merge->add_option("--data-b", data_b_path, "task B dataset for the report");

    std::string model_path, trace_path;
    bool heuristic = false;
    auto* segment = app.add_subcommand("segment", "partition a model into blocks");
    segment->add_option("--model", model_path, "model checkpoint")->required();
    segment->add_option("--trace", trace_path, "shape trace JSON");
    segment->add_flag("--heuristic", heuristic, "segment by parameter rank instead of a trace");
    segment->add_option("--out", out_path, "partition JSON output (default: stdout)");

    std::string config_path, out_dir = "runs/latest", init_split = "holdout";
    bool keep_trials = false, whole_model = false;
    auto* search = app.add_subcommand("search", "run the block-wise configuration search");
    search->add_option("--config", config_path, "search config JSON")->required();
    search->add_option("--out-dir", out_dir, "output directory");
    search->add_option("--init-split", init_split,
                       "holdout (fit on first init-1, reuse the last) or all");
    search->add_flag("--keep-trials", keep_trials, "keep every per-trial merged model");
    search->add_flag("--whole-model", whole_model, "ablation: ignore segmentation");

    auto* grid = app.add_subcommand("grid", "exhaustive weight/density sweep for one technique");
    grid->add_option("--config", config_path, "search config JSON")->required();
    grid->add_option("--technique", technique, "technique to sweep")->required();
    grid->add_option("--out", out_path, "heatmap CSV output (default: stdout)");

    std::string eval_model, eval_data;
    std::vector<std::string> positionals;
    auto* eval = app.add_subcommand("eval", "compute a model's loss on a dataset");
    eval->add_option("--model", eval_model, "model checkpoint");
    eval->add_option("--spec", spec_path, "toy model spec JSON")->required();
    eval->add_option("--data", eval_data, "dataset file");
    eval->add_option("paths", positionals, "model and dataset paths (external-evaluator form)")
        ->expected(0, 2);

    std::size_t samples = 256;
    double delta_scale = 1.0;
    auto* fixture = app.add_subcommand("fixture", "generate a synthetic task pair");
    fixture->add_option("--seed", seed, "fixture seed");
    fixture->add_option("--out-dir", out_dir, "output directory")->required();
    fixture->add_option("--samples", samples, "validation samples per task");
    fixture->add_option("--delta-scale", delta_scale, "task delta magnitude (0 = degenerate)");

    std::string history_path;
    bool curve = false;
    auto* report = app.add_subcommand("report", "summarize a search history");
    report->add_option("--history", history_path, "history.csv from a search run")->required();
    report->add_flag("--curve", curve, "emit the best-so-far curve as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        check_thread_cap();
        if (merge->parsed())
            return cmd_merge(technique, weight, density, seed, a_path, b_path, base_path, out_path,
                             spec_path, data_a_path, data_b_path);
        if (segment->parsed()) return cmd_segment(model_path, trace_path, heuristic, out_path);
        if (search->parsed())
            return cmd_search(config_path, out_dir, init_split, keep_trials, whole_model);
        if (grid->parsed()) return cmd_grid(config_path, technique, out_path);
        if (eval->parsed()) {
            std::string m = eval_model, d = eval_data;
            for (const auto& p : positionals) {
                if (m.empty()) m = p;
                else if (d.empty()) d = p;
                else throw bm::UsageError("eval takes at most a model and a dataset path");
            }
            if (m.empty() || d.empty())
                throw bm::UsageError("eval needs a model and a dataset (--model/--data or positional)");
            return cmd_eval(m, spec_path, d);
        }
        if (fixture->parsed()) return cmd_fixture(seed, out_dir, samples, delta_scale);
        if (report->parsed()) return cmd_report(history_path, curve);
    } catch (const bm::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const bm::EvaluatorError& e) {
        std::cerr << "evaluator error: " << e.what() << "\n";
        return 3;
    } catch (const bm::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
