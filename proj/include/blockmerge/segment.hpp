#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "blockmerge/tensor.hpp"
#include "json.hpp"

namespace blockmerge {

// Ordered record of module executions from one probe inference.
struct TraceStep {
    std::string module_id;
    std::vector<std::string> param_names;
    std::vector<std::uint64_t> output_shape;
};

struct ShapeTrace {
    std::vector<TraceStep> steps;
};

enum class BlockLabel : std::uint8_t { Rank4Spatial, Rank3Sequence, Rank2Vector, Other };

inline const char* block_label_name(BlockLabel l) {
    switch (l) {
        case BlockLabel::Rank4Spatial: return "rank4_spatial";
        case BlockLabel::Rank3Sequence: return "rank3_sequence";
        case BlockLabel::Rank2Vector: return "rank2_vector";
        case BlockLabel::Other: return "other";
    }
    return "?";
}

inline BlockLabel block_label_from_name(const std::string& s) {
    if (s == "rank4_spatial") return BlockLabel::Rank4Spatial;
    if (s == "rank3_sequence") return BlockLabel::Rank3Sequence;
    if (s == "rank2_vector") return BlockLabel::Rank2Vector;
    if (s == "other") return BlockLabel::Other;
    throw DataError("unknown block label: " + s);
}

struct Block {
    BlockLabel label = BlockLabel::Other;
    std::vector<std::string> param_names;
};

// Ordered disjoint blocks covering every model parameter. Parameters never
// observed in the trace land in `residual`, which is also appended to
// `blocks` as a trailing Other block so merging covers the whole model.
struct BlockPartition {
    std::vector<Block> blocks;
    std::vector<std::string> residual;
};

inline BlockLabel classify_rank(std::size_t rank) {
    switch (rank) {
        case 4: return BlockLabel::Rank4Spatial;
        case 3: return BlockLabel::Rank3Sequence;
        case 2: return BlockLabel::Rank2Vector;
        default: return BlockLabel::Other;
    }
}

// A new block starts at every step whose output-rank class differs from the
// previous step's class. The batch extent is not special-cased; only the
// rank of the recorded shape matters.
inline BlockPartition segment_from_trace(const ShapeTrace& trace, const TensorMap& model) {
    BlockPartition p;
    std::set<std::string> seen;
    for (const auto& step : trace.steps) {
        if (step.output_shape.empty()) throw DataError("trace step has empty output_shape");
        const BlockLabel label = classify_rank(step.output_shape.size());
        for (const auto& name : step.param_names) {
            if (!model.contains(name))
                throw UnknownParameter("trace names a parameter not in the model: " + name);
            if (!seen.insert(name).second)
                throw DataError("parameter appears in more than one trace step: " + name);
        }
        if (p.blocks.empty() || p.blocks.back().label != label)
            p.blocks.push_back(Block{label, {}});
        auto& names = p.blocks.back().param_names;
        names.insert(names.end(), step.param_names.begin(), step.param_names.end());
    }
    // drop blocks that ended up with no parameters (transition-only steps)
    std::vector<Block> kept;
    for (auto& b : p.blocks)
        if (!b.param_names.empty()) kept.push_back(std::move(b));
    p.blocks = std::move(kept);

    for (const auto& [name, t] : model)
        if (!seen.count(name)) p.residual.push_back(name);
    if (!p.residual.empty()) p.blocks.push_back(Block{BlockLabel::Other, p.residual});
    if (p.blocks.empty()) p.blocks.push_back(Block{BlockLabel::Other, {}});
    return p;
}

// Fallback when no trace is available: group consecutive parameters (in
// checkpoint order) by the rank class of the parameter tensor itself.
inline BlockPartition heuristic_segment(const TensorMap& model) {
    BlockPartition p;
    for (const auto& [name, t] : model) {
        const BlockLabel label =
            t.shape.size() == 4 ? BlockLabel::Rank4Spatial : BlockLabel::Rank2Vector;
        if (p.blocks.empty() || p.blocks.back().label != label)
            p.blocks.push_back(Block{label, {}});
        p.blocks.back().param_names.push_back(name);
    }
    if (p.blocks.empty()) p.blocks.push_back(Block{BlockLabel::Other, {}});
    return p;
}

// Whole model as a single block; used when segmentation is disabled.
inline BlockPartition whole_model_partition(const TensorMap& model) {
    BlockPartition p;
    p.blocks.push_back(Block{BlockLabel::Other, model.names()});
    return p;
}

inline TensorMap slice(const TensorMap& model, const std::vector<std::string>& names) {
    TensorMap out;
    for (const auto& n : names) out.add(n, model.at(n));
    return out;
}

struct AlignedBlockPair {
    Block block;
    TensorMap theta_a;
    TensorMap theta_b;
};

// Slices both models by the shared partition into aligned merge units.
inline std::vector<AlignedBlockPair> align_blocks(const BlockPartition& p, const TensorMap& model_a,
                                                  const TensorMap& model_b) {
    require_same_signature(model_a, model_b, "align_blocks");
    std::vector<AlignedBlockPair> out;
    out.reserve(p.blocks.size());
    for (const auto& b : p.blocks)
        out.push_back(AlignedBlockPair{b, slice(model_a, b.param_names), slice(model_b, b.param_names)});
    return out;
}

// ---- JSON interchange ----

inline ShapeTrace trace_from_json(const nlohmann::json& j) {
    ShapeTrace t;
    if (!j.is_object() || !j.contains("steps") || !j["steps"].is_array())
        throw DataError("shape trace JSON must be {\"steps\": [...]}");
    for (const auto& s : j["steps"]) {
        TraceStep step;
        step.module_id = s.value("module_id", "");
        if (s.contains("param_names"))
            step.param_names = s["param_names"].get<std::vector<std::string>>();
        if (!s.contains("output_shape") || !s["output_shape"].is_array())
            throw DataError("trace step missing output_shape");
        step.output_shape = s["output_shape"].get<std::vector<std::uint64_t>>();
        t.steps.push_back(std::move(step));
    }
    return t;
}

inline nlohmann::json trace_to_json(const ShapeTrace& t) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : t.steps)
        steps.push_back({{"module_id", s.module_id},
                         {"param_names", s.param_names},
                         {"output_shape", s.output_shape}});
    return {{"steps", steps}};
}

inline ShapeTrace read_trace(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoFailure("cannot open trace: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("trace is not valid JSON: " + std::string(e.what()));
    }
    return trace_from_json(j);
}

inline nlohmann::json partition_to_json(const BlockPartition& p) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : p.blocks)
        blocks.push_back({{"label", block_label_name(b.label)}, {"param_names", b.param_names}});
    return {{"blocks", blocks}, {"residual", p.residual}};
}

inline BlockPartition partition_from_json(const nlohmann::json& j) {
    BlockPartition p;
    for (const auto& b : j.at("blocks")) {
        Block blk;
        blk.label = block_label_from_name(b.at("label").get<std::string>());
        blk.param_names = b.at("param_names").get<std::vector<std::string>>();
        p.blocks.push_back(std::move(blk));
    }
    if (j.contains("residual")) p.residual = j["residual"].get<std::vector<std::string>>();
    return p;
}

}  // namespace blockmerge
