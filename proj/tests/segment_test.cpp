#include <gtest/gtest.h>

#include <set>

#include "blockmerge/segment.hpp"
#include "test_util.hpp"

using namespace blockmerge;

namespace {

TensorMap model_with(const std::vector<std::pair<std::string, std::vector<std::uint64_t>>>& names) {
    TensorMap m;
    for (const auto& [name, shape] : names) {
        Tensor t;
        t.shape = shape;
        t.data.assign(t.numel(), 0.5f);
        m.add(name, std::move(t));
    }
    return m;
}

std::set<std::string> all_partition_names(const BlockPartition& p) {
    std::set<std::string> out;
    for (const auto& b : p.blocks) out.insert(b.param_names.begin(), b.param_names.end());
    return out;
}

}  // namespace

TEST(SegmentFromTrace, ConvAttnHeadSplitsAtRankTransitions) {
    const TensorMap model = model_with({{"conv1.w", {64, 3, 3, 3}},
                                        {"conv2.w", {64, 64, 3, 3}},
                                        {"attn.w", {128, 128}},
                                        {"head.w", {10, 128}}});
    ShapeTrace trace;
    trace.steps = {{"conv1", {"conv1.w"}, {8, 3, 32, 32}},
                   {"conv2", {"conv2.w"}, {8, 64, 16, 16}},
                   {"attn", {"attn.w"}, {8, 49, 128}},
                   {"head", {"head.w"}, {8, 128}}};
    const BlockPartition p = segment_from_trace(trace, model);
    ASSERT_EQ(p.blocks.size(), 3u);
    EXPECT_EQ(p.blocks[0].label, BlockLabel::Rank4Spatial);
    EXPECT_EQ(p.blocks[0].param_names, (std::vector<std::string>{"conv1.w", "conv2.w"}));
    EXPECT_EQ(p.blocks[1].label, BlockLabel::Rank3Sequence);
    EXPECT_EQ(p.blocks[1].param_names, (std::vector<std::string>{"attn.w"}));
    EXPECT_EQ(p.blocks[2].label, BlockLabel::Rank2Vector);
    EXPECT_EQ(p.blocks[2].param_names, (std::vector<std::string>{"head.w"}));
    EXPECT_TRUE(p.residual.empty());
}

TEST(SegmentFromTrace, PureTransformerIsOneBlock) {
    const TensorMap model = model_with({{"l0.w", {16, 16}}, {"l1.w", {16, 16}}, {"l2.w", {16, 16}}});
    ShapeTrace trace;
    trace.steps = {{"l0", {"l0.w"}, {2, 12, 16}},
                   {"l1", {"l1.w"}, {2, 12, 16}},
                   {"l2", {"l2.w"}, {2, 12, 16}}};
    const BlockPartition p = segment_from_trace(trace, model);
    ASSERT_EQ(p.blocks.size(), 1u);
    EXPECT_EQ(p.blocks[0].label, BlockLabel::Rank3Sequence);
    EXPECT_EQ(p.blocks[0].param_names.size(), 3u);
}

TEST(SegmentFromTrace, EmptyTraceFallsBackToSingleOtherBlock) {
    const TensorMap model = model_with({{"a", {2}}, {"b", {3}}});
    const BlockPartition p = segment_from_trace(ShapeTrace{}, model);
    ASSERT_EQ(p.blocks.size(), 1u);
    EXPECT_EQ(p.blocks[0].label, BlockLabel::Other);
    EXPECT_EQ(p.blocks[0].param_names, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(p.residual, (std::vector<std::string>{"a", "b"}));
}

TEST(SegmentFromTrace, UntracedParametersFormResidualBlock) {
    const TensorMap model =
        model_with({{"conv.w", {4, 4, 3, 3}}, {"emb.w", {100, 8}}, {"norm.g", {8}}});
    ShapeTrace trace;
    trace.steps = {{"conv", {"conv.w"}, {1, 4, 8, 8}}};
    const BlockPartition p = segment_from_trace(trace, model);
    ASSERT_EQ(p.blocks.size(), 2u);
    EXPECT_EQ(p.blocks[1].label, BlockLabel::Other);
    EXPECT_EQ(p.blocks[1].param_names, (std::vector<std::string>{"emb.w", "norm.g"}));
    EXPECT_EQ(p.residual, p.blocks[1].param_names);
}

TEST(SegmentFromTrace, UnknownParameterRejected) {
    const TensorMap model = model_with({{"a", {2}}});
    ShapeTrace trace;
    trace.steps = {{"m", {"ghost"}, {1, 2}}};
    EXPECT_THROW(segment_from_trace(trace, model), UnknownParameter);
}

TEST(SegmentFromTrace, DuplicateParameterRejected) {
    const TensorMap model = model_with({{"a", {2}}});
    ShapeTrace trace;
    trace.steps = {{"m1", {"a"}, {1, 2}}, {"m2", {"a"}, {1, 2}}};
    EXPECT_THROW(segment_from_trace(trace, model), DataError);
}

TEST(SegmentFromTrace, DeterministicAndOrdered) {
    SplitMix64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        TensorMap model;
        ShapeTrace trace;
        const int steps = 1 + static_cast<int>(rng.next_below(8));
        for (int i = 0; i < steps; ++i) {
            const std::string name = "p" + std::to_string(i);
            Tensor t;
            t.shape = {2};
            t.data = {0.f, 0.f};
            model.add(name, std::move(t));
            std::vector<std::uint64_t> shape(1 + rng.next_below(5), 2);
            trace.steps.push_back({"m" + std::to_string(i), {name}, shape});
        }
        const BlockPartition p1 = segment_from_trace(trace, model);
        const BlockPartition p2 = segment_from_trace(trace, model);
        ASSERT_EQ(p1.blocks.size(), p2.blocks.size());
        std::vector<std::string> flattened;
        for (std::size_t b = 0; b < p1.blocks.size(); ++b) {
            EXPECT_EQ(p1.blocks[b].label, p2.blocks[b].label);
            EXPECT_EQ(p1.blocks[b].param_names, p2.blocks[b].param_names);
            flattened.insert(flattened.end(), p1.blocks[b].param_names.begin(),
                             p1.blocks[b].param_names.end());
        }
        // order respects trace order
        EXPECT_EQ(flattened, model.names());
    }
}

TEST(SegmentFromTrace, CompletenessOnRandomModels) {
    SplitMix64 rng(32);
    for (int trial = 0; trial < 100; ++trial) {
        TensorMap model;
        const int params = 1 + static_cast<int>(rng.next_below(10));
        for (int i = 0; i < params; ++i) {
            Tensor t;
            t.shape = {1 + rng.next_below(3)};
            t.data.assign(t.numel(), 0.f);
            model.add("p" + std::to_string(i), std::move(t));
        }
        // trace covers a random prefix of parameters
        ShapeTrace trace;
        const int covered = static_cast<int>(rng.next_below(params + 1));
        for (int i = 0; i < covered; ++i)
            trace.steps.push_back({"m" + std::to_string(i),
                                   {"p" + std::to_string(i)},
                                   std::vector<std::uint64_t>(1 + rng.next_below(5), 2)});
        const BlockPartition p = segment_from_trace(trace, model);
        const auto names = all_partition_names(p);
        EXPECT_EQ(names.size(), static_cast<std::size_t>(params));
        std::size_t total = 0;
        for (const auto& b : p.blocks) total += b.param_names.size();
        EXPECT_EQ(total, static_cast<std::size_t>(params));  // disjoint cover
    }
}

TEST(HeuristicSegment, GroupsByParameterRank) {
    const TensorMap model = model_with(
        {{"c1", {4, 3, 3, 3}}, {"c2", {8, 4, 3, 3}}, {"fc", {10, 32}}});
    const BlockPartition p = heuristic_segment(model);
    ASSERT_EQ(p.blocks.size(), 2u);
    EXPECT_EQ(p.blocks[0].label, BlockLabel::Rank4Spatial);
    EXPECT_EQ(p.blocks[0].param_names.size(), 2u);
    EXPECT_EQ(p.blocks[1].label, BlockLabel::Rank2Vector);
}

TEST(HeuristicSegment, AllFlatIsOneBlock) {
    const TensorMap model = model_with({{"a", {4, 4}}, {"b", {4}}, {"c", {2, 2}}});
    const BlockPartition p = heuristic_segment(model);
    ASSERT_EQ(p.blocks.size(), 1u);
    EXPECT_EQ(p.blocks[0].label, BlockLabel::Rank2Vector);
}

TEST(HeuristicSegment, BlockCountEqualsClassChangesPlusOne) {
    SplitMix64 rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        TensorMap model;
        const int params = 1 + static_cast<int>(rng.next_below(12));
        int changes = 0;
        bool prev_is_conv = false;
        for (int i = 0; i < params; ++i) {
            const bool is_conv = rng.next_below(2) == 0;
            Tensor t;
            t.shape = is_conv ? std::vector<std::uint64_t>{2, 2, 3, 3}
                              : std::vector<std::uint64_t>{4, 4};
            t.data.assign(t.numel(), 0.f);
            model.add("p" + std::to_string(i), std::move(t));
            if (i > 0 && is_conv != prev_is_conv) ++changes;
            prev_is_conv = is_conv;
        }
        const BlockPartition p = heuristic_segment(model);
        EXPECT_EQ(p.blocks.size(), static_cast<std::size_t>(changes + 1));
    }
}

TEST(AlignBlocks, PairsMatchShapesAndCoverModels) {
    const TensorMap a = model_with({{"c.w", {2, 2, 3, 3}}, {"f.w", {4, 8}}, {"f.b", {4}}});
    TensorMap b;
    for (const auto& [name, t] : a) {
        Tensor u = t;
        for (auto& v : u.data) v += 1.0f;
        b.add(name, std::move(u));
    }
    ShapeTrace trace;
    trace.steps = {{"c", {"c.w"}, {1, 2, 4, 4}}, {"f", {"f.w", "f.b"}, {1, 4}}};
    const BlockPartition p = segment_from_trace(trace, a);
    const auto pairs = align_blocks(p, a, b);
    ASSERT_EQ(pairs.size(), p.blocks.size());
    std::set<std::string> covered;
    for (const auto& pr : pairs) {
        EXPECT_TRUE(signature(pr.theta_a) == signature(pr.theta_b));
        for (const auto& [name, t] : pr.theta_a) covered.insert(name);
    }
    EXPECT_EQ(covered.size(), a.size());
}

TEST(AlignBlocks, SignatureMismatchRejected) {
    const TensorMap a = model_with({{"x", {2}}});
    const TensorMap b = model_with({{"x", {3}}});
    EXPECT_THROW(align_blocks(whole_model_partition(a), a, b), SignatureMismatch);
}

TEST(PartitionJson, RoundTrips) {
    const TensorMap model = model_with({{"c", {2, 2, 3, 3}}, {"f", {4, 4}}});
    const BlockPartition p = heuristic_segment(model);
    const BlockPartition back = partition_from_json(partition_to_json(p));
    ASSERT_EQ(back.blocks.size(), p.blocks.size());
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        EXPECT_EQ(back.blocks[i].label, p.blocks[i].label);
        EXPECT_EQ(back.blocks[i].param_names, p.blocks[i].param_names);
    }
}

TEST(TraceJson, RoundTripsAndValidates) {
    ShapeTrace t;
    t.steps = {{"m", {"a", "b"}, {1, 2, 3}}};
    const ShapeTrace back = trace_from_json(trace_to_json(t));
    ASSERT_EQ(back.steps.size(), 1u);
    EXPECT_EQ(back.steps[0].module_id, "m");
    EXPECT_EQ(back.steps[0].param_names, t.steps[0].param_names);
    EXPECT_EQ(back.steps[0].output_shape, t.steps[0].output_shape);
    EXPECT_THROW(trace_from_json(nlohmann::json{{"nope", 1}}), DataError);
}
